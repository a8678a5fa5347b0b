"""Text formats for workload graphs (``workload.spec``) and computation chains
(``chain.spec``), plus structural validation of a chain against a graph.

Workload grammar, one directive per line, ``#`` starts a comment::

    param <key>=<value>
    node <name>
      timer <period_ms> <callback> [reads=<topic>]
      sub <topic> <callback> [keep_last=<n>] [best_effort|reliable]
      pub <topic> <bytes> on <callback>
      compute fixed <ms> | uniform <lo_ms> <hi_ms> | lognormal <mu> <sigma>
    module <name>: node,node,...

Chain grammar: one ``Node::(Sig)`` per line (optionally prefixed by a row
label such as ``(3)``), empty parentheses mark a timer hop. Optional trailing
``in=<topic>`` / ``out=<topic>`` annotations pin topics, and a
``sensor <topic>`` line names the sensor topic explicitly.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation
from typing import Optional

from .model import (
    BEST_EFFORT,
    RELIABLE,
    ChainHop,
    ChainSpec,
    ComputeModel,
    ModelError,
    ModuleManifest,
    NodeSpec,
    PublicationSpec,
    QosPolicy,
    SubscriptionSpec,
    TimerSpec,
    WorkloadSpec,
    is_identifier,
)


class ConfigError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


def ms_to_ns(text: str) -> int:
    try:
        value = Decimal(text)
    except InvalidOperation:
        raise ValueError(f"not a number: {text!r}") from None
    if not value.is_finite():
        raise ValueError(f"not a finite number: {text!r}")
    return int((value * 1_000_000).to_integral_value())


def ns_to_ms(ns: int) -> str:
    text = format(Decimal(ns).scaleb(-6).normalize(), "f")
    return text


# -- workload.spec -----------------------------------------------------------


@dataclass
class _NodeDraft:
    name: str
    line: int
    timers: list = field(default_factory=list)
    subs: list = field(default_factory=list)
    pubs: list = field(default_factory=list)  # (topic, size, callback, line)
    compute: ComputeModel = field(default_factory=ComputeModel)


def _tokens(raw: str) -> list[tuple[str, int]]:
    """Split a line into (token, 1-based column) pairs."""
    return [(m.group(0), m.start() + 1) for m in re.finditer(r"\S+", raw)]


def parse_workload_spec(text: str) -> WorkloadSpec:
    drafts: list[_NodeDraft] = []
    names: dict[str, int] = {}
    modules: list[tuple[str, tuple[str, ...]]] = []
    params: dict[str, str] = {}
    current: Optional[_NodeDraft] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = _tokens(line)
        if not toks:
            continue
        head, col = toks[0]
        args = toks[1:]

        def err(msg: str, at: Optional[int] = None) -> ConfigError:
            return ConfigError(msg, lineno, at if at is not None else col)

        if head == "node":
            if len(args) != 1:
                raise err("expected: node <name>")
            name, ncol = args[0]
            if not is_identifier(name):
                raise err(f"invalid node name {name!r}", ncol)
            if name in names:
                raise err(f"duplicate node name {name!r} (first declared on line {names[name]})", ncol)
            names[name] = lineno
            current = _NodeDraft(name, lineno)
            drafts.append(current)
        elif head == "param":
            current = None
            rest = line[col - 1 + len("param"):].strip()
            if "=" not in rest:
                raise err("expected: param <key>=<value>")
            key, value = (s.strip() for s in rest.split("=", 1))
            if not key:
                raise err("empty parameter key")
            params[key] = value
        elif head == "module":
            current = None
            rest = line[col - 1 + len("module"):]
            if ":" not in rest:
                raise err("expected: module <name>: node,node,...")
            mname, members = rest.split(":", 1)
            mname = mname.strip()
            if not is_identifier(mname):
                raise err(f"invalid module name {mname!r}")
            if mname in (m for m, _ in modules):
                raise err(f"duplicate module {mname!r}")
            nodes = tuple(m.strip() for m in members.split(",") if m.strip())
            modules.append((mname, nodes))
        elif head in ("timer", "sub", "pub", "compute"):
            if current is None:
                raise err(f"'{head}' outside of a node block")
            _parse_node_line(current, head, args, lineno, col)
        else:
            raise err(f"unknown field {head!r}")

    nodes = []
    for d in drafts:
        timer_names = {t.callback for t in d.timers}
        pubs = []
        for topic, size, cb, pline in d.pubs:
            if cb not in timer_names and cb not in {s.callback for s in d.subs}:
                raise ConfigError(f"publication {topic!r} triggered by undeclared callback {cb!r}", pline)
            try:
                pubs.append(PublicationSpec(topic, size, cb, on_timer=cb in timer_names))
            except ModelError as exc:
                raise ConfigError(str(exc), pline) from None
        try:
            nodes.append(NodeSpec(d.name, tuple(d.timers), tuple(d.subs), tuple(pubs), d.compute))
        except ModelError as exc:
            raise ConfigError(str(exc), d.line) from None
    try:
        return WorkloadSpec(tuple(nodes), ModuleManifest(tuple(modules), params))
    except ModelError as exc:
        raise ConfigError(str(exc)) from None


def _parse_node_line(node: _NodeDraft, head: str, args: list, lineno: int, col: int) -> None:
    vals = [a for a, _ in args]

    def err(msg: str) -> ConfigError:
        return ConfigError(msg, lineno, col)

    try:
        if head == "timer":
            if len(vals) not in (2, 3):
                raise err("expected: timer <period_ms> <callback> [reads=<topic>]")
            reads = None
            if len(vals) == 3:
                if not vals[2].startswith("reads="):
                    raise err(f"unknown timer option {vals[2]!r}")
                reads = vals[2][len("reads="):]
            node.timers.append(TimerSpec(ms_to_ns(vals[0]), vals[1], reads))
        elif head == "sub":
            if len(vals) < 2:
                raise err("expected: sub <topic> <callback> [keep_last=<n>] [best_effort|reliable]")
            depth, reliability = 1, BEST_EFFORT
            for opt in vals[2:]:
                if opt.startswith("keep_last="):
                    depth = int(opt[len("keep_last="):])
                elif opt in (BEST_EFFORT, RELIABLE):
                    reliability = opt
                else:
                    raise err(f"unknown subscription option {opt!r}")
            node.subs.append(SubscriptionSpec(vals[0], vals[1], QosPolicy(depth, reliability)))
        elif head == "pub":
            if len(vals) != 4 or vals[2] != "on":
                raise err("expected: pub <topic> <bytes> on <callback>")
            node.pubs.append((vals[0], int(vals[1]), vals[3], lineno))
        elif head == "compute":
            if not vals:
                raise err("expected: compute fixed|uniform|lognormal <params>")
            kind, p = vals[0], vals[1:]
            if kind == "fixed" and len(p) == 1:
                node.compute = ComputeModel.fixed(ms_to_ns(p[0]))
            elif kind == "uniform" and len(p) == 2:
                node.compute = ComputeModel.uniform(ms_to_ns(p[0]), ms_to_ns(p[1]))
            elif kind == "lognormal" and len(p) == 2:
                node.compute = ComputeModel.lognormal(float(p[0]), float(p[1]))
            else:
                raise err(f"bad compute specification {' '.join(vals)!r}")
    except ModelError as exc:
        raise err(str(exc)) from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise err(str(exc)) from None


def render_workload_spec(spec: WorkloadSpec) -> str:
    out: list[str] = []
    for key, value in spec.manifest.launch_params.items():
        out.append(f"param {key}={value}")
    for node in spec.nodes:
        out.append(f"node {node.name}")
        for t in node.timers:
            extra = f" reads={t.reads}" if t.reads is not None else ""
            out.append(f"  timer {ns_to_ms(t.period_ns)} {t.callback}{extra}")
        for s in node.subscriptions:
            out.append(f"  sub {s.topic} {s.callback} keep_last={s.qos.depth} {s.qos.reliability}")
        for p in node.publications:
            out.append(f"  pub {p.topic} {p.payload_size} on {p.callback}")
        c = node.compute
        if c.kind == "lognormal":
            out.append(f"  compute lognormal {c.params[0]!r} {c.params[1]!r}")
        else:
            out.append(f"  compute {c.kind} " + " ".join(ns_to_ms(v) for v in c.params))
    for name, members in spec.manifest.modules:
        out.append(f"module {name}: {','.join(members)}")
    return "\n".join(out) + "\n"


# -- chain.spec --------------------------------------------------------------

_HOP_RE = re.compile(
    r"^(?:\(\d+\)\s*)?(?P<node>[A-Za-z_][\w./~-]*)::\((?P<sig>[^)]*)\)(?P<rest>.*)$"
)


def parse_chain_spec(text: str) -> ChainSpec:
    hops: list[ChainHop] = []
    sensor: Optional[str] = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("sensor ") or line == "sensor":
            parts = line.split()
            if len(parts) != 2 or not is_identifier(parts[1]):
                raise ConfigError("expected: sensor <topic>", lineno)
            sensor = parts[1]
            continue
        m = _HOP_RE.match(line)
        if m is None:
            raise ConfigError(f"malformed chain line {line!r}", lineno)
        sig = m.group("sig").strip()
        topic = out = None
        for opt in m.group("rest").split():
            if opt.startswith("in="):
                topic = opt[3:]
            elif opt.startswith("out="):
                out = opt[4:]
            else:
                raise ConfigError(f"unknown hop annotation {opt!r}", lineno)
        node = m.group("node")
        if not sig:
            if not hops or hops[-1].node != node:
                raise ConfigError(f"timer hop {node}::() has no same-node predecessor", lineno)
            if topic is not None:
                raise ConfigError("timer hops take no input topic", lineno)
            hops.append(ChainHop(node, "timer", "", None, out))
        else:
            hops.append(ChainHop(node, "subscription", sig, topic, out))
    if not hops:
        raise ConfigError("chain has no hops")
    return ChainSpec(tuple(hops), sensor)


def render_chain_spec(chain: ChainSpec, annotate: bool = False) -> str:
    out = []
    if chain.sensor_topic is not None and annotate:
        out.append(f"sensor {chain.sensor_topic}")
    for i, hop in enumerate(chain.hops):
        line = f"({i}) {hop.node}::({hop.signature})"
        if annotate:
            if hop.topic and not hop.is_timer:
                line += f" in={hop.topic}"
            if hop.output_topic:
                line += f" out={hop.output_topic}"
        out.append(line)
    return "\n".join(out) + "\n"


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class Finding:
    severity: str  # "fatal" | "warning"
    code: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]
    chain: Optional[ChainSpec]
    resolved_hops: int

    @property
    def valid(self) -> bool:
        return not any(f.severity == "fatal" for f in self.findings)

    @property
    def fatal(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "fatal"]

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.severity == "warning"]


def validate_graph(spec: WorkloadSpec, chain: Optional[ChainSpec] = None) -> ValidationReport:
    """Check graph connectivity and resolve every chain hop to a callback.

    Never raises; all problems are returned as findings.
    """
    findings: list[Finding] = []
    published: dict[str, list[str]] = {}
    subscribed: dict[str, list[str]] = {}
    for node in spec.nodes:
        for p in node.publications:
            published.setdefault(p.topic, []).append(node.name)
        for s in node.subscriptions:
            subscribed.setdefault(s.topic, []).append(node.name)
        for t in node.timers:
            reads = node.timer_reads(t)
            if t.reads is not None and reads not in {s.topic for s in node.subscriptions}:
                findings.append(Finding("warning", "timer-reads-unsubscribed",
                                        f"{node.name}.{t.callback} reads {reads!r} it does not subscribe"))
    for topic in sorted(subscribed):
        if topic not in published:
            findings.append(Finding("warning", "dangling-subscription",
                                    f"{', '.join(subscribed[topic])} subscribe {topic!r} which nobody publishes"))
    for topic in sorted(published):
        if topic not in subscribed:
            findings.append(Finding("warning", "unreachable-topic",
                                    f"{topic!r} published by {', '.join(published[topic])} has no subscriber"))

    resolved = None
    count = 0
    if chain is not None:
        resolved, count, chain_findings = _resolve(spec, chain, published)
        findings.extend(chain_findings)
    return ValidationReport(tuple(findings), resolved, count)


def resolve_chain(spec: WorkloadSpec, chain: ChainSpec) -> ChainSpec:
    """Resolve hop topics against the graph, raising ConfigError on any fatal finding."""
    report = validate_graph(spec, chain)
    if not report.valid:
        raise ConfigError("; ".join(f.message for f in report.fatal))
    return report.chain


def _resolve(spec: WorkloadSpec, chain: ChainSpec, published: dict) -> tuple:
    findings: list[Finding] = []

    def fatal(code: str, msg: str) -> None:
        findings.append(Finding("fatal", code, msg))

    hops = list(chain.hops)
    nodes = {n.name: n for n in spec.nodes}
    sensor = chain.sensor_topic
    callbacks: list[Optional[str]] = [None] * len(hops)
    topics: list[Optional[str]] = [h.topic for h in hops]

    for i, hop in enumerate(hops):
        node = nodes.get(hop.node)
        if node is None:
            fatal("undeclared-node", f"hop {i}: node {hop.node!r} is not declared")
            continue
        if hop.is_timer:
            prev_topic = topics[i - 1]
            candidates = [t for t in node.timers if prev_topic is None or node.timer_reads(t) == prev_topic]
            if len(candidates) != 1:
                fatal("unresolved-timer",
                      f"hop {i}: {hop.node} has {len(candidates)} timers reading {prev_topic!r}")
                continue
            callbacks[i] = candidates[0].callback
            continue
        sub_topics = [s.topic for s in node.subscriptions]
        topic = topics[i]
        if topic is None:
            if i == 0:
                if sensor is not None:
                    topic = sensor
                elif len(sub_topics) == 1:
                    topic = sub_topics[0]
            else:
                prev_node = nodes.get(hops[i - 1].node)
                prev_cb = callbacks[i - 1]
                if prev_node is not None and prev_cb is not None:
                    pubs = {p.topic for p in prev_node.publications_of(prev_cb)}
                    if hops[i - 1].output_topic is not None:
                        pubs &= {hops[i - 1].output_topic}
                    linked = [t for t in sub_topics if t in pubs]
                    if len(linked) == 1:
                        topic = linked[0]
                    elif len(linked) > 1:
                        fatal("ambiguous-link", f"hop {i}: {hop.node} subscribes several outputs of hop {i - 1}")
                        continue
        if topic is None or topic not in sub_topics:
            fatal("unresolved-subscription",
                  f"hop {i}: cannot resolve the subscription of {hop.node}::({hop.signature})")
            continue
        topics[i] = topic
        callbacks[i] = next(s.callback for s in node.subscriptions if s.topic == topic)

    if sensor is None and hops and topics[0] is not None and not hops[0].is_timer:
        sensor = topics[0]
    if sensor is not None and sensor not in published:
        fatal("sensor-unpublished", f"sensor topic {sensor!r} has no publisher")

    outputs: list[Optional[str]] = [None] * len(hops)
    for i, hop in enumerate(hops):
        if callbacks[i] is None:
            continue
        pubs = [p.topic for p in nodes[hop.node].publications_of(callbacks[i])]
        if i + 1 < len(hops):
            nxt = hops[i + 1]
            if nxt.is_timer:
                if hop.output_topic is not None:
                    fatal("bad-output", f"hop {i}: output topic given but hop {i + 1} is a same-node timer")
                continue
            if topics[i + 1] is None:
                continue
            if topics[i + 1] not in pubs:
                fatal("disconnected", f"hop {i} ({hop.node}) does not publish {topics[i + 1]!r}")
                continue
            if hop.output_topic is not None and hop.output_topic != topics[i + 1]:
                fatal("bad-output", f"hop {i}: annotated output {hop.output_topic!r} != {topics[i + 1]!r}")
                continue
            outputs[i] = topics[i + 1]
        else:
            if hop.output_topic is not None:
                if hop.output_topic not in pubs:
                    fatal("bad-output", f"final hop does not publish {hop.output_topic!r}")
                    continue
                outputs[i] = hop.output_topic
            elif pubs:
                if len(pubs) > 1:
                    findings.append(Finding("warning", "ambiguous-output",
                                            f"final hop publishes {pubs}; using {pubs[0]!r}"))
                outputs[i] = pubs[0]

    for i, hop in enumerate(hops):
        if hop.is_timer or topics[i] is None:
            continue
        pubs = published.get(topics[i], [])
        if len(pubs) > 1:
            findings.append(Finding("warning", "multi-publisher",
                                    f"chain topic {topics[i]!r} has {len(pubs)} publishers; (topic, seq) may be ambiguous"))

    count = sum(1 for cb in callbacks if cb is not None)
    if any(f.severity == "fatal" for f in findings):
        return None, count, findings
    new_hops = tuple(
        replace(h, topic=None if h.is_timer else topics[i], output_topic=outputs[i], callback=callbacks[i])
        for i, h in enumerate(hops)
    )
    return ChainSpec(new_hops, sensor), count, findings
