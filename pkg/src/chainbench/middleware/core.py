"""Topic-based publish/subscribe with in-process and loopback transports.

Wiring is static: a `Middleware` instance (one per process group) knows which
remote groups subscribe to which topics and at which loopback address each
group listens. In-process subscribers receive envelopes by reference; remote
ones receive fragmented datagrams, acknowledged per message when the
subscription asked for reliable delivery.
"""
from __future__ import annotations

import errno
import logging
import random
import selectors
import socket
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from ..model import QosPolicy
from ..tracing import PUBLISH, SUB_CB_END, SUB_CB_START, Recorder, now_ns
from .executor import Executor, Strand
from .framing import (
    FLAG_RELIABLE,
    MAX_DATAGRAM,
    FramingError,
    Reassembler,
    fragment,
    pack_ack,
    parse_fragment,
    topic_hash,
    unpack_ack,
)
from .queue import SubscriptionQueue
from .reliable import (
    DEFAULT_ACK_TIMEOUT_NS,
    DEFAULT_MAX_RETRIES,
    DeliveryFailed,
    ReliableReceiver,
    ReliableSender,
)

log = logging.getLogger(__name__)

SO_RCVBUFFORCE = getattr(socket, "SO_RCVBUFFORCE", 33)
SO_SNDBUFFORCE = getattr(socket, "SO_SNDBUFFORCE", 32)
DEFAULT_SOCKET_BUFFER = 64 << 20


class UnknownTopic(ValueError):
    pass


class DuplicateSubscription(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class MessageEnvelope:
    topic: str
    seq: int
    publish_ts: int
    payload: bytes
    publisher: str = ""


@dataclass(frozen=True)
class DeliveryMode:
    reliable: bool = False
    ack_timeout_ns: int = DEFAULT_ACK_TIMEOUT_NS
    max_retries: int = DEFAULT_MAX_RETRIES

    def __post_init__(self) -> None:
        if self.ack_timeout_ns <= 0:
            raise ValueError("ack_timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def best_effort(cls) -> "DeliveryMode":
        return cls(False)

    @classmethod
    def reliable_mode(cls, ack_timeout_ns: int = DEFAULT_ACK_TIMEOUT_NS,
                      max_retries: int = DEFAULT_MAX_RETRIES) -> "DeliveryMode":
        return cls(True, ack_timeout_ns, max_retries)


class FaultInjector:
    """Drops outgoing datagrams: the first ``drop_first`` ones, then each
    with probability ``drop_rate``."""

    def __init__(self, drop_rate: float = 0.0, seed: Optional[int] = None, drop_first: int = 0,
                 kinds: Iterable[str] = ("data", "ack")):
        if not 0.0 <= drop_rate < 1.0:
            raise ValueError("drop_rate must be in [0, 1)")
        self.drop_rate = drop_rate
        self.drop_first = drop_first
        self.kinds = frozenset(kinds)
        self._rng = random.Random(seed)
        self._lock = threading.Lock()
        self.dropped = 0
        self.passed = 0

    def should_drop(self, kind: str = "data") -> bool:
        if kind not in self.kinds:
            return False
        with self._lock:
            if self.drop_first > 0:
                self.drop_first -= 1
                self.dropped += 1
                return True
            if self.drop_rate and self._rng.random() < self.drop_rate:
                self.dropped += 1
                return True
            self.passed += 1
            return False


def _open_udp(host: str, bufsize: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    for force, plain in ((SO_RCVBUFFORCE, socket.SO_RCVBUF), (SO_SNDBUFFORCE, socket.SO_SNDBUF)):
        try:
            sock.setsockopt(socket.SOL_SOCKET, force, bufsize)
        except OSError:
            try:
                sock.setsockopt(socket.SOL_SOCKET, plain, bufsize)
            except OSError:
                pass
    sock.bind((host, 0))
    return sock


class Subscription:
    def __init__(self, mw: "Middleware", node: str, topic: str, qos: QosPolicy,
                 callback: Callable[[MessageEnvelope], None], strand: Strand):
        self.mw = mw
        self.node = node
        self.topic = topic
        self.qos = qos
        self.callback = callback
        self.strand = strand
        self.queue = SubscriptionQueue(qos.depth)
        self.dispatched = 0
        self.stale_dispatches = 0
        self.errors = 0

    def deliver(self, env: MessageEnvelope) -> None:
        self.queue.push(env)
        self.strand.post(self)

    def run(self) -> None:
        env, newest = self.queue.pop_checked()
        if env is None:
            return
        if self.qos.depth == 1 and env.seq != newest:
            self.stale_dispatches += 1
        rec = self.mw.recorder
        rec.record(self.node, SUB_CB_START, self.topic, env.seq)
        try:
            self.callback(env)
        except Exception:
            self.errors += 1
            log.exception("subscription callback %s on %s failed", self.node, self.topic)
        finally:
            rec.record(self.node, SUB_CB_END, self.topic, env.seq)
            self.dispatched += 1
            if len(self.queue):
                self.strand.post(self)

    def __repr__(self) -> str:
        return f"Subscription({self.node}, {self.topic})"


class Publisher:
    def __init__(self, mw: "Middleware", node: str, topic: str, delivery: DeliveryMode):
        self.mw = mw
        self.node = node
        self.topic = topic
        self.topic_hash = topic_hash(topic)
        self.delivery = delivery
        self.seq = 0
        self.sock: Optional[socket.socket] = None
        self.senders: dict[str, ReliableSender] = {}
        self._addr_to_group: dict = {}
        self.send_errors = 0

    def publish(self, payload: bytes = b"") -> int:
        self.seq += 1
        seq = self.seq
        ts = now_ns()
        mw = self.mw
        mw.recorder.record(self.node, PUBLISH, self.topic, seq, t=ts)
        subs = mw._local.get(self.topic)
        if subs:
            env = MessageEnvelope(self.topic, seq, ts, payload, self.node)
            for sub in subs:
                sub.deliver(env)
        routes = mw._routes.get(self.topic)
        if routes:
            self._send_remote(seq, ts, payload, routes)
        return seq

    def _send_remote(self, seq: int, ts: int, payload: bytes, routes: dict) -> None:
        frames: dict[bool, list] = {}
        for group, modes in routes.items():
            addr = self.mw._peers.get(group)
            if addr is None:
                continue
            for reliable in modes:
                if reliable not in frames:
                    frames[reliable] = fragment(self.topic_hash, seq, ts, payload,
                                                FLAG_RELIABLE if reliable else 0, self.mw.max_datagram)
                if reliable:
                    sender = self._sender(group, addr)
                    idle = not sender.in_flight
                    sender.submit(seq, frames[True], now_ns)
                    if idle:
                        # the io thread may be blocked without a timeout
                        self.mw._wake()
                else:
                    for d in frames[False]:
                        self._sendto(d, addr)

    def _ensure_socket(self) -> socket.socket:
        if self.sock is None:
            self.sock = _open_udp(self.mw.host, self.mw.socket_buffer)
            self.mw._register_publisher(self)
        return self.sock

    def _sendto(self, datagram: bytes, addr) -> None:
        sock = self._ensure_socket()
        fault = self.mw.fault
        if fault is not None and fault.should_drop("data"):
            return
        try:
            sock.sendto(datagram, addr)
        except OSError as exc:
            if exc.errno not in (errno.ENOBUFS, errno.EAGAIN, errno.ECONNREFUSED):
                raise
            self.send_errors += 1

    def _sender(self, group: str, addr) -> ReliableSender:
        sender = self.senders.get(group)
        if sender is None:
            self._ensure_socket()
            sender = ReliableSender(lambda d, a=addr: self._sendto(d, a),
                                    self.delivery.ack_timeout_ns, self.delivery.max_retries)
            self.senders[group] = sender
            self._addr_to_group[addr] = group
        return sender

    def _on_ack(self, addr, seq: int) -> None:
        group = self._addr_to_group.get(addr)
        if group is not None:
            self.senders[group].on_ack(seq)

    @property
    def failed(self) -> list[int]:
        return sorted(s for sender in self.senders.values() for s in sender.failed)

    def flush(self, timeout: Optional[float] = None) -> bool:
        """Wait until every reliable message is acknowledged or given up.

        Raises DeliveryFailed if any message exhausted its retries.
        """
        ok = all(s.wait_idle(timeout) for s in self.senders.values())
        if self.failed:
            raise DeliveryFailed(self.failed)
        return ok


class Middleware:
    def __init__(self, *, recorder: Optional[Recorder] = None, topics: Optional[Iterable[str]] = None,
                 group: str = "local", executor: Optional[Executor] = None, workers: int = 4,
                 delivery: DeliveryMode = DeliveryMode(), fault: Optional[FaultInjector] = None,
                 max_datagram: int = MAX_DATAGRAM, host: str = "127.0.0.1",
                 socket_buffer: int = DEFAULT_SOCKET_BUFFER):
        self.recorder = recorder if recorder is not None else Recorder(enabled=False)
        self.topics = set(topics) if topics is not None else None
        self.group = group
        self._own_executor = executor is None
        self.executor = executor if executor is not None else Executor(workers, name=f"mw-{group}")
        self.delivery = delivery
        self.fault = fault
        self.max_datagram = max_datagram
        self.host = host
        self.socket_buffer = socket_buffer

        self._local: dict[str, list[Subscription]] = {}
        self._routes: dict[str, dict[str, set]] = {}
        self._peers: dict[str, tuple] = {}
        self._hash_topics: dict[int, str] = {}
        self._publishers: list[Publisher] = []
        self._rx: Optional[socket.socket] = None
        self._selector = selectors.DefaultSelector()
        self._reg_lock = threading.Lock()
        self._pending_reg: list = []
        self._reassembler = Reassembler()
        self._rel_rx: dict[tuple, ReliableReceiver] = {}
        self._be_last: dict[tuple, int] = {}
        self._io: Optional[threading.Thread] = None
        self._running = False
        self._wake_r, self._wake_w = socket.socketpair()
        self._wake_r.setblocking(False)
        self._selector.register(self._wake_r, selectors.EVENT_READ, "wake")
        self.rx_errors = 0
        if self.topics is not None:
            for t in self.topics:
                self._hash_topics[topic_hash(t)] = t

    # -- wiring ---------------------------------------------------------------

    def bind(self) -> int:
        """Open the receive socket for remote traffic; returns its port."""
        if self._rx is None:
            self._rx = _open_udp(self.host, self.socket_buffer)
            self._rx.setblocking(False)
            self._register(self._rx, "rx")
        return self._rx.getsockname()[1]

    @property
    def address(self) -> tuple:
        return (self.host, self.bind())

    def add_peer(self, group: str, addr: tuple) -> None:
        self._peers[group] = tuple(addr)

    def add_route(self, topic: str, group: str, reliable: bool = False) -> None:
        self._routes.setdefault(topic, {}).setdefault(group, set()).add(bool(reliable))
        self._hash_topics[topic_hash(topic)] = topic

    def _register_publisher(self, pub: Publisher) -> None:
        self._register(pub.sock, pub)

    def _register(self, sock: socket.socket, data) -> None:
        # the io thread owns the selector once running
        with self._reg_lock:
            if self._io is None:
                self._selector.register(sock, selectors.EVENT_READ, data)
                return
            self._pending_reg.append((sock, data))
        self._wake()

    # -- api -------------------------------------------------------------------

    def advertise(self, node: str, topic: str, delivery: Optional[DeliveryMode] = None) -> Publisher:
        if self.topics is not None and topic not in self.topics:
            raise UnknownTopic(f"topic {topic!r} is not registered in the workload")
        self._hash_topics[topic_hash(topic)] = topic
        pub = Publisher(self, node, topic, delivery or self.delivery)
        self._publishers.append(pub)
        return pub

    def subscribe(self, node: str, topic: str, qos: QosPolicy,
                  callback: Callable[[MessageEnvelope], None],
                  strand: Optional[Strand] = None) -> Subscription:
        subs = self._local.setdefault(topic, [])
        for s in subs:
            if s.node == node and s.callback == callback:
                raise DuplicateSubscription(f"{node} already subscribes {topic!r} with this callback")
        sub = Subscription(self, node, topic, qos, callback, strand or self.executor.strand(node))
        self._hash_topics[topic_hash(topic)] = topic
        # copy-on-write so publishers iterate a stable list
        self._local[topic] = subs + [sub]
        return sub

    def subscriptions(self) -> list[Subscription]:
        return [s for subs in self._local.values() for s in subs]

    def publishers(self) -> list[Publisher]:
        return list(self._publishers)

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "Middleware":
        self.executor.start()
        with self._reg_lock:
            if self._io is None:
                self._running = True
                self._io = threading.Thread(target=self._io_loop, name=f"mw-io-{self.group}", daemon=True)
                self._io.start()
        return self

    def close(self) -> None:
        self._running = False
        self._wake()
        if self._io is not None:
            self._io.join(5.0)
            self._io = None
        if self._own_executor:
            self.executor.stop()
        for pub in self._publishers:
            if pub.sock is not None:
                pub.sock.close()
        if self._rx is not None:
            self._rx.close()
        self._wake_r.close()
        self._wake_w.close()
        self._selector.close()

    def __enter__(self) -> "Middleware":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.close()

    def _wake(self) -> None:
        try:
            self._wake_w.send(b"x")
        except OSError:
            pass

    # -- io thread -------------------------------------------------------------

    def _io_loop(self) -> None:
        tick_ns = 20_000_000
        next_tick = now_ns() + tick_ns
        while self._running:
            if self._pending_reg:
                with self._reg_lock:
                    pending, self._pending_reg = self._pending_reg, []
                for sock, data in pending:
                    self._selector.register(sock, selectors.EVENT_READ, data)
            # housekeeping only while something can expire, so an idle
            # io thread never wakes up and competes with callbacks
            housekeeping = len(self._reassembler) > 0 or any(rx.pending for rx in self._rel_rx.values())
            deadline = next_tick if housekeeping else None
            for pub in self._publishers:
                for sender in pub.senders.values():
                    if sender.in_flight:
                        soon = now_ns() + 1_000_000
                        deadline = soon if deadline is None else min(deadline, soon)
            timeout = None if deadline is None else max(0.0, (deadline - now_ns()) / 1e9)
            try:
                events = self._selector.select(timeout)
            except (OSError, ValueError):
                if not self._running:
                    return
                raise
            for key, _ in events:
                if key.data == "wake":
                    try:
                        while self._wake_r.recv(4096):
                            pass
                    except (BlockingIOError, OSError):
                        pass
                elif key.data == "rx":
                    self._drain_rx()
                else:
                    self._drain_acks(key.data)
            now = now_ns()
            for pub in self._publishers:
                for sender in pub.senders.values():
                    if sender.in_flight:
                        sender.poll(now)
            if not housekeeping:
                next_tick = now + tick_ns
            elif now >= next_tick:
                next_tick = now + tick_ns
                self._reassembler.expire(now)
                for rx in list(self._rel_rx.values()):
                    rx.poll(now)

    def _drain_acks(self, pub: Publisher) -> None:
        sock = pub.sock
        while True:
            try:
                data, addr = sock.recvfrom(64, socket.MSG_DONTWAIT)
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                return
            try:
                thash, seq = unpack_ack(data)
            except FramingError:
                self.rx_errors += 1
                continue
            if thash == pub.topic_hash:
                pub._on_ack(addr, seq)

    def _drain_rx(self) -> None:
        rx = self._rx
        while True:
            try:
                data, addr = rx.recvfrom(65536)
            except (BlockingIOError, InterruptedError):
                return
            except OSError:
                return
            try:
                frag = parse_fragment(data)
                asm = self._reassembler.add(addr, frag, now_ns())
            except FramingError:
                self.rx_errors += 1
                continue
            if asm is None:
                continue
            topic = self._hash_topics.get(asm.topic_hash)
            if topic is None:
                self.rx_errors += 1
                continue
            env = MessageEnvelope(topic, asm.seq, asm.publish_ts, asm.payload, f"{addr[0]}:{addr[1]}")
            key = (addr, asm.topic_hash)
            if asm.flags & FLAG_RELIABLE:
                self._send_ack(addr, asm.topic_hash, asm.seq)
                receiver = self._rel_rx.get(key)
                if receiver is None:
                    receiver = self._rel_rx[key] = ReliableReceiver(
                        lambda _seq, e: self._deliver_local(e, True))
                receiver.on_message(asm.seq, env, now_ns())
            else:
                if asm.seq <= self._be_last.get(key, 0):
                    continue
                self._be_last[key] = asm.seq
                self._deliver_local(env, False)

    def _send_ack(self, addr, thash: int, seq: int) -> None:
        if self.fault is not None and self.fault.should_drop("ack"):
            return
        try:
            self._rx.sendto(pack_ack(thash, seq), addr)
        except OSError:
            pass

    def _deliver_local(self, env: MessageEnvelope, reliable: bool) -> None:
        for sub in self._local.get(env.topic, ()):
            if sub.qos.reliable == reliable:
                sub.deliver(env)


def routes_for(spec, placement: dict, local_group: str) -> dict:
    """Remote routes of ``local_group``: topic -> {group: {reliable flags}}."""
    routes: dict[str, dict[str, set]] = {}
    for node in spec.nodes:
        group = placement[node.name]
        if group == local_group:
            continue
        for sub in node.subscriptions:
            routes.setdefault(sub.topic, {}).setdefault(group, set()).add(sub.qos.reliable)
    return routes


def wire(mw: Middleware, routes: dict, peers: dict) -> None:
    for group, addr in peers.items():
        if group != mw.group:
            mw.add_peer(group, addr)
    for topic, groups in routes.items():
        for group, modes in groups.items():
            for reliable in modes:
                mw.add_route(topic, group, reliable)
