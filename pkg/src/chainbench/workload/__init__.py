from .preset import PresetConfig, build_mini_autoware, scaled_module_sizes
from .runtime import NodeRuntime, busy_compute, run_node
from .host import NodeHost
