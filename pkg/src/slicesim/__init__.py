"""Discrete-time simulator of a sliced backhaul link whose resource
allocator is trained online, with the training traffic itself competing for
link capacity."""

from .backend import HAVE_COMPILED, backend_name, set_backend
from .config import ExperimentConfig, SimConfig, Strategy, parse_config_file

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "SimConfig",
    "Strategy",
    "parse_config_file",
    "HAVE_COMPILED",
    "backend_name",
    "set_backend",
    "__version__",
]
