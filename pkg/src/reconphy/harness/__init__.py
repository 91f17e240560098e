"""Experiment harness: configs, named experiments and the command line."""

from .config import (
    BUILTIN_DISTRIBUTIONS,
    MEANS_ONLY_SIGMA2,
    OPTIMAL_ARM,
    builtin_channels,
    dumps_config,
    load_config,
    loads_config,
    parse_seed_list,
    save_config,
)
from .experiments import (
    Knobs,
    cmd_fig9,
    cmd_fig10,
    cmd_fig11,
    cmd_fig12,
    cmd_reconfig_demo,
    cmd_table3,
)

__all__ = [
    "BUILTIN_DISTRIBUTIONS", "MEANS_ONLY_SIGMA2", "OPTIMAL_ARM", "builtin_channels", "dumps_config",
    "load_config", "loads_config", "parse_seed_list", "save_config", "Knobs", "cmd_fig9", "cmd_fig10",
    "cmd_fig11", "cmd_fig12", "cmd_reconfig_demo", "cmd_table3",
]
