"""Python access to the fedsim simulator core."""

from ._core import (
    ConfigError,
    ContractError,
    FedsimError,
    FormatError,
    PartitionError,
    aggregate,
    dirichlet_partition,
    fairness_std,
    format_real,
    validate_config,
    partition_report,
    run,
    run_to_directory,
    select_winner,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "FedsimError",
    "FormatError",
    "PartitionError",
    "aggregate",
    "dirichlet_partition",
    "fairness_std",
    "format_real",
    "validate_config",
    "partition_report",
    "run",
    "run_to_directory",
    "select_winner",
]
