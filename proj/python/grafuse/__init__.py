"""Graph expert models, transport distances and prediction fusion."""

from ._core import (
    Bundle,
    ConfigError,
    DataError,
    DimensionError,
    GrafuseError,
    Model,
    NumericError,
    adaptive_fuse,
    coefficient_of_variation,
    exact_wr,
    fixed_fuse,
    generate_sbm,
    load_checkpoint,
    read_bundle,
    run_cli,
    sinkhorn_wr,
    write_bundle,
)

__all__ = [
    "Bundle",
    "ConfigError",
    "DataError",
    "DimensionError",
    "GrafuseError",
    "Model",
    "NumericError",
    "adaptive_fuse",
    "coefficient_of_variation",
    "exact_wr",
    "fixed_fuse",
    "generate_sbm",
    "load_checkpoint",
    "read_bundle",
    "run_cli",
    "sinkhorn_wr",
    "write_bundle",
]
