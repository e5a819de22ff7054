"""Joint tractogram registration and streamline clustering."""

from ._core import (
    GeometryError,
    IoError,
    TpsError,
    TpsTransform,
    abd,
    adjusted_rand_index,
    alpha,
    fit_tps,
    gradcheck,
    hard_assign,
    kl_loss,
    kmeans,
    mdf,
    read_labels,
    read_tck,
    resample,
    run_cli,
    soft_assign,
    synthetic,
    target_distribution,
    wdice,
    write_tck,
)

__all__ = [
    "GeometryError",
    "IoError",
    "TpsError",
    "TpsTransform",
    "abd",
    "adjusted_rand_index",
    "alpha",
    "fit_tps",
    "gradcheck",
    "hard_assign",
    "kl_loss",
    "kmeans",
    "mdf",
    "read_labels",
    "read_tck",
    "resample",
    "run_cli",
    "soft_assign",
    "synthetic",
    "target_distribution",
    "wdice",
    "write_tck",
]
