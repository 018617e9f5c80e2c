from ._fedsim import (
    FedsimError,
    agc_clip,
    conv2d,
    dirichlet_partition,
    iid_partition,
    run_experiment,
    validate_config,
    ws_standardize,
)

__all__ = [
    "FedsimError",
    "agc_clip",
    "conv2d",
    "dirichlet_partition",
    "iid_partition",
    "run_experiment",
    "validate_config",
    "ws_standardize",
]
