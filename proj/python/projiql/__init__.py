"""Python access to the Proj-IQL C++ core."""

from ._core import (
    BoundReport,
    ConfigError,
    ContractError,
    Error,
    RunConfig,
    TauProj,
    ValidationError,
    expectile,
    expectile_variance,
    gen_data,
    known_keys,
    l2_tau,
    spearman,
    sweep_lemma1,
    sweep_lemma3,
    sweep_theorem2,
    sweep_theorem3,
    sweep_theorem4,
    tau_proj,
    tau_proj_from_log,
    train,
    verify_suite,
    window_means,
    window_std,
)

__all__ = [name for name in dir() if not name.startswith("_")]
