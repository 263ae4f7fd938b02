"""Max-plus synchronization of decentralized trading systems."""

from .dynamics import (
    RunConfig,
    Trace,
    alpha_gradient,
    check_global_equilibrium,
    divergence_report,
    heat_step,
    in_stable_manifold,
    is_solution,
    loss,
    rraggu,
    tarski_laplacian,
)
from .network import (
    TradeNetwork,
    effective_value,
    load_network,
    random_instance,
    random_state,
    save_network,
    validate,
    value_residual,
)
from .tropical import NEG_INF, POS_INF, TropicalMatrix

__version__ = "0.1.0"

__all__ = [
    "NEG_INF",
    "POS_INF",
    "RunConfig",
    "Trace",
    "TradeNetwork",
    "TropicalMatrix",
    "alpha_gradient",
    "check_global_equilibrium",
    "divergence_report",
    "effective_value",
    "heat_step",
    "in_stable_manifold",
    "is_solution",
    "load_network",
    "loss",
    "random_instance",
    "random_state",
    "rraggu",
    "save_network",
    "tarski_laplacian",
    "validate",
    "value_residual",
]
