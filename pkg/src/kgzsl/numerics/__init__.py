from .matrix import as_matrix, format_matrix, load_keyed, parse_keyed, parse_matrix, save_keyed
from .optim import AdamState, MomentumState, Optimizer, adam_step, sgd_momentum_step
from .rng import derive_seed, glorot_init, seeded_rng
from .tape import Tape, Var

__all__ = [
    "AdamState",
    "MomentumState",
    "Optimizer",
    "Tape",
    "Var",
    "adam_step",
    "as_matrix",
    "derive_seed",
    "format_matrix",
    "glorot_init",
    "load_keyed",
    "parse_keyed",
    "parse_matrix",
    "save_keyed",
    "seeded_rng",
    "sgd_momentum_step",
]
