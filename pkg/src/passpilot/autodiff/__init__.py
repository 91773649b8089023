from passpilot.autodiff.nn import (
    MLP,
    Dense,
    GRUCell,
    NonFiniteGradient,
    ParamStore,
    adam_step,
    categorical_straight_through,
    dense,
    gru_step,
)
from passpilot.autodiff.tensor import ShapeMismatch, Tensor, no_grad

__all__ = [
    "MLP", "Dense", "GRUCell", "NonFiniteGradient", "ParamStore", "ShapeMismatch",
    "Tensor", "adam_step", "categorical_straight_through", "dense", "gru_step", "no_grad",
]
