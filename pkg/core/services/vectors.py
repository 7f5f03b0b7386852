"""
Parameter-vector arithmetic.

Results are fresh read-only arrays; evaluation order is fixed so repeated
evaluation of the same expression gives bit-identical floats.
"""
import numpy as np

from ..types import ParameterVector, freeze, require_same_dim


def vec_axpy(a: float, x: ParameterVector, y: ParameterVector) -> ParameterVector:
    """a*x + y"""
    require_same_dim(x, y)
    return freeze(np.float64(a) * x + y)


def vec_scale(a: float, x: ParameterVector) -> ParameterVector:
    return freeze(np.float64(a) * x)


def vec_sub(x: ParameterVector, y: ParameterVector) -> ParameterVector:
    require_same_dim(x, y)
    return freeze(x - y)


def l2_norm(x: ParameterVector) -> float:
    """Euclidean norm with left-to-right summation of the squares."""
    if x.size == 0:
        return 0.0
    squares = np.asarray(x, dtype=np.float64) ** 2
    return float(np.sqrt(np.add.accumulate(squares)[-1]))
