"""Model constants, the nondimensionalization map and the reaction terms.

The reaction functions are written against numpy broadcasting, so the
same code evaluates a single point or every quadrature point of a mesh.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple

import numpy as np

from app.models import DimensionalParams, NondimParams, NondimScales

logger = logging.getLogger(__name__)


class InvalidParameterError(ValueError):
    """Raised when a model or discretization parameter is out of range"""
    pass


class ReactionValue(NamedTuple):
    """Reaction rates (f1, f2, f3) of normal tissue, tumor and acid"""
    f1: np.ndarray
    f2: np.ndarray
    f3: np.ndarray


@dataclass(frozen=True)
class ReactionJacobian:
    """d f_i / d u_j, stored with shape (..., 3, 3)"""
    entries: np.ndarray

    def __getitem__(self, index):
        return self.entries[index]


_DIMENSIONAL_FIELDS = ("K1", "K2", "r1", "r2", "D_N2", "D_N3", "r3", "d3", "d1")


def nondimensionalize(p: DimensionalParams) -> Tuple[NondimParams, NondimScales]:
    """
    Map dimensional constants to the four dimensionless groups.

    Args:
        p: Dimensional constants

    Returns:
        (NondimParams, NondimScales) where the scales hold L0 = r3*K2/d3 and
        the time and length units 1/r1 and sqrt(D_N3/r1)

    Raises:
        InvalidParameterError: If any constant is not strictly positive
    """
    for name in _DIMENSIONAL_FIELDS:
        value = getattr(p, name)
        if not (value > 0 and math.isfinite(value)):
            raise InvalidParameterError(f"{name} must be positive and finite, got {value}")

    params = NondimParams(
        delta1=p.d1 * p.r3 * p.K2 / (p.d3 * p.r1),
        rho2=p.r2 / p.r1,
        D2=p.D_N2 / p.D_N3,
        delta3=p.d3 / p.r1,
    )
    scales = NondimScales(
        L0=p.r3 * p.K2 / p.d3,
        time_scale=1.0 / p.r1,
        length_scale=math.sqrt(p.D_N3 / p.r1),
    )
    logger.debug(f"Nondimensionalized: {params}, L0={scales.L0:.3e}")
    return params, scales


def reaction(u1, u2, u3, p: NondimParams) -> ReactionValue:
    """Reaction terms: logistic growth, acid kill, acid production and uptake"""
    u1 = np.asarray(u1, dtype=float)
    u2 = np.asarray(u2, dtype=float)
    u3 = np.asarray(u3, dtype=float)
    f1 = u1 * (1.0 - u1) - p.delta1 * u1 * u3
    f2 = p.rho2 * u2 * (1.0 - u2)
    f3 = p.delta3 * (u2 - u3)
    return ReactionValue(f1, f2, f3)


def reaction_jacobian(u1, u2, u3, p: NondimParams) -> ReactionJacobian:
    """Pointwise Jacobian of reaction(); (0,1), (1,0), (1,2), (2,0) vanish"""
    u1, u2, u3 = np.broadcast_arrays(
        np.asarray(u1, dtype=float), np.asarray(u2, dtype=float), np.asarray(u3, dtype=float)
    )
    jac = np.zeros(u1.shape + (3, 3))
    jac[..., 0, 0] = 1.0 - 2.0 * u1 - p.delta1 * u3
    jac[..., 0, 2] = -p.delta1 * u1
    jac[..., 1, 1] = p.rho2 * (1.0 - 2.0 * u2)
    jac[..., 2, 1] = p.delta3
    jac[..., 2, 2] = -p.delta3
    return ReactionJacobian(jac)
