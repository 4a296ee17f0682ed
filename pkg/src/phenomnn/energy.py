"""Hypergraph energies, their gradients, and the brute-force summation oracle.

Two energy variants are provided.  The simple variant penalizes the quadratic
forms of the clique and normalized-star Laplacians:

    E_simple(Y) = ||Y - Fx||_F^2 + lambda0 tr[Y^T L_C Y] + lambda1 tr[Y^T L_S_bar Y]

The general variant replaces the two graph terms with compatibility-projected
sums, with the edge embedding eliminated by its per-edge mean ``Z* = D_H^{-1} B^T Y``:

    E_general(Y) = ||Y - Fx||_F^2
                 + (lambda0 / 2) * sum_e sum_{i,j in e} ||y_i H0 - y_j||^2
                 + lambda1 * sum_e sum_{i in e} ||y_i H1 - z*_e||^2

The pairwise term is weighted ``lambda0 / 2`` (the double sum counts every
ordered pair) so that ``H0 = H1 = I`` recovers E_simple exactly, gradient and
update included, at the same ``(lambda0, lambda1)``.

The nonnegativity barrier is never represented as an infinite float: every
evaluation returns the smooth value together with a feasibility flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hypergraph import ExpansionOperators, Hypergraph
from .linalg import SparseMat, kron_matvec, row_scale, spmm

__all__ = [
    "EnergyParams",
    "EnergyValue",
    "prox_nonneg",
    "z_star",
    "energy_simple",
    "energy_general",
    "energy_bruteforce",
    "grad_simple",
    "grad_general",
    "laplacian_quad",
]


@dataclass(eq=False)
class EnergyParams:
    """Energy-shape parameters: compatibility matrices, expansion weights, step size."""

    h0: np.ndarray
    h1: np.ndarray
    lambda0: float
    lambda1: float
    alpha: float = 0.5

    def __post_init__(self):
        self.h0 = np.asarray(self.h0, dtype=np.float64)
        self.h1 = np.asarray(self.h1, dtype=np.float64)
        if self.h0.shape != self.h1.shape or self.h0.ndim != 2 or self.h0.shape[0] != self.h0.shape[1]:
            raise ValueError(f"h0/h1 must be square with matching size, got {self.h0.shape} and {self.h1.shape}")
        if self.lambda0 < 0 or self.lambda1 < 0:
            raise ValueError("lambda0 and lambda1 must be nonnegative")
        # alpha = 0 is a valid degenerate step at the layer level; training
        # configs require a strictly positive step via ModelConfig
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")

    @classmethod
    def identity(cls, d: int, lambda0: float, lambda1: float, alpha: float = 0.5) -> "EnergyParams":
        return cls(np.eye(d), np.eye(d), lambda0, lambda1, alpha)

    @property
    def d(self) -> int:
        return self.h0.shape[0]


@dataclass
class EnergyValue:
    """Smooth energy value plus feasibility of the nonnegativity barrier."""

    smooth: float
    feasible: bool


def _check_ops_params(ops: ExpansionOperators, params: EnergyParams) -> None:
    if ops.lambda0 != params.lambda0 or ops.lambda1 != params.lambda1:
        raise ValueError(
            "expansion operators were built for "
            f"(lambda0={ops.lambda0}, lambda1={ops.lambda1}) but params carry "
            f"({params.lambda0}, {params.lambda1})"
        )


def prox_nonneg(v: np.ndarray) -> np.ndarray:
    """Proximal map of the nonnegativity barrier: elementwise max(0, v)."""
    return np.maximum(np.asarray(v, dtype=np.float64), 0.0)


def z_star(hg: Hypergraph, y: np.ndarray) -> np.ndarray:
    """Optimal edge embeddings ``D_H^{-1} B^T Y``: row k is the mean of y over edge k."""
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != hg.n:
        raise ValueError(f"z_star: expected ({hg.n}, d) embeddings, got {y.shape}")
    return row_scale(1.0 / hg.edge_sizes, spmm(hg.incidence_t(), y))


def laplacian_quad(adj: SparseMat, deg: np.ndarray, y: np.ndarray) -> float:
    """Quadratic form ``tr[Y^T (D - A) Y]`` from an adjacency and its degree diagonal."""
    return float(np.sum(y * (row_scale(deg, y) - spmm(adj, y))))


def energy_simple(y: np.ndarray, fx: np.ndarray, ops: ExpansionOperators) -> EnergyValue:
    """Simple-variant energy; expansion weights are taken from ``ops``."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != fx.shape:
        raise ValueError(f"energy_simple: shape mismatch {y.shape} vs {fx.shape}")
    fit = float(np.sum((y - fx) ** 2))
    q_c = laplacian_quad(ops.a_c, ops.d_c, y)
    q_s = laplacian_quad(ops.a_s_bar, ops.d_s_bar, y)
    return EnergyValue(
        smooth=fit + ops.lambda0 * q_c + ops.lambda1 * q_s,
        feasible=bool(np.min(y, initial=0.0) >= 0.0),
    )


def energy_general(
    y: np.ndarray, fx: np.ndarray, ops: ExpansionOperators, params: EnergyParams, hg: Hypergraph
) -> EnergyValue:
    """General-variant energy in its matrix/trace form (edge means substituted)."""
    _check_ops_params(ops, params)
    y = np.asarray(y, dtype=np.float64)
    if y.shape != fx.shape:
        raise ValueError(f"energy_general: shape mismatch {y.shape} vs {fx.shape}")
    h0, h1 = params.h0, params.h1
    fit = float(np.sum((y - fx) ** 2))
    yh0 = y @ h0
    term_a = (
        float(np.sum(yh0 * row_scale(ops.d_c, yh0)))
        - 2.0 * float(np.sum(yh0 * spmm(ops.a_c, y)))
        + float(np.sum(y * row_scale(ops.d_c, y)))
    )
    z = z_star(hg, y)
    yh1 = y @ h1
    term_b = (
        float(np.sum(yh1 * row_scale(ops.d_s_bar, yh1)))
        - 2.0 * float(np.sum(yh1 * spmm(hg.incidence, z)))
        + float(np.sum(z * row_scale(ops.d_h, z)))
    )
    return EnergyValue(
        smooth=fit + 0.5 * params.lambda0 * term_a + params.lambda1 * term_b,
        feasible=bool(np.min(y, initial=0.0) >= 0.0),
    )


def energy_bruteforce(
    y: np.ndarray, z: np.ndarray, fx: np.ndarray, hg: Hypergraph, params: EnergyParams
) -> EnergyValue:
    """Literal summation form of the full energy; the ground-truth oracle.

    Evaluates ``||Y - Fx||^2 + lambda0 * sum_e sum_{i,j in e} ||y_i H0 - y_j||^2
    + lambda1 * sum_e sum_{i in e} ||y_i H1 - z_e||^2`` by explicit loops, with
    the pairwise sum over ordered pairs.  Feasibility covers both Y and Z.
    """
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    h0, h1 = params.h0, params.h1
    total = float(np.sum((y - fx) ** 2))
    pair = 0.0
    mean = 0.0
    for k, e in enumerate(hg.edges):
        for i in e:
            yi_h0 = y[i] @ h0
            for j in e:
                diff = yi_h0 - y[j]
                pair += float(diff @ diff)
            diff = y[i] @ h1 - z[k]
            mean += float(diff @ diff)
    total += params.lambda0 * pair + params.lambda1 * mean
    feasible = bool(np.min(y, initial=0.0) >= 0.0 and np.min(z, initial=0.0) >= 0.0)
    return EnergyValue(smooth=total, feasible=feasible)


def grad_simple(y: np.ndarray, fx: np.ndarray, ops: ExpansionOperators) -> np.ndarray:
    """Gradient of the simple energy: ``2(lambda0 L_C + lambda1 L_S_bar) Y + 2(Y - Fx)``."""
    y = np.asarray(y, dtype=np.float64)
    l_c_y = row_scale(ops.d_c, y) - spmm(ops.a_c, y)
    l_s_y = row_scale(ops.d_s_bar, y) - spmm(ops.a_s_bar, y)
    return 2.0 * (ops.lambda0 * l_c_y + ops.lambda1 * l_s_y + y - fx)


def pair_term_correction(y: np.ndarray, ops: ExpansionOperators, h0: np.ndarray) -> np.ndarray:
    """Compatibility-projected clique message ``A_C Y (H0+H0^T) - D_C Y H0 H0^T``."""
    return kron_matvec(ops.a_c, h0 + h0.T, y) - kron_matvec(ops.d_c, h0 @ h0.T, y)


def mean_term_correction(y: np.ndarray, ops: ExpansionOperators, h1: np.ndarray) -> np.ndarray:
    """Compatibility-projected star message ``A_S_bar Y (H1+H1^T) - D_S_bar Y H1 H1^T``."""
    return kron_matvec(ops.a_s_bar, h1 + h1.T, y) - kron_matvec(ops.d_s_bar, h1 @ h1.T, y)


def grad_general(
    y: np.ndarray, fx: np.ndarray, ops: ExpansionOperators, params: EnergyParams
) -> np.ndarray:
    """Gradient of the general energy; collapses to ``grad_simple`` at H0 = H1 = I."""
    _check_ops_params(ops, params)
    y = np.asarray(y, dtype=np.float64)
    y_c = pair_term_correction(y, ops, params.h0)
    y_s = mean_term_correction(y, ops, params.h1)
    return (
        params.lambda0 * (row_scale(ops.d_c, y) - y_c)
        + 2.0 * params.lambda1 * (spmm(ops.a_s_bar, y) - y_s)
        + 2.0 * (y - fx)
    )
