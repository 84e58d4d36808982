"""Linear test problems ``u' = A u + b(t)`` on periodic grids."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sps

from .collocation import CollocationTableau

# Second-derivative central stencils, offsets -k..k, scaled by 1/h^2.
CENTRAL_D2 = {
    2: [1.0, -2.0, 1.0],
    4: [-1 / 12, 4 / 3, -5 / 2, 4 / 3, -1 / 12],
    6: [1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90],
}

# Upwind-biased first-derivative stencils for positive velocity: {offset: coeff}/h.
UPWIND_D1 = {
    1: {-1: -1.0, 0: 1.0},
    3: {-2: 1 / 6, -1: -1.0, 0: 1 / 2, 1: 1 / 3},
    5: {-3: -2 / 60, -2: 15 / 60, -1: -60 / 60, 0: 20 / 60, 1: 30 / 60, 2: -3 / 60},
}


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    t_end: float
    L: int

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if not self.t_end > self.t_start:
            raise ValueError("t_end must exceed t_start")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t_start) / self.L

    def step_start(self, l: int) -> float:
        return self.t_start + l * self.dt

    def node_times(self, l: int, tableau: CollocationTableau) -> np.ndarray:
        return self.step_start(l) + tableau.nodes * self.dt


@dataclass(frozen=True)
class LinearIVP:
    name: str
    operator: sps.csr_matrix
    forcing: Callable[[float], np.ndarray]
    initial: np.ndarray
    grid: TimeGrid
    exact: Optional[Callable[[float], np.ndarray]] = None
    homogeneous: bool = False

    @property
    def dim(self) -> int:
        return self.initial.shape[0]

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.operator @ x

    def operator_norm_inf(self) -> float:
        return float(abs(self.operator).sum(axis=1).max())


def periodic_stencil_matrix(n: int, stencil: dict[int, float]) -> sps.csr_matrix:
    rows, cols, vals = [], [], []
    idx = np.arange(n)
    for offset, coeff in stencil.items():
        rows.append(idx)
        cols.append((idx + offset) % n)
        vals.append(np.full(n, coeff))
    mat = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return mat.tocsr()


def _grid_2d(n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.arange(n) / n
    xx, yy = np.meshgrid(x, x, indexing="ij")
    return xx.ravel(), yy.ravel()


def _kron_sum(d1: sps.spmatrix, n: int) -> sps.csr_matrix:
    eye = sps.identity(n, format="csr")
    return (sps.kron(d1, eye) + sps.kron(eye, d1)).tocsr().astype(complex)


def heat_operator(n: int, order: int) -> sps.csr_matrix:
    coeffs = CENTRAL_D2[order]
    k = len(coeffs) // 2
    d2 = periodic_stencil_matrix(n, {j - k: c for j, c in enumerate(coeffs)}) * n**2
    return _kron_sum(d2, n)


def advection_operator(n: int, order: int) -> sps.csr_matrix:
    d1 = periodic_stencil_matrix(n, UPWIND_D1[order]) * n
    return -_kron_sum(d1, n)


def make_heat(n_per_dim: int, order: int, T: float, L: int) -> LinearIVP:
    """Periodic heat equation on [0,1]^2, t in [pi, pi + T].

    Exact solution ``sin(t) sin(2 pi x) sin(2 pi y)``; the forcing is the one
    consistent with it, ``sin(2 pi x) sin(2 pi y) (cos t + 8 pi^2 sin t)``.
    """
    if order not in CENTRAL_D2:
        raise ValueError(f"heat order must be one of {sorted(CENTRAL_D2)}, got {order}")
    if n_per_dim < order + 1:
        raise ValueError(f"n_per_dim must be >= order + 1 = {order + 1}")
    xx, yy = _grid_2d(n_per_dim)
    shape = np.sin(2 * np.pi * xx) * np.sin(2 * np.pi * yy)
    eig = 8 * np.pi**2

    def forcing(t):
        return (shape * (np.cos(t) + eig * np.sin(t))).astype(complex)

    def exact(t):
        return (np.sin(t) * shape).astype(complex)

    grid = TimeGrid(np.pi, np.pi + T, L)
    return LinearIVP(
        name="heat",
        operator=heat_operator(n_per_dim, order),
        forcing=forcing,
        initial=exact(grid.t_start),
        grid=grid,
        exact=exact,
    )


def make_advection(n_per_dim: int, order: int, T: float, L: int) -> LinearIVP:
    """``u_t + u_x + u_y = 0`` on the periodic unit square with upwind differences."""
    if order not in UPWIND_D1:
        raise ValueError(f"advection order must be one of {sorted(UPWIND_D1)}, got {order}")
    if n_per_dim < 2 * order + 1:
        raise ValueError(f"n_per_dim must be >= 2*order + 1 = {2 * order + 1}")
    xx, yy = _grid_2d(n_per_dim)
    zero = np.zeros(n_per_dim**2, dtype=complex)

    def exact(t):
        return (np.sin(2 * np.pi * (xx - t)) * np.sin(2 * np.pi * (yy - t))).astype(complex)

    grid = TimeGrid(0.0, T, L)
    return LinearIVP(
        name="advection",
        operator=advection_operator(n_per_dim, order),
        forcing=lambda t: zero,
        initial=exact(0.0),
        grid=grid,
        exact=exact,
        homogeneous=True,
    )


def make_dahlquist(lam: complex, T: float, L: int) -> LinearIVP:
    lam = complex(lam)
    zero = np.zeros(1, dtype=complex)
    return LinearIVP(
        name="dahlquist",
        operator=sps.csr_matrix(np.array([[lam]], dtype=complex)),
        forcing=lambda t: zero,
        initial=np.ones(1, dtype=complex),
        grid=TimeGrid(0.0, T, L),
        exact=lambda t: np.array([np.exp(lam * t)], dtype=complex),
        homogeneous=True,
    )


def step_rhs(ivp: LinearIVP, tableau: CollocationTableau, l: int) -> np.ndarray:
    """Block ``v_l = dT (Q kron I) b_l`` of the composite right-hand side, plus u0 for l = 0."""
    grid = ivp.grid
    m = tableau.m_nodes
    out = np.zeros((m, ivp.dim), dtype=complex)
    if not ivp.homogeneous:
        b = np.stack([ivp.forcing(t) for t in grid.node_times(l, tableau)])
        out += grid.dt * (tableau.q_matrix @ b)
    if l == 0:
        out += ivp.initial[None, :]
    return out


def composite_rhs(ivp: LinearIVP, grid: TimeGrid, tableau: CollocationTableau) -> np.ndarray:
    """All-at-once right-hand side, shape (L, M, N)."""
    if grid != ivp.grid:
        raise ValueError("time grid does not match the problem's grid")
    if ivp.operator.shape != (ivp.dim, ivp.dim):
        raise ValueError("operator and initial value dimensions disagree")
    return np.stack([step_rhs(ivp, tableau, l) for l in range(grid.L)])


def make_problem(equation: str, *, n_per_dim=None, order=None, T: float, L: int, lam=None) -> LinearIVP:
    if equation == "heat":
        return make_heat(n_per_dim, order, T, L)
    if equation == "advection":
        return make_advection(n_per_dim, order, T, L)
    if equation == "dahlquist":
        return make_dahlquist(-1.0 if lam is None else lam, T, L)
    raise ValueError(f"unknown equation {equation!r}")
