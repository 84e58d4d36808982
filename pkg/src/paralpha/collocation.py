"""Right-included Gauss-Radau collocation on [0, 1].

Nodes are the roots of ``P_{M-1} + P_M`` mapped from [-1, 1] by
``x = 1 - 2t``, so the left Radau point ``x = -1`` becomes ``t = 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from numpy.polynomial import Polynomial

MAX_NODES = 9
NEWTON_TOL = 1e-14
NEWTON_MAXITER = 100


class RootRefinementError(RuntimeError):
    """Newton polishing of the Radau nodes did not converge."""


@dataclass(frozen=True)
class CollocationTableau:
    m_nodes: int
    nodes: np.ndarray
    q_matrix: np.ndarray
    w_poly: np.ndarray  # monic, ascending: b_0, ..., b_{M-1}, 1

    @property
    def d_t(self) -> np.ndarray:
        return np.diag(self.nodes)

    @property
    def h_matrix(self) -> np.ndarray:
        h = np.zeros((self.m_nodes, self.m_nodes))
        h[:, -1] = 1.0
        return h

    def to_json(self) -> str:
        return json.dumps(
            {
                "m_nodes": self.m_nodes,
                "nodes": self.nodes.tolist(),
                "q_matrix": self.q_matrix.tolist(),
                "w_poly": self.w_poly.tolist(),
            },
            indent=2,
        )


def _check_m(m: int) -> None:
    if not isinstance(m, (int, np.integer)) or m <= 0:
        raise ValueError(f"number of nodes must be a positive integer, got {m!r}")
    if m > MAX_NODES:
        raise ValueError(
            f"M={m} exceeds {MAX_NODES}; monomial-based integration and node "
            "refinement are only validated up to that size"
        )


def _legendre_pair(n: int, x: float) -> tuple[float, float]:
    """Value and derivative of ``P_{n-1} + P_n`` at x (three-term recurrence)."""
    p_prev, p = 1.0, x
    dp_prev, dp = 0.0, 1.0
    if n == 1:
        return p_prev + p, dp_prev + dp
    for k in range(1, n):
        p_next = ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
        dp_next = dp_prev + (2 * k + 1) * p
        p_prev, p = p, p_next
        dp_prev, dp = dp, dp_next
    return p_prev + p, dp_prev + dp


def radau_nodes(m: int) -> np.ndarray:
    """Right-included Gauss-Radau nodes on (0, 1], ascending, last node exactly 1.

    Newton iterations on ``P_{M-1} + P_M`` start from Chebyshev-Gauss-Radau
    points ``-cos(2 pi j / (2M - 1))``; the fixed root ``x = -1`` is not refined.
    """
    _check_m(m)
    if m == 1:
        return np.array([1.0])
    roots = [-1.0]
    for j in range(1, m):
        x = -np.cos(2.0 * np.pi * j / (2 * m - 1))
        for _ in range(NEWTON_MAXITER):
            val, der = _legendre_pair(m, x)
            step = val / der
            x -= step
            if abs(step) <= NEWTON_TOL:
                break
        else:
            raise RootRefinementError(f"Newton did not converge for root {j} of M={m}")
        roots.append(x)
    nodes = np.sort((1.0 - np.asarray(roots)) / 2.0)
    nodes[-1] = 1.0
    if np.any(np.diff(nodes) <= 0.0) or nodes[0] <= 0.0:
        raise RootRefinementError(f"Newton collapsed onto repeated roots for M={m}")
    return nodes


def _poly_mul_shift(coeffs: list, factor: list) -> list:
    out = [Fraction(0)] * (len(coeffs) + len(factor) - 1)
    for i, a in enumerate(coeffs):
        for j, b in enumerate(factor):
            out[i + j] += a * b
    return out


def _poly_add(a: list, b: list) -> list:
    n = max(len(a), len(b))
    a = a + [Fraction(0)] * (n - len(a))
    b = b + [Fraction(0)] * (n - len(b))
    return [x + y for x, y in zip(a, b)]


def radau_poly_exact(m: int) -> list[Fraction]:
    """Exact monic node polynomial w_M in t as ascending rational coefficients."""
    _check_m(m)
    x_of_t = [Fraction(1), Fraction(-2)]  # x = 1 - 2t
    p_prev, p = [Fraction(1)], list(x_of_t)
    for k in range(1, m):
        term = [c * Fraction(2 * k + 1, k + 1) for c in _poly_mul_shift(p, x_of_t)]
        back = [-c * Fraction(k, k + 1) for c in p_prev]
        p_prev, p = p, _poly_add(term, back)
    r = _poly_add(p_prev, p)
    lead = r[-1]
    return [c / lead for c in r]


def radau_poly(m: int) -> np.ndarray:
    """Monic coefficients ``b_0, ..., b_{M-1}, 1`` of the Radau node polynomial."""
    return np.array([float(c) for c in radau_poly_exact(m)])


def build_tableau(nodes) -> CollocationTableau:
    """Collocation tableau with ``q[m, i] = int_0^{t_m} c_i(s) ds``.

    Each Lagrange basis polynomial is expanded in monomials and integrated
    analytically.
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 1 or nodes.size == 0:
        raise ValueError("nodes must be a non-empty 1-D sequence")
    if np.unique(nodes).size != nodes.size:
        raise ValueError("duplicate collocation nodes")
    if np.any(np.diff(nodes) <= 0.0):
        raise ValueError("nodes must be strictly increasing")
    if nodes[0] <= 0.0 or nodes[-1] > 1.0:
        raise ValueError("nodes must lie in (0, 1]")
    m = nodes.size
    q = np.empty((m, m))
    for i in range(m):
        others = np.delete(nodes, i)
        if others.size == 0:
            basis = Polynomial([1.0])
        else:
            basis = Polynomial.fromroots(others) / np.prod(nodes[i] - others)
        antideriv = basis.integ(lbnd=0.0)
        q[:, i] = antideriv(nodes)
    w = Polynomial.fromroots(nodes).coef
    w = w / w[-1]
    return CollocationTableau(m_nodes=m, nodes=nodes, q_matrix=q, w_poly=w)


def radau_tableau(m: int) -> CollocationTableau:
    """Tableau on the Radau nodes, with the exact node polynomial attached."""
    tab = build_tableau(radau_nodes(m))
    return CollocationTableau(
        m_nodes=tab.m_nodes, nodes=tab.nodes, q_matrix=tab.q_matrix, w_poly=radau_poly(m)
    )
