"""Restarted GMRES for the shifted systems ``(I - s A) x = y``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_RESTART = 50
MAX_ITER_CAP = 10_000


@dataclass(frozen=True)
class ShiftedOperator:
    """``x -> x - shift * (A @ x)`` for a sparse or dense A."""

    base: object
    shift: complex

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    def __matmul__(self, x: np.ndarray) -> np.ndarray:
        if self.shift == 0:
            return x.copy()
        return x - self.shift * (self.base @ x)


@dataclass
class SolveStats:
    iterations: int
    residual: float  # true relative 2-norm residual of the returned iterate
    converged: bool
    history: list = field(default_factory=list)  # Arnoldi residual estimates, relative


def _givens(a: complex, b: float) -> tuple[float, complex, complex]:
    """Real c, complex s with [[c, s], [-conj(s), c]] @ [a, b] = [nu, 0]."""
    if b == 0.0:
        return 1.0, 0.0j, a
    if a == 0.0:
        return 0.0, 1.0 + 0.0j, complex(b)
    abs_a = abs(a)
    nu = np.hypot(abs_a, b)
    phase = a / abs_a
    return abs_a / nu, phase * b / nu, phase * nu


def gmres(op, rhs, tol: float = 1e-10, max_iter: int | None = None, restart: int = DEFAULT_RESTART,
          x0=None) -> tuple[np.ndarray, SolveStats]:
    """Solve ``op @ x = rhs`` to relative 2-norm residual ``tol``.

    Classical Gram-Schmidt with one reorthogonalization pass, Givens-rotated
    least squares.  Non-convergence is reported through the stats, not raised;
    a restart cycle that fails to reduce the true residual ends the solve.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.array(rhs, dtype=complex, copy=True)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite values")
    n = b.shape[0]
    if max_iter is None:
        max_iter = min(10 * n, MAX_ITER_CAP)
    restart = max(1, min(restart, max_iter))

    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex, copy=True)
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(n, dtype=complex), SolveStats(0, 0.0, True)

    history = []
    total = 0
    prev_beta = np.inf
    while True:
        r = b - op @ x
        beta = np.linalg.norm(r)
        if beta <= tol * b_norm:
            return x, SolveStats(total, beta / b_norm, True, history)
        if total >= max_iter or beta >= prev_beta:
            return x, SolveStats(total, beta / b_norm, False, history)
        prev_beta = beta

        basis = np.zeros((restart + 1, n), dtype=complex)
        hess = np.zeros((restart + 1, restart), dtype=complex)
        cs = np.zeros(restart)
        sn = np.zeros(restart, dtype=complex)
        g = np.zeros(restart + 1, dtype=complex)
        g[0] = beta
        basis[0] = r / beta
        k = 0
        for j in range(restart):
            w = op @ basis[j]
            h = basis[: j + 1].conj() @ w
            w = w - h @ basis[: j + 1]
            h2 = basis[: j + 1].conj() @ w
            w = w - h2 @ basis[: j + 1]
            hess[: j + 1, j] = h + h2
            h_next = np.linalg.norm(w)
            for i in range(j):
                t = cs[i] * hess[i, j] + sn[i] * hess[i + 1, j]
                hess[i + 1, j] = -np.conj(sn[i]) * hess[i, j] + cs[i] * hess[i + 1, j]
                hess[i, j] = t
            cs[j], sn[j], hess[j, j] = _givens(hess[j, j], h_next)
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]
            total += 1
            k = j + 1
            history.append(abs(g[j + 1]) / b_norm)
            if h_next == 0.0 or abs(g[j + 1]) <= tol * b_norm or total >= max_iter:
                break
            basis[j + 1] = w / h_next
        y = np.zeros(k, dtype=complex)
        for i in range(k - 1, -1, -1):
            y[i] = (g[i] - hess[i, i + 1 : k] @ y[i + 1 : k]) / hess[i, i]
        x = x + y @ basis[:k]
