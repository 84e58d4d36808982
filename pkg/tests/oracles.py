"""Independent reference implementations and frozen expected values.

Nothing here calls into the package's numerical kernels; the dense matrices
are assembled straight from their definitions.
"""

from __future__ import annotations

import numpy as np
from numpy.polynomial import legendre
from scipy.special import roots_legendre

SQRT6 = np.sqrt(6.0)
SQRT3 = np.sqrt(3.0)

FROZEN = {
    "radau_nodes": {
        1: [1.0],
        2: [1.0 / 3.0, 1.0],
        3: [(4.0 - SQRT6) / 10.0, (4.0 + SQRT6) / 10.0, 1.0],
    },
    "q_m2": [[5.0 / 12.0, -1.0 / 12.0], [3.0 / 4.0, 1.0 / 4.0]],
    # monic node polynomials, ascending
    "w_poly": {2: [1.0 / 3.0, -4.0 / 3.0, 1.0], 3: [-0.1, 0.9, -1.8, 1.0]},
    # characteristic polynomials in the r -> -r convention (ascending coefficients)
    "p2_flipped": lambda r: [(r + 1) / 3.0, -(4.0 / 3.0 + 2 * r), 2.0],
    "p3_flipped": lambda r: [-(r + 1) / 10.0, 9.0 / 10.0 + 3.0 / 5.0 * r, -(18.0 / 5.0 + 6 * r), 6.0],
    # discriminant polynomials, descending integer coefficients up to overall sign
    "disc_m2_flipped": [9, 6, -2],
    "disc_m3_flipped": [1700, 3560, 1872, 18, 9],
    "alpha_bases_m2": [0.323, 0.477],
    "alpha_bases_m3": [0.069, 0.504, 0.516],
    "r_star_m3_flipped": [-1.0678, -1.0259, complex(-0.000214, 0.069518), complex(-0.000214, -0.069518)],
    # defective shifts of Q - r D_t H_M for M=2: roots of 9 r^2 - 6 r - 2
    "r_star_m2_true": [(1.0 - SQRT3) / 3.0, (1.0 + SQRT3) / 3.0],
    # schedule example: gamma = 1e-16, m0 = 1e-2
    "schedule_step": {"gamma": 1e-16, "m0": 1e-2, "alpha1": 1e-7, "m1": 2e-9},
    # speedup example: L=64, M=3, k=4, T_sol = T_sol_par = 100
    "speedup_t_seq": 20352.0,
    "speedup_t_par": 4 * (100 + 2 * 6 + 9 * np.log2(3)),
    # reference alpha sequence for the advection configuration
    "advection_alphas": [6.19e-7, 5.56e-4, 1.67e-2, 9.13e-2],
}


def radau_nodes_oracle(m: int) -> np.ndarray:
    """Roots of P_{M-1} + P_M through the Legendre-series root finder, mapped by t = (1 - x)/2."""
    c = np.zeros(m + 1)
    c[m - 1] = 1.0
    c[m] = 1.0
    x = legendre.legroots(c)
    return np.sort((1.0 - x.real) / 2.0)


def q_matrix_oracle(nodes) -> np.ndarray:
    """Gauss-Legendre quadrature (exact at this degree) of each Lagrange basis polynomial."""
    nodes = np.asarray(nodes, dtype=float)
    m = nodes.size

    def basis(i, s):
        out = 1.0
        for j in range(m):
            if j != i:
                out *= (s - nodes[j]) / (nodes[i] - nodes[j])
        return out

    x, w = roots_legendre(m + 1)
    q = np.empty((m, m))
    for a in range(m):
        s = nodes[a] * (x + 1.0) / 2.0
        for i in range(m):
            q[a, i] = nodes[a] / 2.0 * np.sum(w * basis(i, s))
    return q


def e_alpha(L: int, alpha: float) -> np.ndarray:
    e = np.zeros((L, L))
    for l in range(1, L):
        e[l, l - 1] = -1.0
    e[0, L - 1] += -alpha
    return e


def circulant_eig_oracle(L: int, alpha: float):
    """V, D, V^{-1} from the closed-form definitions."""
    idx = np.arange(L)
    f = np.exp(2j * np.pi * np.outer(idx, idx) / L)
    j = np.diag(alpha ** (-idx / L))
    v = j @ f / L
    v_inv = np.conj(f).T @ np.diag(alpha ** (idx / L))
    d = np.diag(-(alpha ** (1.0 / L)) * np.exp(-2j * np.pi * idx / L))
    return v, d, v_inv


def bit_reverse(p: int, n: int) -> int:
    bits = int(np.log2(n))
    return int(format(p, f"0{bits}b")[::-1], 2) if bits else 0


def dense_composite(a: np.ndarray, q: np.ndarray, dt: float, L: int, alpha: float):
    """C and C_alpha assembled with Kronecker products."""
    m, n = q.shape[0], a.shape[0]
    c_coll = np.eye(m * n) - dt * np.kron(q, a)
    h_m = np.zeros((m, m))
    h_m[:, -1] = 1.0
    h = np.kron(h_m, np.eye(n))
    c = np.kron(np.eye(L), c_coll) + np.kron(e_alpha(L, 0.0), h)
    c_alpha = np.kron(np.eye(L), c_coll) + np.kron(e_alpha(L, alpha), h)
    return c, c_alpha


def heat_mode_amplitude(mu: float, t0: float, t: float) -> float:
    """Semi-discrete heat amplitude a' = -mu a + cos t + 8 pi^2 sin t, a(t0) = sin t0."""
    c = 8 * np.pi**2
    b = (mu * c + 1.0) / (1.0 + mu**2)
    a_ = mu * b - c
    p = lambda s: a_ * np.cos(s) + b * np.sin(s)
    return p(t) + (np.sin(t0) - p(t0)) * np.exp(-mu * (t - t0))


def heat_discrete_eigenvalue(coeffs, n: int) -> float:
    """-symbol of the 2-D stencil on the sin(2 pi x) sin(2 pi y) mode."""
    k = len(coeffs) // 2
    th = 2 * np.pi / n
    return -2.0 * sum(c * np.cos((j - k) * th) for j, c in enumerate(coeffs)) * n**2


def advection_semi_discrete(stencil: dict, n: int, u0: np.ndarray, t: float) -> np.ndarray:
    """Exact propagation of the upwind semi-discretization by FFT diagonalization."""
    th = 2 * np.pi * np.fft.fftfreq(n)
    s = sum(c * np.exp(1j * o * th) for o, c in stencil.items()) * n
    lam = -(s[:, None] + s[None, :])
    return np.fft.ifft2(np.exp(lam * t) * np.fft.fft2(u0.reshape(n, n))).ravel()


def collocation_step_dahlquist(lam: complex, q: np.ndarray, dt: float) -> complex:
    """Stability function of the collocation step, e_M^T (I - z Q)^{-1} 1."""
    m = q.shape[0]
    z = lam * dt
    return np.linalg.solve(np.eye(m) - z * q, np.ones(m))[-1]
