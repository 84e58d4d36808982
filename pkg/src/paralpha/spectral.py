"""Circulant diagonalization, radix-2 butterflies and inner step factorization.

DFT convention
--------------
The eigenvector matrix of the alpha-circulant step coupling is ``V = J F / L``
with ``F[j, k] = exp(+2 pi i j k / L)`` and ``V^{-1} = F^* J^{-1}``.  ``F^*``
carries the negative exponent, i.e. it is the ordinary forward DFT
(``numpy.fft.fft``), and ``F / L`` is ``numpy.fft.ifft``.  The forward transform
below therefore scales by ``J^{-1}`` and runs a decimation-in-frequency FFT,
leaving slot ``p`` with spectral index ``bitrev(p)``; the inverse transform
consumes that order with a decimation-in-time pass and restores natural order.

Every butterfly is written in terms of :func:`dif_butterfly` /
:func:`dit_butterfly` acting on one pair of blocks, so a distributed run that
exchanges blocks between ranks performs bit-for-bit the same arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from math import factorial

import numpy as np

from .collocation import CollocationTableau, radau_nodes, radau_poly_exact

GAP_RTOL = 1e-8
EIGVEC_COND_MAX = 1e7
MAX_RESULTANT_NODES = 5


class NotDiagonalizable(ArithmeticError):
    """QG^{-1} has (numerically) repeated eigenvalues for this shift."""


class ResultantRootError(RuntimeError):
    pass


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _check_pow2(n: int) -> None:
    if not is_power_of_two(n):
        raise ValueError(f"number of steps must be a power of two, got {n}")


def bitrev(p: int, n: int) -> int:
    """Reverse the log2(n) low bits of p."""
    bits = n.bit_length() - 1
    out = 0
    for _ in range(bits):
        out = (out << 1) | (p & 1)
        p >>= 1
    return out


def bitrev_table(n: int) -> np.ndarray:
    """``table[p]`` is the spectral index stored in butterfly output slot p."""
    _check_pow2(n)
    return np.array([bitrev(p, n) for p in range(n)], dtype=int)


def twiddle(j: int, span: int, sign: int) -> complex:
    return complex(np.exp(sign * 2j * np.pi * j / span))


def dif_butterfly(upper: bool, mine: np.ndarray, theirs: np.ndarray, w: complex) -> np.ndarray:
    """One decimation-in-frequency output for the slot holding ``mine``.

    ``upper`` marks the slot with the stride bit cleared.
    """
    if upper:
        return mine + theirs
    return (theirs - mine) * w


def dit_butterfly(upper: bool, mine: np.ndarray, theirs: np.ndarray, w: complex) -> np.ndarray:
    if upper:
        return mine + theirs * w
    return theirs - mine * w


def dif_stage_params(p: int, n: int, stage: int) -> tuple[int, bool, complex]:
    """Partner slot, upper flag and twiddle for slot p at DIF stage ``stage``."""
    half = n >> (stage + 1)
    upper = (p & half) == 0
    return p ^ half, upper, twiddle(p % half, 2 * half, -1)


def dit_stage_params(p: int, n: int, stage: int) -> tuple[int, bool, complex]:
    half = 1 << stage
    upper = (p & half) == 0
    return p ^ half, upper, twiddle(p % half, 2 * half, +1)


@dataclass(frozen=True)
class CirculantFactors:
    L: int
    alpha: float
    d: np.ndarray
    j_scale: np.ndarray  # diagonal of J: alpha^{-l/L}

    def forward_scale(self, l: int) -> float:
        """Diagonal entry of J^{-1} for (0-based) step l."""
        return self.alpha ** (l / self.L)

    def inverse_scale(self, l: int) -> float:
        """J entry divided by L (the 1/L of V folded in)."""
        return self.alpha ** (-l / self.L) / self.L

    def eigen_matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Dense ``V``, ``D``, ``V^{-1}``; for tests at small L."""
        idx = np.arange(self.L)
        f = np.exp(2j * np.pi * np.outer(idx, idx) / self.L)
        v = np.diag(self.j_scale) @ f / self.L
        v_inv = f.conj().T @ np.diag(1.0 / self.j_scale)
        return v, np.diag(self.d), v_inv


def circulant_matrix(L: int, alpha: float) -> np.ndarray:
    """Dense E_alpha: -1 on the subdiagonal, -alpha in the top-right corner."""
    e = np.zeros((L, L))
    e[np.arange(1, L), np.arange(L - 1)] = -1.0
    e[0, L - 1] -= alpha
    return e


def diagonalize_circulant(L: int, alpha: float, *, strict: bool = True) -> CirculantFactors:
    """Eigenvalues ``d_l = -alpha^{1/L} exp(-2 pi i (l-1)/L)`` and the J scaling.

    ``strict=False`` admits alpha = 1, which is useful for checking the bare
    transforms but makes every ``G_l`` with ``d_l = -1`` singular.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if not (0.0 < alpha < 1.0) and not (alpha == 1.0 and not strict):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    idx = np.arange(L)
    d = -(alpha ** (1.0 / L)) * np.exp(-2j * np.pi * idx / L)
    j_scale = alpha ** (-idx / L)
    return CirculantFactors(L=L, alpha=float(alpha), d=d, j_scale=j_scale)


def forward_transform(blocks: np.ndarray, factors: CirculantFactors) -> np.ndarray:
    """Apply ``V^{-1} = F^* J^{-1}`` blockwise; output in bit-reversed order."""
    n = factors.L
    _check_pow2(n)
    blocks = np.asarray(blocks, dtype=complex)
    if blocks.shape[0] != n:
        raise ValueError(f"expected {n} blocks, got {blocks.shape[0]}")
    cur = [blocks[l] * factors.forward_scale(l) for l in range(n)]
    for stage in range(n.bit_length() - 1):
        nxt = []
        for p in range(n):
            partner, upper, w = dif_stage_params(p, n, stage)
            nxt.append(dif_butterfly(upper, cur[p], cur[partner], w))
        cur = nxt
    return np.stack(cur)


def inverse_transform(blocks: np.ndarray, factors: CirculantFactors) -> np.ndarray:
    """Apply ``V = J F / L`` to bit-reversed input; output in natural order."""
    n = factors.L
    _check_pow2(n)
    blocks = np.asarray(blocks, dtype=complex)
    if blocks.shape[0] != n:
        raise ValueError(f"expected {n} blocks, got {blocks.shape[0]}")
    cur = [blocks[p] for p in range(n)]
    for stage in range(n.bit_length() - 1):
        nxt = []
        for p in range(n):
            partner, upper, w = dit_stage_params(p, n, stage)
            nxt.append(dit_butterfly(upper, cur[p], cur[partner], w))
        cur = nxt
    return np.stack([cur[l] * factors.inverse_scale(l) for l in range(n)])


def tree_sum(terms: list) -> np.ndarray:
    """Pairwise sum with a fixed binary-tree shape in ascending index order."""
    acc = list(terms)
    stride = 1
    while stride < len(acc):
        for i in range(0, len(acc), 2 * stride):
            if i + stride < len(acc):
                acc[i] = acc[i] + acc[i + stride]
        stride *= 2
    return acc[0]


def stage_combine(mat: np.ndarray, stages: np.ndarray) -> np.ndarray:
    """``out[m] = sum_j mat[m, j] * stages[j]`` with :func:`tree_sum` ordering."""
    m = mat.shape[0]
    return np.stack([tree_sum([mat[i, j] * stages[j] for j in range(m)]) for i in range(m)])


@dataclass(frozen=True)
class StepFactors:
    l_index: int | None
    d_l: complex
    r_l: complex
    s_matrix: np.ndarray
    d_inner: np.ndarray
    s_inverse: np.ndarray
    g_inverse: np.ndarray

    @property
    def eigvec_cond(self) -> float:
        return float(np.linalg.cond(self.s_matrix))


def qg_inverse(tableau: CollocationTableau, r: complex) -> np.ndarray:
    """``Q G^{-1} = Q - r D_t H_M``: only the last column changes."""
    mat = tableau.q_matrix.astype(complex)
    mat[:, -1] -= r * tableau.nodes
    return mat


def factor_step(tableau: CollocationTableau, d_l: complex, l_index: int | None = None) -> StepFactors:
    """Eigendecompose ``Q G_l^{-1}`` for the circulant eigenvalue ``d_l``.

    Uses LAPACK (``numpy.linalg.eig``).  A matrix is rejected as numerically
    defective when its minimal eigenvalue gap is below ``1e-8`` times the
    spectral radius, or when the eigenvector matrix has condition number above
    ``1e7``: for an exactly defective matrix the computed eigenvalues split by
    about sqrt(eps), which the gap test alone does not catch.
    """
    d_l = complex(d_l)
    if 1.0 + d_l == 0.0:
        raise ZeroDivisionError("G_l is singular for d_l = -1")
    r_l = d_l / (1.0 + d_l)
    mat = qg_inverse(tableau, r_l)
    vals, vecs = np.linalg.eig(mat)
    m = tableau.m_nodes
    if m > 1:
        radius = np.max(np.abs(vals))
        gap = min(abs(vals[i] - vals[j]) for i in range(m) for j in range(i + 1, m))
        cond = np.linalg.cond(vecs)
        if gap < GAP_RTOL * radius or not np.isfinite(cond) or cond > EIGVEC_COND_MAX:
            raise NotDiagonalizable(
                f"QG^-1 near-defective at d_l={d_l:.6g} (r_l={r_l:.6g}): "
                f"eigenvalue gap {gap:.3e}, eigenvector condition {cond:.3e}"
            )
    s_inv = np.linalg.inv(vecs)
    g_inv = np.eye(m, dtype=complex)
    g_inv[:, -1] -= r_l
    return StepFactors(
        l_index=l_index,
        d_l=d_l,
        r_l=r_l,
        s_matrix=vecs,
        d_inner=vals,
        s_inverse=s_inv,
        g_inverse=g_inv,
    )


@dataclass(frozen=True)
class CharPoly:
    degree: int
    coefficients: np.ndarray  # ascending c_0 .. c_M, c_M = M!
    r: complex

    def roots(self) -> np.ndarray:
        return np.roots(self.coefficients[::-1])


def _char_coeffs(b: list, r, sign: int) -> list:
    """Coefficients of the scaled characteristic polynomial with ``r`` replaced by ``-sign * r``.

    ``c_0 = (1 - s) b_0``, ``c_m = m! b_m + s sum_j (m+j)!/j! b_{m+j}``, ``c_M = M!``
    with ``s = -sign * r``.  ``sign = -1`` gives the characteristic polynomial
    of ``Q - r D_t H_M``; ``sign = +1`` that of ``Q + r D_t H_M``.
    """
    m_deg = len(b) - 1
    rs = sign * r
    c = [(rs + 1) * b[0]]
    for m in range(1, m_deg):
        acc = 0
        for j in range(1, m_deg - m + 1):
            acc = acc + (factorial(m + j) // factorial(j)) * b[m + j]
        c.append(factorial(m) * b[m] - rs * acc)
    c.append(factorial(m_deg))
    return c


def _node_poly_exact(tableau: CollocationTableau) -> list:
    m = tableau.m_nodes
    try:
        radau = radau_nodes(m)
    except ValueError:
        radau = None
    if radau is not None and np.allclose(radau, tableau.nodes, rtol=0.0, atol=1e-12):
        return radau_poly_exact(m)
    return [Fraction(float(x)) for x in tableau.w_poly]


def char_poly(tableau: CollocationTableau, r: complex, *, flip_r: bool = False) -> CharPoly:
    """Scaled characteristic polynomial ``p_M`` of ``Q G^{-1}`` with ``c_M = M!``.

    By default the roots are the eigenvalues of ``Q - r D_t H_M``.  With
    ``flip_r=True`` r enters with the opposite sign (``c_0 = (r + 1) b_0``), a
    convention found in the literature; its roots are the eigenvalues of
    ``Q + r D_t H_M``.
    """
    b = [float(x) for x in _node_poly_exact(tableau)]
    coeffs = _char_coeffs(b, complex(r), +1 if flip_r else -1)
    return CharPoly(degree=tableau.m_nodes, coefficients=np.array(coeffs, dtype=complex), r=complex(r))


@dataclass(frozen=True)
class ForbiddenAlpha:
    r_star: complex
    alpha_star: float

    def to_dict(self) -> dict:
        return {"r_re": self.r_star.real, "r_im": self.r_star.imag, "alpha_star": self.alpha_star}


def discriminant_poly(tableau: CollocationTableau, *, flip_r: bool = False):
    """``Res(p_M, p_M')`` in the variable r, as a primitive integer sympy Poly."""
    import sympy as sp

    m = tableau.m_nodes
    if m > MAX_RESULTANT_NODES:
        raise ValueError(f"resultant analysis limited to M <= {MAX_RESULTANT_NODES}")
    r, lam = sp.symbols("r lam")
    b = [sp.Rational(x.numerator, x.denominator) for x in _node_poly_exact(tableau)]
    coeffs = _char_coeffs(b, r, +1 if flip_r else -1)
    p = sp.Poly(sum(sp.nsimplify(c) * lam**k for k, c in enumerate(coeffs)), lam)
    res = sp.resultant(p.as_expr(), sp.diff(p.as_expr(), lam), lam)
    poly = sp.Poly(sp.expand(res), r)
    _, prim = poly.clear_denoms()
    return prim.primitive()[1]


def forbidden_alphas(tableau: CollocationTableau, L: int, *, flip_r: bool = False) -> list[ForbiddenAlpha]:
    """Shifts r_* where ``Q G^{-1}`` is defective and the radii ``|r/(1-r)|^L``.

    A radius is where ``|d_l| = alpha^{1/L}`` meets ``|d_*|``; hitting the
    defect exactly also needs the phase of some d_l to align, so the radii are
    keep-away values rather than exact hits.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if tableau.m_nodes == 1:
        return []
    import mpmath
    import sympy as sp

    poly = discriminant_poly(tableau, flip_r=flip_r)
    if poly.degree() < 1:
        return []
    try:
        roots = poly.nroots(n=17, maxsteps=200)
    except mpmath.libmp.NoConvergence as exc:
        raise ResultantRootError(f"resultant root-finding failed: {exc}") from exc
    out = []
    for root in roots:
        rs = complex(sp.N(root, 17))
        if rs == 1.0:
            continue
        out.append(ForbiddenAlpha(r_star=rs, alpha_star=float(abs(rs / (1.0 - rs)) ** L)))
    return sorted(out, key=lambda f: f.alpha_star)
