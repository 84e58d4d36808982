"""One Paralpha iteration, the sequential collocation baseline and the serial driver.

Nothing global is ever assembled.  The composite system couples L step blocks
(each M stages of length N) through ``u_l`` depending on the last stage of
``u_{l-1}``; the preconditioner closes that chain with the factor ``alpha``.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .collocation import CollocationTableau
from .krylov import DEFAULT_RESTART, ShiftedOperator, gmres
from .problems import LinearIVP, composite_rhs
from .schedule import (
    EPS_DEFAULT,
    AlphaSchedule,
    AlphaSequence,
    ScheduleConfig,
    StagnationRisk,
    should_stop,
)
from .spectral import (
    MAX_RESULTANT_NODES,
    CirculantFactors,
    NotDiagonalizable,
    StepFactors,
    bitrev_table,
    diagonalize_circulant,
    factor_step,
    forbidden_alphas,
    forward_transform,
    inverse_transform,
    stage_combine,
)

log = logging.getLogger(__name__)

ALPHA_MARGIN = 1e-2
MAX_ALPHA_RETRIES = 8


class InnerSolveError(RuntimeError):
    def __init__(self, step: int, node: int, residual: float, iterations: int):
        super().__init__(
            f"inner GMRES failed at step {step}, node {node}: "
            f"relative residual {residual:.3e} after {iterations} iterations"
        )
        self.step = step
        self.node = node
        self.residual = residual
        self.iterations = iterations


class ForbiddenAlphaError(ValueError):
    """alpha lies within the safety margin of a defective radius."""


@dataclass
class CompositeState:
    u: np.ndarray  # (L, M, N)
    k: int = 0
    last_step_prev: Optional[np.ndarray] = None

    @property
    def last_step(self) -> np.ndarray:
        return self.u[-1]


def initial_state(ivp: LinearIVP, tableau: CollocationTableau) -> CompositeState:
    """Initial value replicated over every step and stage."""
    L, m = ivp.grid.L, tableau.m_nodes
    u = np.broadcast_to(ivp.initial.astype(complex), (L, m, ivp.dim)).copy()
    return CompositeState(u=u, k=0, last_step_prev=None)


def residual_rhs(u: np.ndarray, w: np.ndarray, alpha: float) -> np.ndarray:
    """``(C_alpha - C) u + w``: only the first block picks up ``-alpha`` times the last stage of u_L."""
    if u.shape != w.shape:
        raise ValueError(f"state shape {u.shape} does not match right-hand side {w.shape}")
    r = np.array(w, dtype=complex, copy=True)
    r[0] -= alpha * u[-1, -1][None, :]
    return r


def inner_step_solve(x: np.ndarray, factors: StepFactors, dt: float, ivp: LinearIVP, tau: float,
                     restart: int = DEFAULT_RESTART, step: int = -1) -> tuple[np.ndarray, int]:
    """Solve ``(G_l kron I - dT Q kron A) y = x`` for one step block.

    Returns the block and the number of GMRES iterations spent.
    """
    x1 = stage_combine(factors.s_inverse, x)
    x2 = np.empty_like(x1)
    iters = 0
    for m, lam in enumerate(factors.d_inner):
        op = ShiftedOperator(ivp.operator, lam * dt)
        x2[m], stats = gmres(op, x1[m], tol=tau, restart=restart)
        iters += stats.iterations
        if not stats.converged:
            raise InnerSolveError(step, m, stats.residual, stats.iterations)
    z = stage_combine(factors.s_matrix, x2)
    return stage_combine(factors.g_inverse, z), iters


@dataclass
class IterationStats:
    alpha: float
    gmres_iters: int = 0
    t_transform: float = 0.0
    t_solve: float = 0.0
    t_comm: float = 0.0


@dataclass
class SolverContext:
    ivp: LinearIVP
    tableau: CollocationTableau
    tau: float = 1e-12
    restart: int = DEFAULT_RESTART
    forbidden: Optional[list] = None  # alpha_* radii to keep away from

    def __post_init__(self):
        if self.forbidden is None:
            self.forbidden = forbidden_radii(self.tableau, self.ivp.grid.L)

    @property
    def L(self) -> int:
        return self.ivp.grid.L

    @property
    def dt(self) -> float:
        return self.ivp.grid.dt


def forbidden_radii(tableau: CollocationTableau, L: int) -> list[float]:
    if tableau.m_nodes > MAX_RESULTANT_NODES:
        log.info("no resultant guard for M=%d; relying on the eigen-decomposition check", tableau.m_nodes)
        return []
    return sorted({round(f.alpha_star, 15) for f in forbidden_alphas(tableau, L)})


def near_forbidden(alpha: float, radii, margin: float = ALPHA_MARGIN) -> Optional[float]:
    for a_star in radii:
        if abs(alpha - a_star) < margin * a_star:
            return a_star
    return None


def guard_alpha(alpha: float, radii, margin: float = ALPHA_MARGIN) -> float:
    """Move alpha just above any forbidden radius it is too close to."""
    out = alpha
    for _ in range(len(radii) + 1):
        hit = near_forbidden(out, radii, margin)
        if hit is None:
            break
        out = hit * (1.0 + margin)
    if out != alpha:
        log.warning("alpha %.6g is within %.0e of forbidden radius; using %.6g", alpha, margin, out)
    if not out < 1.0:
        raise ForbiddenAlphaError(f"no admissible alpha near {alpha}")
    return out


def step_factor_table(ctx: SolverContext, circ: CirculantFactors) -> list[StepFactors]:
    """Factors for each butterfly output slot p, built from spectral index bitrev(p)."""
    rev = bitrev_table(ctx.L)
    return [factor_step(ctx.tableau, circ.d[rev[p]], int(rev[p])) for p in range(ctx.L)]


def paralpha_iteration(state: CompositeState, w: np.ndarray, alpha: float,
                       ctx: SolverContext) -> tuple[CompositeState, IterationStats]:
    """``u <- C_alpha^{-1} ((C_alpha - C) u + w)`` via the two diagonalizations."""
    hit = near_forbidden(alpha, ctx.forbidden)
    if hit is not None:
        raise ForbiddenAlphaError(f"alpha={alpha:.6g} within {ALPHA_MARGIN:.0e} of {hit:.6g}")
    stats = IterationStats(alpha=alpha)
    circ = diagonalize_circulant(ctx.L, alpha)
    table = step_factor_table(ctx, circ)

    r = residual_rhs(state.u, w, alpha)
    t0 = time.perf_counter()
    xhat = forward_transform(r, circ)
    stats.t_transform += time.perf_counter() - t0

    t0 = time.perf_counter()
    y = np.empty_like(xhat)
    for p, sf in enumerate(table):
        y[p], it = inner_step_solve(xhat[p], sf, ctx.dt, ctx.ivp, ctx.tau, ctx.restart, step=sf.l_index)
        stats.gmres_iters += it
    stats.t_solve += time.perf_counter() - t0

    t0 = time.perf_counter()
    u_new = inverse_transform(y, circ)
    stats.t_transform += time.perf_counter() - t0
    new = CompositeState(u=u_new, k=state.k + 1, last_step_prev=state.u[-1].copy())
    return new, stats


@dataclass
class SequentialResult:
    u: np.ndarray  # (L, M, N)
    gmres_iters: list
    final_error: Optional[float]
    wall_s: float

    @property
    def final(self) -> np.ndarray:
        return self.u[-1, -1]


def sequential_solve(ivp: LinearIVP, tableau: CollocationTableau, tau: float = 1e-12,
                     restart: int = DEFAULT_RESTART) -> SequentialResult:
    """March the collocation steps one after another, diagonalizing Q once."""
    factors = factor_step(tableau, 0.0)
    w = composite_rhs(ivp, ivp.grid, tableau)
    L = ivp.grid.L
    u = np.empty_like(w)
    iters = []
    t0 = time.perf_counter()
    for l in range(L):
        x = w[l] if l == 0 else w[l] + u[l - 1, -1][None, :]
        u[l], it = inner_step_solve(x, factors, ivp.grid.dt, ivp, tau, restart, step=l)
        iters.append(it)
    wall = time.perf_counter() - t0
    err = None
    if ivp.exact is not None:
        err = float(np.max(np.abs(u[-1, -1] - ivp.exact(ivp.grid.t_end))))
    return SequentialResult(u=u, gmres_iters=iters, final_error=err, wall_s=wall)


# ---------------------------------------------------------------- driver


@dataclass
class IterationRecord:
    k: int
    alpha: float
    m_k: Optional[float]
    consec_diff: float
    true_err: Optional[float]
    exact_err: Optional[float]
    gmres_iters: int
    wall_s: float


@dataclass
class SolveResult:
    u: np.ndarray
    records: list
    converged: bool
    reason: str
    gamma: Optional[float]
    alpha_adjustments: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.records)


def make_alpha_source(mode: str, *, gamma=None, m0=None, tol=None, alpha=None, sequence=None):
    if mode == "adaptive":
        return AlphaSchedule(gamma=gamma, tol=tol, m_seq=[m0])
    if mode == "fixed":
        return AlphaSequence([alpha])
    if mode == "sequence":
        return AlphaSequence(list(sequence))
    raise ValueError(f"unknown alpha mode {mode!r}")


def last_block_errors(u: np.ndarray, ivp: LinearIVP, reference: Optional[np.ndarray]):
    true_err = None if reference is None else float(np.max(np.abs(u[-1] - reference)))
    exact_err = None
    if ivp.exact is not None:
        exact_err = float(np.max(np.abs(u[-1, -1] - ivp.exact(ivp.grid.t_end))))
    return true_err, exact_err


def paralpha_solve(ivp: LinearIVP, tableau: CollocationTableau, *, tol: float, tau: float = 1e-12,
                   alpha_mode: str = "adaptive", m0: Optional[float] = None, alpha: Optional[float] = None,
                   sequence=None, eps: float = EPS_DEFAULT, max_iter: int = 50,
                   restart: int = DEFAULT_RESTART, reference: Optional[np.ndarray] = None,
                   iterate=None) -> SolveResult:
    """Adaptive (or prescribed) alpha loop with the last-step stopping test.

    ``reference`` is the last step block of the composite solution; errors in
    the records are measured against it.  ``iterate`` replaces the serial
    :func:`paralpha_iteration` (the distributed runtime plugs in here).
    """
    ctx = SolverContext(ivp, tableau, tau=tau, restart=restart)
    w = composite_rhs(ivp, ivp.grid, tableau)
    w_norm = float(np.max(np.abs(w)))
    gamma = None
    if alpha_mode == "adaptive":
        if m0 is None:
            raise ValueError("adaptive mode needs m0")
        gamma = ScheduleConfig(tau=tau, L=ctx.L, w_norm=w_norm, m0=m0, tol=tol, eps=eps).gamma
    source = make_alpha_source(alpha_mode, gamma=gamma, m0=m0, tol=tol, alpha=alpha, sequence=sequence)
    step = iterate or paralpha_iteration

    state = initial_state(ivp, tableau)
    records = []
    timings = {"transform": 0.0, "solve": 0.0, "comm": 0.0}
    converged, reason = False, "max_iter"
    while len(records) < max_iter:
        if source.exhausted:
            converged, reason = True, "m_k"
            break
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", StagnationRisk)
            a_k, m_next = source.next_alpha(guard=lambda a: guard_alpha(a, ctx.forbidden))
        for wmsg in caught:
            log.warning("%s", wmsg.message)
        t0 = time.perf_counter()
        for attempt in range(MAX_ALPHA_RETRIES + 1):
            try:
                new, stats = step(state, w, a_k, ctx)
                break
            except NotDiagonalizable as exc:
                if attempt == MAX_ALPHA_RETRIES:
                    raise
                bumped = a_k * (1.0 + ALPHA_MARGIN)
                log.warning("%s; retrying with alpha=%.6g", exc, bumped)
                source.adjustments.append((source.k, a_k, bumped))
                source.alpha_seq[-1] = bumped
                a_k = bumped
        wall = time.perf_counter() - t0
        timings["transform"] += stats.t_transform
        timings["solve"] += stats.t_solve
        timings["comm"] += stats.t_comm
        diff = float(np.max(np.abs(new.u[-1] - state.u[-1])))
        true_err, exact_err = last_block_errors(new.u, ivp, reference)
        records.append(IterationRecord(new.k, a_k, m_next, diff, true_err, exact_err, stats.gmres_iters, wall))
        state = new
        if should_stop(new.u[-1], new.last_step_prev, tol):
            converged, reason = True, "consec_diff"
            break
    return SolveResult(
        u=state.u,
        records=records,
        converged=converged,
        reason=reason,
        gamma=gamma,
        alpha_adjustments=list(source.adjustments),
        timings=timings,
    )
