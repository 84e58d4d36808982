"""Adaptive choice of the circulant parameter and the outer stopping test.

Each iteration picks ``alpha`` minimizing ``alpha * m_k + gamma / alpha``, the
sum of the contraction estimate and the round-off estimate, with
``gamma = L (3 eps + tau) ||w||_inf``.  The minimizer is
``alpha_{k+1} = sqrt(gamma / m_k)`` with value ``m_{k+1} = 2 sqrt(m_k gamma)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

EPS_DEFAULT = 2.0**-52
ALPHA_MAX = 0.5


class StagnationRisk(UserWarning):
    """``4 gamma > m_k``: the error estimate no longer decreases."""


@dataclass(frozen=True)
class ScheduleConfig:
    tau: float
    L: int
    w_norm: float
    m0: float
    tol: float
    eps: float = EPS_DEFAULT

    def __post_init__(self):
        for name in ("tau", "w_norm", "m0", "tol", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.L < 1:
            raise ValueError("L must be >= 1")

    @property
    def gamma(self) -> float:
        return self.L * (3.0 * self.eps + self.tau) * self.w_norm


def closed_form_m(gamma: float, m0: float, k: int) -> float:
    """``m_k = (4 gamma)^{1 - 2^-k} m0^{2^-k}``."""
    e = 2.0**-k
    return (4.0 * gamma) ** (1.0 - e) * m0**e


@dataclass
class AlphaSchedule:
    gamma: float
    tol: float
    m_seq: list = field(default_factory=list)
    alpha_seq: list = field(default_factory=list)
    adjustments: list = field(default_factory=list)

    @classmethod
    def from_config(cls, cfg: ScheduleConfig) -> "AlphaSchedule":
        return cls(gamma=cfg.gamma, tol=cfg.tol, m_seq=[cfg.m0])

    @property
    def k(self) -> int:
        return len(self.alpha_seq)

    @property
    def m_current(self) -> float:
        return self.m_seq[-1]

    @property
    def exhausted(self) -> bool:
        """Worst-case estimate already below the tolerance."""
        return self.m_current <= self.tol

    def next_alpha(self, guard: Optional[Callable[[float], float]] = None) -> tuple[float, float]:
        m_k = self.m_current
        if not (self.gamma > 0 and m_k > 0):
            raise ValueError("gamma and m_k must be positive")
        if 4.0 * self.gamma > m_k:
            warnings.warn(
                f"4*gamma={4 * self.gamma:.3e} exceeds m_k={m_k:.3e}; no guaranteed descent",
                StagnationRisk,
                stacklevel=2,
            )
        m_next = 2.0 * math.sqrt(m_k * self.gamma)
        alpha = min(math.sqrt(self.gamma / m_k), ALPHA_MAX)
        if guard is not None:
            adjusted = guard(alpha)
            if adjusted != alpha:
                self.adjustments.append((self.k + 1, alpha, adjusted))
            alpha = adjusted
        self.m_seq.append(m_next)
        self.alpha_seq.append(alpha)
        return alpha, m_next

    def preview(self, max_steps: int = 200) -> list[tuple[int, float, float]]:
        """(k, alpha_k, m_k) rows until m_k <= tol, without touching this schedule."""
        probe = AlphaSchedule(gamma=self.gamma, tol=self.tol, m_seq=list(self.m_seq))
        rows = []
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StagnationRisk)
            while not probe.exhausted and probe.k < max_steps:
                alpha, m = probe.next_alpha()
                rows.append((probe.k, alpha, m))
        return rows


@dataclass
class AlphaSequence:
    """Prescribed values; the last one repeats once the list is used up."""

    values: list
    alpha_seq: list = field(default_factory=list)
    adjustments: list = field(default_factory=list)

    def __post_init__(self):
        if not self.values:
            raise ValueError("alpha sequence must not be empty")
        for a in self.values:
            if not 0.0 < a < 1.0:
                raise ValueError(f"alpha must lie in (0, 1), got {a}")

    @property
    def k(self) -> int:
        return len(self.alpha_seq)

    @property
    def exhausted(self) -> bool:
        return False

    @property
    def m_current(self):
        return None

    def next_alpha(self, guard=None) -> tuple[float, None]:
        alpha = self.values[min(self.k, len(self.values) - 1)]
        if guard is not None:
            adjusted = guard(alpha)
            if adjusted != alpha:
                self.adjustments.append((self.k + 1, alpha, adjusted))
            alpha = adjusted
        self.alpha_seq.append(alpha)
        return alpha, None


def estimate_m0(strategy: str, ivp, grid=None, value: float | None = None) -> float:
    """Initial error scale for the replicated-initial-value start.

    strategies: ``user`` (value), ``dt_multiple`` (value * dT) and
    ``operator_bound``: ``T (||A||_inf M_u + M_b)`` with ``M_u = ||u0||_inf``
    and ``M_b`` the largest forcing sample over the step boundaries.
    """
    grid = ivp.grid if grid is None else grid
    if strategy == "user":
        if value is None:
            raise ValueError("user strategy needs a value")
        m0 = float(value)
    elif strategy == "dt_multiple":
        m0 = (10.0 if value is None else float(value)) * grid.dt
    elif strategy == "operator_bound":
        span = grid.t_end - grid.t_start
        m_u = float(np.max(np.abs(ivp.initial)))
        if ivp.homogeneous:
            m_b = 0.0
        else:
            times = grid.t_start + grid.dt * np.arange(grid.L + 1)
            m_b = max(float(np.max(np.abs(ivp.forcing(t)))) for t in times)
        m0 = span * (ivp.operator_norm_inf() * m_u + m_b)
    else:
        raise ValueError(f"unknown m0 strategy {strategy!r}")
    if not m0 > 0:
        raise ValueError(f"m0 estimate must be positive, got {m0}")
    return m0


def should_stop(u_last_curr: np.ndarray, u_last_prev: np.ndarray, tol: float) -> bool:
    """Max-norm change of the last step block is at most ``tol`` (inclusive)."""
    if np.shape(u_last_curr) != np.shape(u_last_prev):
        raise ValueError("blocks differ in shape")
    return bool(np.max(np.abs(np.asarray(u_last_curr) - np.asarray(u_last_prev))) <= tol)


def roundoff_bound(L: int, alpha: float, eps: float, tau: float, r_norm: float,
                   binv_norm: float = 1.0, cond_b: float = 1.0) -> tuple[float, float]:
    """Per-iteration error from round-off and inexact inner solves.

    Returns the full bound
    ``||B^-1|| / (1 - eps k(B)) * L (2 eps + tau + eps k(B)) / alpha * ||r||``
    and the simplified ``L (3 eps + tau) / alpha * ||r||`` used by the schedule.
    """
    if eps * cond_b >= 1.0:
        raise ValueError("eps * cond(B) must be below 1")
    full = binv_norm / (1.0 - eps * cond_b) * L * (2 * eps + tau + eps * cond_b) / alpha * r_norm
    simple = L * (3 * eps + tau) / alpha * r_norm
    return full, simple


def block_roundoff_bound(L: int, alpha: float, eps: float, tau: float, r_norm: float,
                         binv_norm: float = 1.0, cond_b: float = 1.0) -> np.ndarray:
    """Per-block version: block l (0-based) carries the factor ``alpha^{-l/L}`` instead of 1/alpha."""
    if eps * cond_b >= 1.0:
        raise ValueError("eps * cond(B) must be below 1")
    base = binv_norm / (1.0 - eps * cond_b) * L * (2 * eps + tau + eps * cond_b) * r_norm
    return base * alpha ** (-np.arange(L) / L)
