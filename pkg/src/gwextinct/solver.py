"""Minimal nonnegative fixed points of truncated systems, plus the driver
that sweeps the truncation level k until a target component stabilizes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .progeny import InvalidTypeError, ProgenyModel
from .truncation import TruncatedSystem, TruncationMode, build_truncated

_NEWTON_ITER_CAP = 200
_ONES_GUARD = 1e-7  # warm result this close to all-ones triggers a cold re-solve


class NonConvergenceError(RuntimeError):
    """Iteration budget exhausted; carries the last iterate."""

    def __init__(self, message: str, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass
class SolverConfig:
    inner_tol: float = 1e-12
    outer_eps: float = 1e-8
    max_inner_iter: int = 10**6
    max_k: int = 10**4
    method: str = "functional"  # "functional" | "newton"
    k_stride: int = 1
    warm_start: bool = True
    debug_verify_minimal: bool = False

    def __post_init__(self) -> None:
        if self.inner_tol <= 0 or self.outer_eps <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_inner_iter < 1 or self.max_k < 1 or self.k_stride < 1:
            raise ValueError("iteration counters must be >= 1")
        if self.method not in ("functional", "newton"):
            raise ValueError(f"unknown method {self.method!r}")


def _functional(system: TruncatedSystem, cfg: SolverConfig, start) -> tuple[np.ndarray, int]:
    x = np.zeros(system.n) if start is None else np.asarray(start, dtype=float).copy()
    for it in range(1, cfg.max_inner_iter + 1):
        y = system.eval(x)
        if float(np.max(np.abs(y - x))) <= cfg.inner_tol:
            return np.clip(y, 0.0, 1.0), it
        x = y
    raise NonConvergenceError(
        f"functional iteration did not converge in {cfg.max_inner_iter} steps",
        last_iterate=x,
    )


def _newton(system: TruncatedSystem, cfg: SolverConfig, start) -> tuple[np.ndarray, int]:
    n = system.n
    x = np.zeros(n) if start is None else np.asarray(start, dtype=float).copy()
    g = system.eval(x)
    res = float(np.max(np.abs(g - x)))
    eye = np.eye(n)
    for it in range(1, min(cfg.max_inner_iter, _NEWTON_ITER_CAP) + 1):
        if res <= cfg.inner_tol:
            return np.clip(x, 0.0, 1.0), it
        jac = eye - system.jacobian(x)
        try:
            step = np.linalg.solve(jac, g - x)
        except np.linalg.LinAlgError:
            return _functional(system, cfg, start)
        if not np.all(np.isfinite(step)):
            return _functional(system, cfg, start)
        t = 1.0
        accepted = False
        while t >= 1e-8:
            xn = np.clip(x + t * step, 0.0, 1.0)
            gn = system.eval(xn)
            rn = float(np.max(np.abs(gn - xn)))
            if rn < res:
                x, g, res = xn, gn, rn
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return _functional(system, cfg, start)
    if res <= cfg.inner_tol:
        return np.clip(x, 0.0, 1.0), _NEWTON_ITER_CAP
    return _functional(system, cfg, start)


def minimal_fixed_point(system: TruncatedSystem, config: SolverConfig | None = None) -> np.ndarray:
    """Functional iteration from 0.  Iterates are componentwise nondecreasing
    and converge to the minimal nonnegative fixed point of the system."""
    cfg = config or SolverConfig()
    x, _ = _functional(system, cfg, None)
    return x


def newton_solve(system: TruncatedSystem, config: SolverConfig | None = None) -> np.ndarray:
    """Damped Newton on F(s) = s - G(s) from 0, steps clipped to [0, 1]^n.
    Falls back to functional iteration if the Jacobian goes singular or the
    damping stalls, so the result matches minimal_fixed_point either way."""
    cfg = config or SolverConfig()
    x, _ = _newton(system, cfg, None)
    return x


@dataclass
class KRecord:
    k: int
    x: np.ndarray
    iterations: int


@dataclass
class ExtinctionSequenceReport:
    target_type: int
    mode_label: str
    eps: float
    method: str
    records: list[KRecord] = field(default_factory=list)
    final_value: float = math.nan
    converged: bool = False
    parity_limits: dict[str, float] | None = None

    def target_values(self) -> list[tuple[int, float]]:
        """(k, target component) per solved window."""
        out = []
        for rec in self.records:
            min_type = rec.k - rec.x.size + 1
            out.append((rec.k, float(rec.x[self.target_type - min_type])))
        return out


def _solve(system, cfg: SolverConfig, method: str, start):
    if method == "newton":
        return _newton(system, cfg, start)
    return _functional(system, cfg, start)


def extinction_sequence(
    model: ProgenyModel,
    i: int,
    mode: TruncationMode,
    config: SolverConfig | None = None,
    method: str | None = None,
) -> ExtinctionSequenceReport:
    """Sweep truncation levels k = i, i+stride, ... solving each window until
    the target component moves by at most eps across one stride.

    The previous value starts at the sentinel 2, so at least two windows are
    solved before the stop test can pass.  Warm starts reuse the previous
    solution padded with its tail value; for sterile and augmented windows a
    warm result that parks at the all-ones vector triggers a cold re-solve,
    because those systems can hold a non-minimal fixed point at 1.  If the
    level budget runs out, the report is flagged not-converged and, when both
    parity subsequences individually stabilize (an oscillating sequence),
    their separate limits are reported.
    """
    cfg = config or SolverConfig()
    use_method = method if method is not None else "newton"
    if use_method not in ("functional", "newton"):
        raise ValueError(f"unknown method {use_method!r}")
    if i < model.min_type:
        raise InvalidTypeError(f"type {i} is below the smallest type {model.min_type}")
    report = ExtinctionSequenceReport(
        target_type=i, mode_label=mode.label, eps=cfg.outer_eps, method=use_method
    )
    k_cap = cfg.max_k if model.max_type is None else min(cfg.max_k, model.max_type)
    law_cache: dict = {}
    x_old = 2.0  # sentinel above any probability
    warm = None
    k = i
    while k <= k_cap:
        system = build_truncated(model, k, mode, law_cache)
        start = None
        if cfg.warm_start and warm is not None:
            prev_x, prev_tail = warm
            start = np.concatenate([prev_x, np.full(system.n - prev_x.size, prev_tail)])
        x, iters = _solve(system, cfg, use_method, start)
        if start is not None and mode.kind != "immortal" and float(x.min()) >= 1.0 - _ONES_GUARD:
            x_cold, extra = _solve(system, cfg, use_method, None)
            x, iters = x_cold, iters + extra
        elif cfg.debug_verify_minimal and start is not None:
            x_cold, _ = _solve(system, cfg, use_method, None)
            if float(np.max(np.abs(x_cold - x))) > 10 * cfg.inner_tol:
                raise NonConvergenceError(
                    f"warm-started solve at k={k} differs from the cold solve",
                    last_iterate=x,
                )
        report.records.append(KRecord(k, x, iters))
        xi = float(x[system.position_of(i)])
        report.final_value = xi
        if abs(xi - x_old) <= cfg.outer_eps:
            report.converged = True
            return report
        x_old = xi
        warm = (x, system.implied_tail(x))
        if model.max_type is not None and k >= model.max_type:
            # the window already covers every type, so the value is exact
            report.converged = True
            return report
        k += cfg.k_stride

    # level budget exhausted: report parity sub-limits if both stabilize
    tv = report.target_values()
    odd = [v for kk, v in tv if kk % 2 == 1]
    even = [v for kk, v in tv if kk % 2 == 0]
    if len(odd) >= 2 and len(even) >= 2:
        odd_ok = abs(odd[-1] - odd[-2]) <= cfg.outer_eps
        even_ok = abs(even[-1] - even[-2]) <= cfg.outer_eps
        if odd_ok and even_ok:
            report.parity_limits = {"odd": odd[-1], "even": even[-1]}
    return report
