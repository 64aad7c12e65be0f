"""Truncated and augmented mean matrices, spectral radii, Perron vectors,
embedded first-return means, and spectral extinction criteria."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .progeny import ProgenyModel
from .solver import NonConvergenceError
from .truncation import ReplacementDistribution, TruncatedSystem

_SHIFT = 1e-9  # diagonal shift for reducible/periodic safety
_RHO_ONE_GUARD = 1e-9  # rho(M_sub) this close to 1 flags a divergent return mean


@dataclass(frozen=True, eq=False)
class TruncatedMeanMatrix:
    """North-west window of the mean matrix with its exact tail mass.

    m_tilde drops every column beyond the window; tail_mass[i] collects the
    dropped row mass sum_{j>k} M_ij.  With a replacement vector alpha the
    augmented matrix m_bar = m_tilde + tail_mass alpha^T puts the dropped
    mass back inside the window, so its row sums equal the full model's.
    """

    k: int
    min_type: int
    m_tilde: np.ndarray = field(repr=False)
    tail_mass: np.ndarray = field(repr=False)
    alpha: np.ndarray | None = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.m_tilde.shape[0]

    @property
    def m_bar(self) -> np.ndarray | None:
        if self.alpha is None:
            return None
        return self.m_tilde + np.outer(self.tail_mass, self.alpha)


def build_mean_matrices(
    model: ProgenyModel,
    k: int,
    alpha: ReplacementDistribution | None = None,
    law_cache: dict | None = None,
) -> TruncatedMeanMatrix:
    """Window min_type..k of the mean matrix, its exact tail mass, and the
    realized replacement vector when a scheme is given."""
    if k < model.min_type:
        raise ValueError(f"k={k} is below the model's smallest type {model.min_type}")
    n = k - model.min_type + 1
    m_tilde = np.zeros((n, n))
    tail = np.zeros(n)
    for i in range(model.min_type, k + 1):
        if law_cache is not None and i in law_cache:
            law = law_cache[i]
        else:
            law = model.law_for(i)
            if law_cache is not None:
                law_cache[i] = law
        row = i - model.min_type
        for t, v in law.mean().items():
            if t <= k:
                m_tilde[row, t - model.min_type] = v
            else:
                tail[row] += v
    alpha_vec = alpha.realize(k, model.min_type) if alpha is not None else None
    return TruncatedMeanMatrix(k, model.min_type, m_tilde, tail, alpha_vec)


def spectral_radius(matrix, tol: float = 1e-10, max_iter: int = 200000) -> float:
    """Spectral radius of a square nonnegative matrix by power iteration on
    M + delta I (delta = 1e-9, a guard for reducible or periodic structure).

    The returned estimate is sqrt of the Rayleigh quotient of (M + delta I)^2
    minus delta: squaring keeps the quotient convergent on periodic matrices,
    whose dominant eigenvalues come in +/- pairs that a plain quotient never
    separates.  The start vector is random positive with a fixed seed."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if a.size == 0:
        return 0.0
    if (a < 0).any():
        raise ValueError("matrix must be nonnegative")
    n = a.shape[0]
    if n == 1:
        return float(a[0, 0])
    rng = np.random.default_rng(0)
    v = rng.uniform(0.5, 1.5, size=n)
    v /= np.linalg.norm(v)
    shifted = a + _SHIFT * np.eye(n)
    prev = math.inf
    for _ in range(max_iter):
        w = shifted @ (shifted @ v)
        quotient = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:  # nilpotent directions only
            return 0.0
        v = w / norm
        est = math.sqrt(max(quotient, 0.0)) - _SHIFT
        if abs(est - prev) <= tol * max(1.0, abs(est)):
            return max(est, 0.0)
        prev = est
    raise NonConvergenceError(
        f"spectral radius estimate did not settle in {max_iter} iterations",
        last_iterate=prev,
    )


def embedded_return_mean(matrix, i: int) -> float:
    """Mean of the embedded single-type process of row i (1-based): the
    expected number of row-i individuals in the first return to i, summing
    M_ii plus every excursion through the other rows.

    Returns +inf when the other-rows submatrix has spectral radius >= 1
    (excursions then carry infinite mass; the linear solve is not trusted
    near that boundary)."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    n = a.shape[0]
    if not 1 <= i <= n:
        raise ValueError(f"row index {i} outside 1..{n}")
    idx = i - 1
    others = [j for j in range(n) if j != idx]
    if not others:
        return float(a[idx, idx])
    sub = a[np.ix_(others, others)]
    if spectral_radius(sub) >= 1.0 - _RHO_ONE_GUARD:
        return math.inf
    try:
        y = np.linalg.solve(np.eye(len(others)) - sub, a[others, idx])
    except np.linalg.LinAlgError:
        return math.inf
    return float(a[idx, idx] + a[idx, others] @ y)


def _reachable(adj: list[list[int]], start: int) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return seen


def perron_right_vector(matrix, tol: float = 1e-10, max_iter: int = 2000000) -> np.ndarray:
    """Right Perron vector of a nonnegative irreducible matrix, normalized to
    sup-norm 1, with residual ||Mv - rho v||_inf <= tol.

    Irreducibility is checked first by reachability in both edge directions;
    a reducible matrix raises with the unreachable rows named.  The power
    iteration runs on M + cI with a large diagonal shift, which makes any
    irreducible matrix primitive."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("matrix must be square")
    if (a < 0).any():
        raise ValueError("matrix must be nonnegative")
    n = a.shape[0]
    if n == 0:
        raise ValueError("matrix is empty")
    if n == 1:
        return np.ones(1)
    fwd = [list(np.nonzero(a[u])[0]) for u in range(n)]
    bwd = [list(np.nonzero(a[:, u])[0]) for u in range(n)]
    missing_fwd = set(range(n)) - _reachable(fwd, 0)
    missing_bwd = set(range(n)) - _reachable(bwd, 0)
    if missing_fwd or missing_bwd:
        blocks = []
        if missing_fwd:
            blocks.append(f"rows {sorted(missing_fwd)} unreachable from row 0")
        if missing_bwd:
            blocks.append(f"rows {sorted(missing_bwd)} cannot reach row 0")
        raise ValueError("matrix is reducible: " + "; ".join(blocks))
    shift = max(float(a.sum(axis=1).max()), 1.0) * 0.5
    shifted = a + shift * np.eye(n)
    rng = np.random.default_rng(0)
    v = rng.uniform(0.5, 1.5, size=n)
    v /= v.max()
    for _ in range(max_iter):
        w = shifted @ v
        v = w / w.max()
        av = a @ v
        rho = float(v @ av) / float(v @ v)
        if float(np.max(np.abs(av - rho * v))) <= tol:
            return v / v.max()
    raise NonConvergenceError(
        f"Perron iteration did not reach residual {tol} in {max_iter} steps",
        last_iterate=v / v.max(),
    )


@dataclass
class SpectralRecord:
    k: int
    rho_tilde: float
    rho_bar: float
    embedded_mean_k: float


@dataclass
class ScanFlags:
    window_subcritical: bool  # rho_bar <= 1 across the trailing window
    q_one_certified: bool  # window evidence plus both theorem hypotheses
    qtilde_one_indicated: bool  # limiting rho_tilde estimate <= 1
    rho_bar_liminf: float  # parity sub-sequence estimates
    rho_bar_limsup: float
    window: int
    alpha_tight: bool | None
    liminf_q_declared: bool
    warning: str | None = None


@dataclass
class SpectralReport:
    alpha_label: str
    records: list[SpectralRecord]
    flags: ScanFlags
    perron_vector: np.ndarray | None = None

    def rho_tilde_values(self) -> list[float]:
        return [r.rho_tilde for r in self.records]

    def rho_bar_values(self) -> list[float]:
        return [r.rho_bar for r in self.records]


def criterion_scan(
    model: ProgenyModel,
    alpha_scheme: ReplacementDistribution,
    k_max: int,
    k_min: int | None = None,
    stride: int = 1,
    window: int = 20,
    assume_liminf_q_positive: bool = False,
    tol: float = 1e-10,
) -> SpectralReport:
    """Scan truncation levels computing rho of the plain and augmented mean
    matrices and the embedded return mean of the boundary type.

    Flags report the spectral evidence honestly: a trailing window with every
    rho_bar <= 1 supports "the augmented extinction limit is 1"; promoting
    that to "q = 1" additionally needs a tight replacement family and a
    declared liminf assumption on the partial extinction probabilities, and
    the flag stays off with a warning when either is missing.  Parity
    sub-sequence estimates expose oscillating scans (alternating + even/odd
    structure), where liminf and limsup differ."""
    if k_max < model.min_type:
        raise ValueError("k_max must cover at least the smallest type")
    start_k = model.min_type if k_min is None else max(k_min, model.min_type)
    law_cache: dict = {}
    records: list[SpectralRecord] = []
    last_mbar = None
    for k in range(start_k, k_max + 1, stride):
        mm = build_mean_matrices(model, k, alpha_scheme, law_cache)
        mbar = mm.m_bar
        rho_t = spectral_radius(mm.m_tilde, tol)
        rho_b = spectral_radius(mbar, tol)
        emk = embedded_return_mean(mbar, mbar.shape[0])
        records.append(SpectralRecord(k, rho_t, rho_b, emk))
        last_mbar = mbar

    win = min(window, len(records))
    tail_records = records[-win:]
    window_subcritical = all(r.rho_bar <= 1.0 + 1e-12 for r in tail_records)
    qtilde_one = records[-1].rho_tilde <= 1.0 + 1e-12

    odd = [r.rho_bar for r in records if r.k % 2 == 1]
    even = [r.rho_bar for r in records if r.k % 2 == 0]
    parity_estimates = [seq[-1] for seq in (odd, even) if seq]
    liminf_est = min(parity_estimates) if parity_estimates else math.nan
    limsup_est = max(parity_estimates) if parity_estimates else math.nan

    tight = alpha_scheme.tight
    certified = window_subcritical and tight is True and assume_liminf_q_positive
    warning = None
    if window_subcritical and not certified:
        missing = []
        if tight is not True:
            missing.append("a tight replacement family")
        if not assume_liminf_q_positive:
            missing.append("a declared liminf assumption on partial extinction")
        warning = (
            "subcritical window certifies only that the augmented extinction "
            "limit is 1, not q = 1; missing: " + ", ".join(missing)
        )
    flags = ScanFlags(
        window_subcritical=window_subcritical,
        q_one_certified=certified,
        qtilde_one_indicated=qtilde_one,
        rho_bar_liminf=liminf_est,
        rho_bar_limsup=limsup_est,
        window=win,
        alpha_tight=tight,
        liminf_q_declared=assume_liminf_q_positive,
    )
    flags.warning = warning
    perron = None
    if last_mbar is not None:
        try:
            perron = perron_right_vector(last_mbar, tol=max(tol, 1e-10))
        except (ValueError, NonConvergenceError):
            perron = None
    return SpectralReport(
        alpha_label=alpha_scheme.label, records=records, flags=flags, perron_vector=perron
    )


@dataclass
class Certificate:
    """A point s < 1 with G(s) <= s componentwise, witnessing that the
    system's minimal fixed point is at most s."""

    theta: float
    s: np.ndarray


def certify_q_less_than_one(
    system: TruncatedSystem, theta_grid=None
) -> Certificate | None:
    """Scan s(theta) = 1 - theta v/sup(v), v the Perron vector of the
    system's mean matrix, for the first theta with G(s(theta)) <= s(theta).

    Such a point certifies that the system's minimal fixed point, hence the
    extinction probability it computes, is at most s(theta) < 1.  Returns
    None when no grid point qualifies (in particular whenever that
    probability is 1).  The default grid halves theta from 1 down to 2^-40."""
    if system.mode.kind != "augmented":
        raise ValueError("certification needs an augmented system")
    if theta_grid is None:
        theta_grid = [2.0**-m for m in range(41)]
    ones = np.ones(system.n)
    mbar = system.jacobian(ones)
    v = perron_right_vector(mbar)
    direction = v / v.max()
    for theta in theta_grid:
        s = 1.0 - theta * direction
        if s.min() < 0.0:
            continue
        if np.all(system.eval(s) <= s):
            return Certificate(theta=float(theta), s=s)
    return None
