"""Finite k-type closures of an infinite-type branching process.

Three tail substitutions close the generating-function system on the window
of types min_type..k: sterile (every out-of-window type counts as already
dead-ended, tail value 1), immortal (tail value 0, such lines never die), and
augmented (each out-of-window child is replaced by an in-window type drawn
from a replacement distribution, tail value alpha . s).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .progeny import PROB_TOL, ProgenyModel, TypeLaw


@dataclass(frozen=True)
class ReplacementDistribution:
    """Distribution over window types used to replace out-of-window children.

    scheme is one of "first" (point mass on the window's first type), "last"
    (point mass on type k), "uniform", or "custom".  Custom weights are laid
    onto the window's leading slots and zero-padded on the right; they must
    be nonnegative, not all zero, and no longer than the window.
    """

    scheme: str
    weights: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.scheme not in ("first", "last", "uniform", "custom"):
            raise ValueError(f"unknown replacement scheme {self.scheme!r}")
        if (self.scheme == "custom") != (self.weights is not None):
            raise ValueError("custom scheme requires weights; others forbid them")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or w.size == 0 or (w < 0).any() or w.sum() <= 0:
                raise ValueError("custom weights must be nonnegative with positive sum")

    def realize(self, k: int, min_type: int = 1) -> np.ndarray:
        """Probability vector over the window types min_type..k."""
        n = k - min_type + 1
        if n < 1:
            raise ValueError(f"window {min_type}..{k} is empty")
        if self.scheme == "first":
            alpha = np.zeros(n)
            alpha[0] = 1.0
        elif self.scheme == "last":
            alpha = np.zeros(n)
            alpha[-1] = 1.0
        elif self.scheme == "uniform":
            alpha = np.full(n, 1.0 / n)
        else:
            w = np.asarray(self.weights, dtype=float)
            if w.size > n:
                raise ValueError(f"custom weights ({w.size}) exceed window size {n}")
            alpha = np.zeros(n)
            alpha[: w.size] = w / w.sum()
        return alpha

    @property
    def label(self) -> str:
        return {"first": "e1", "last": "ek", "uniform": "uniform", "custom": "custom"}[
            self.scheme
        ]

    @property
    def tight(self) -> bool | None:
        """Whether the family alpha^(k) is tight as k grows: mass pinned to
        the window's first type stays put, mass on the last type or spread
        uniformly escapes every fixed finite set.  None for custom weights
        (undeclared)."""
        return {"first": True, "last": False, "uniform": False, "custom": None}[
            self.scheme
        ]


FIRST_TYPE = ReplacementDistribution("first")
LAST_TYPE = ReplacementDistribution("last")
UNIFORM = ReplacementDistribution("uniform")


@dataclass(frozen=True)
class TruncationMode:
    """One of the three tail substitutions."""

    kind: str  # "sterile" | "immortal" | "augmented"
    replacement: ReplacementDistribution | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("sterile", "immortal", "augmented"):
            raise ValueError(f"unknown truncation kind {self.kind!r}")
        if (self.kind == "augmented") != (self.replacement is not None):
            raise ValueError("augmented mode requires a replacement distribution")

    @property
    def label(self) -> str:
        if self.kind == "augmented":
            return f"augmented[{self.replacement.label}]"
        return self.kind


STERILE = TruncationMode("sterile")
IMMORTAL = TruncationMode("immortal")


def augmented(replacement: ReplacementDistribution = LAST_TYPE) -> TruncationMode:
    return TruncationMode("augmented", replacement)


class EventMatrix:
    """Flattened offspring events for one window, for vectorized evaluation.

    Events are stored CSR-style: component i owns events row_ptr[i]:
    row_ptr[i+1]; event e owns entries ent_ptr[e]:ent_ptr[e+1].  Entry
    columns index the window (0..n-1), the tail slot (n), or a dummy slot
    (n+1) whose value is pinned to 1 so that empty events still form a
    segment for reduceat.
    """

    def __init__(self, laws: list[TypeLaw], min_type: int, k: int) -> None:
        self.min_type = min_type
        self.k = k
        self.n = k - min_type + 1
        if len(laws) != self.n:
            raise ValueError("need one law per window type")
        probs: list[float] = []
        row_ptr = [0]
        cols: list[int] = []
        counts: list[float] = []
        ent_ptr = [0]
        for law in laws:
            for p, off in law.events:
                probs.append(p)
                if off.entries:
                    for t, c in off.entries:
                        cols.append(t - min_type if t <= k else self.n)
                        counts.append(float(c))
                else:
                    cols.append(self.n + 1)  # dummy slot, value 1
                    counts.append(1.0)
                ent_ptr.append(len(cols))
            row_ptr.append(len(probs))
        self.probs = np.asarray(probs)
        self.row_ptr = np.asarray(row_ptr, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.counts = np.asarray(counts)
        self.ent_ptr = np.asarray(ent_ptr, dtype=np.int64)
        self.ent_sizes = np.diff(self.ent_ptr)
        # tail columns collapsed out of window: clip cols of tail types to n
        self._entry_event = np.repeat(
            np.arange(len(self.probs), dtype=np.int64), self.ent_sizes
        )
        self._event_row = np.repeat(
            np.arange(self.n, dtype=np.int64), np.diff(self.row_ptr)
        )
        self._entry_row = self._event_row[self._entry_event]

    def _svals(self, s: np.ndarray, tail_value: float) -> np.ndarray:
        svals = np.empty(self.n + 2)
        svals[: self.n] = s
        svals[self.n] = tail_value
        svals[self.n + 1] = 1.0
        return svals

    def eval(self, s: np.ndarray, tail_value: float) -> np.ndarray:
        """Component-wise pgf values at window point s with the given tail."""
        svals = self._svals(s, tail_value)
        factors = svals[self.cols] ** self.counts
        ev = np.multiply.reduceat(factors, self.ent_ptr[:-1])
        terms = self.probs * ev
        return np.add.reduceat(terms, self.row_ptr[:-1])

    def jacobian(self, s: np.ndarray, tail_value: float) -> tuple[np.ndarray, np.ndarray]:
        """Pair (J, t): J is the n x n window Jacobian, t the tail-derivative
        column, both evaluated at (s, tail_value).  Zero coordinates are
        handled exactly (an event differentiates to a nonzero value at a zero
        coordinate only through a count-1 entry at that coordinate, with all
        other factors nonzero)."""
        svals = self._svals(s, tail_value)
        factors = svals[self.cols] ** self.counts
        entry_zero = svals[self.cols] == 0.0
        nz_factors = np.where(entry_zero, 1.0, factors)
        prod_nz = np.multiply.reduceat(nz_factors, self.ent_ptr[:-1])
        zcount = np.add.reduceat(entry_zero.astype(np.int64), self.ent_ptr[:-1])
        ev_full = np.where(zcount == 0, prod_nz, 0.0)

        pe = self.probs[self._entry_event]
        evper = ev_full[self._entry_event]
        zper = zcount[self._entry_event]
        prodper = prod_nz[self._entry_event]

        contrib = np.zeros(self.cols.size)
        ok0 = zper == 0
        if ok0.any():
            contrib[ok0] = (
                pe[ok0] * self.counts[ok0] * evper[ok0] / svals[self.cols[ok0]]
            )
        ok1 = (zper == 1) & entry_zero & (self.counts == 1.0)
        if ok1.any():
            contrib[ok1] = pe[ok1] * prodper[ok1]

        jac = np.zeros((self.n, self.n + 2))
        np.add.at(jac, (self._entry_row, self.cols), contrib)
        return jac[:, : self.n], jac[:, self.n]


@dataclass(frozen=True, eq=False)
class TruncatedSystem:
    """A closed generating-function system on the window min_type..k."""

    model: ProgenyModel
    k: int
    mode: TruncationMode
    events: EventMatrix = field(repr=False)
    alpha: np.ndarray | None = field(repr=False)

    @property
    def n(self) -> int:
        return self.events.n

    @property
    def min_type(self) -> int:
        return self.events.min_type

    def position_of(self, i: int) -> int:
        """Window slot of type i."""
        if not self.min_type <= i <= self.k:
            raise ValueError(f"type {i} outside window {self.min_type}..{self.k}")
        return i - self.min_type

    def tail_value(self, s: np.ndarray) -> float:
        if self.mode.kind == "sterile":
            return 1.0
        if self.mode.kind == "immortal":
            return 0.0
        return float(self.alpha @ s)

    def eval(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        if s.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}, got shape {s.shape}")
        if s.size and (s.min() < -PROB_TOL or s.max() > 1.0 + PROB_TOL):
            raise ValueError("s entries must lie in [0, 1]")
        return self.events.eval(s, self.tail_value(s))

    def jacobian(self, s) -> np.ndarray:
        """Jacobian of the closed map at s (chain rule through the tail)."""
        s = np.asarray(s, dtype=float)
        jac, tail_col = self.events.jacobian(s, self.tail_value(s))
        if self.mode.kind == "augmented":
            jac = jac + np.outer(tail_col, self.alpha)
        return jac

    def implied_tail(self, s) -> float:
        """Value the substitution assigns to every type beyond the window."""
        return self.tail_value(np.asarray(s, dtype=float))


def build_truncated(
    model: ProgenyModel,
    k: int,
    mode: TruncationMode,
    law_cache: dict[int, TypeLaw] | None = None,
) -> TruncatedSystem:
    """Close the model's system on the window min_type..k under the mode's
    tail substitution.  law_cache, when supplied, memoizes law_for calls
    across repeated builds on the same model."""
    if k < model.min_type:
        raise ValueError(f"k={k} is below the model's smallest type {model.min_type}")
    laws = []
    for i in range(model.min_type, k + 1):
        if law_cache is not None and i in law_cache:
            law = law_cache[i]
        else:
            law = model.law_for(i)
            if law_cache is not None:
                law_cache[i] = law
        laws.append(law)
    events = EventMatrix(laws, model.min_type, k)
    alpha = None
    if mode.kind == "augmented":
        alpha = mode.replacement.realize(k, model.min_type)
    return TruncatedSystem(model, k, mode, events, alpha)


def system_eval(system: TruncatedSystem, s) -> np.ndarray:
    """Component i equals pgf_eval(model, i, s, u(s)) for the system's tail
    substitution u."""
    return system.eval(s)
