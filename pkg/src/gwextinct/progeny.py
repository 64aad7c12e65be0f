"""Offspring laws and generating functions for branching processes with
countably many particle types.

A model is a pure rule mapping each type index to a finite-support offspring
law.  Generating functions are evaluated on a finite window of types 1..k,
with a single scalar standing in for every type beyond the window.
"""
from __future__ import annotations

import json
import math
import os
from collections.abc import Callable, Mapping
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

PROB_TOL = 1e-12


class InvalidTypeError(ValueError):
    """A type index outside the model's type set."""


@dataclass(frozen=True)
class SparseOffspring:
    """Offspring vector with finitely many nonzero counts."""

    entries: tuple[tuple[int, int], ...]  # (type, count), types strictly increasing

    def __post_init__(self) -> None:
        prev = 0
        for t, c in self.entries:
            if t <= prev:
                raise ValueError("offspring types must be strictly increasing")
            if c < 1:
                raise ValueError("offspring counts must be >= 1")
            prev = t

    @classmethod
    def from_counts(cls, counts: Mapping[int, int]) -> "SparseOffspring":
        """Build from a {type: count} mapping, dropping zero counts."""
        items = sorted((int(t), int(c)) for t, c in counts.items() if int(c) != 0)
        return cls(tuple(items))

    def as_dict(self) -> dict[int, int]:
        return dict(self.entries)

    def count_of(self, t: int) -> int:
        return dict(self.entries).get(t, 0)

    @property
    def total(self) -> int:
        return sum(c for _, c in self.entries)

    @property
    def max_type(self) -> int:
        """Largest type appearing; 0 for the empty vector."""
        return self.entries[-1][0] if self.entries else 0


EMPTY_OFFSPRING = SparseOffspring(())


@dataclass(frozen=True)
class TypeLaw:
    """Finite probability law over offspring vectors."""

    events: tuple[tuple[float, SparseOffspring], ...]

    def __post_init__(self) -> None:
        if not self.events:
            raise ValueError("a law needs at least one event")
        seen = set()
        for p, off in self.events:
            if not (-PROB_TOL <= p <= 1.0 + PROB_TOL):
                raise ValueError(f"event probability {p} outside [0, 1]")
            if off in seen:
                raise ValueError("duplicate offspring vectors must be merged")
            seen.add(off)
        total = math.fsum(p for p, _ in self.events)
        if abs(total - 1.0) > PROB_TOL:
            raise ValueError(f"event probabilities sum to {total}, not 1")

    @classmethod
    def from_pairs(cls, pairs) -> "TypeLaw":
        """Build from (prob, offspring) pairs, merging duplicate vectors.

        Offspring may be given as SparseOffspring or as {type: count} mappings.
        Zero-probability events are dropped.
        """
        acc: dict[SparseOffspring, float] = {}
        for p, off in pairs:
            if not isinstance(off, SparseOffspring):
                off = SparseOffspring.from_counts(off)
            acc[off] = acc.get(off, 0.0) + float(p)
        return cls(tuple((p, off) for off, p in acc.items() if p > 0.0))

    @cached_property
    def probabilities(self) -> np.ndarray:
        return np.array([p for p, _ in self.events])

    @cached_property
    def _cum_probs(self) -> np.ndarray:
        return np.cumsum(self.probabilities)

    @cached_property
    def max_type(self) -> int:
        """Largest type any event can produce; 0 if all events are empty."""
        return max((off.max_type for _, off in self.events), default=0)

    def mean(self) -> dict[int, float]:
        """Expected offspring counts per type, sparse."""
        row: dict[int, float] = {}
        for p, off in self.events:
            for t, c in off.entries:
                row[t] = row.get(t, 0.0) + p * c
        return {t: v for t, v in sorted(row.items()) if v > 0.0}

    def sample(self, rng: np.random.Generator) -> SparseOffspring:
        idx = int(np.searchsorted(self._cum_probs, rng.random(), side="right"))
        if idx >= len(self.events):  # guard the p-sum rounding edge
            idx = len(self.events) - 1
        return self.events[idx][1]


@dataclass(frozen=True)
class ProgenyModel:
    """Branching process defined by a pure rule: type index -> TypeLaw.

    The rule is total on {min_type, ..., max_type}; max_type None means a
    countably infinite type set.  max_reachable_rule(k), when present,
    declares the largest type any parent of type <= k can produce, enabling
    exact tail-reachability statements.  The model never memoizes law_rule;
    callers that evaluate many types repeatedly should cache the laws.
    """

    law_rule: Callable[[int], TypeLaw]
    min_type: int = 1
    initial_type: int | None = None
    max_type: int | None = None
    max_reachable_rule: Callable[[int], int] | None = None
    name: str = "model"

    def __post_init__(self) -> None:
        if self.min_type < 1:
            raise ValueError("min_type must be >= 1")
        if self.initial_type is None:
            object.__setattr__(self, "initial_type", self.min_type)
        self._check_type(self.initial_type)

    def _check_type(self, i) -> None:
        if not isinstance(i, (int, np.integer)) or isinstance(i, bool) or i < 1:
            raise InvalidTypeError(f"type index must be a positive integer, got {i!r}")
        if i < self.min_type:
            raise InvalidTypeError(f"type {i} is below the smallest type {self.min_type}")
        if self.max_type is not None and i > self.max_type:
            raise InvalidTypeError(f"type {i} exceeds the largest type {self.max_type}")

    def law_for(self, i: int) -> TypeLaw:
        self._check_type(i)
        return self.law_rule(int(i))

    def pgf_eval(self, i: int, s_window, tail_value: float) -> float:
        """G_i at the point whose coordinate for type j is s_window[j-1] for
        j <= len(s_window) and tail_value for every j beyond the window."""
        law = self.law_for(i)
        s = np.asarray(s_window, dtype=float)
        if s.ndim != 1:
            raise ValueError("s_window must be one-dimensional")
        if s.size and (s.min() < -PROB_TOL or s.max() > 1.0 + PROB_TOL):
            raise ValueError("s_window entries must lie in [0, 1]")
        if not (-PROB_TOL <= tail_value <= 1.0 + PROB_TOL):
            raise ValueError("tail_value must lie in [0, 1]")
        k = s.size
        terms = []
        for p, off in law.events:
            term = p
            for t, c in off.entries:
                x = s[t - 1] if t <= k else tail_value
                term *= x**c
            terms.append(term)
        return float(math.fsum(terms))

    def mean_row(self, i: int) -> dict[int, float]:
        """Row i of the mean progeny matrix, sparse."""
        return self.law_for(i).mean()

    def offspring_sample(self, i: int, rng: np.random.Generator) -> SparseOffspring:
        return self.law_for(i).sample(rng)

    def max_reachable(self, k: int) -> int | None:
        """Largest type producible by any type <= k; None when unknown."""
        if self.max_reachable_rule is not None:
            return self.max_reachable_rule(int(k))
        return self.max_type


def _parse_json_source(source) -> dict:
    if isinstance(source, Mapping):
        return dict(source)
    if isinstance(source, Path) or (isinstance(source, str) and os.path.exists(source)):
        with open(source, encoding="utf-8") as fh:
            return json.load(fh)
    if isinstance(source, str):
        return json.loads(source)
    raise TypeError(f"cannot load a model from {type(source).__name__}")


def _events_from_json(raw, relative: bool = False) -> list[tuple[float, dict[int, int]]]:
    events = []
    for item in raw:
        prob, counts = item
        parsed = {}
        for key, cnt in counts.items():
            t = int(key)
            cnt = int(cnt)
            if cnt < 1:
                raise ValueError("offspring counts must be >= 1")
            if not relative and t < 1:
                raise ValueError("offspring types must be >= 1")
            parsed[t] = cnt
        events.append((float(prob), parsed))
    return events


def model_from_json(source) -> ProgenyModel:
    """Build a ProgenyModel from a JSON document (mapping, JSON text, or path).

    The document holds an explicit per-type law table plus a tail rule:
    "none" for finite type sets, or "periodic" for laws that repeat with a
    fixed period using offspring offsets relative to the parent type.  The
    schema is documented in docs/model-schema.md.
    """
    doc = _parse_json_source(source)
    min_type = int(doc.get("min_type", 1))
    name = str(doc.get("name", "json-model"))
    if "laws" not in doc or not doc["laws"]:
        raise ValueError("model document needs a non-empty 'laws' table")
    table: dict[int, TypeLaw] = {}
    for key, raw in doc["laws"].items():
        i = int(key)
        if i < min_type:
            raise ValueError(f"law table key {i} is below min_type {min_type}")
        table[i] = TypeLaw.from_pairs(_events_from_json(raw))
    lo, hi = min(table), max(table)
    if lo != min_type or set(table) != set(range(lo, hi + 1)):
        raise ValueError("law table must cover min_type..max contiguously")

    tail = doc.get("tail", {"kind": "none"})
    kind = tail.get("kind", "none")
    prefix_max = {}
    running = 0
    for i in range(lo, hi + 1):
        running = max(running, table[i].max_type)
        prefix_max[i] = running

    if kind == "none":
        if running > hi:
            raise ValueError(f"type {running} is producible but has no law")

        def law_rule(i: int, _table=table) -> TypeLaw:
            return _table[i]

        def reach(k: int, _pm=prefix_max, _hi=hi) -> int:
            return _pm[min(k, _hi)] if k >= lo else 0

        model = ProgenyModel(
            law_rule,
            min_type=min_type,
            initial_type=int(doc.get("initial_type", min_type)),
            max_type=hi,
            max_reachable_rule=reach,
            name=name,
        )
        return model

    if kind == "periodic":
        start = int(tail.get("start", hi + 1))
        if start != hi + 1:
            raise ValueError("periodic tail must start right after the law table")
        cycle_raw = tail["laws"]
        if not cycle_raw:
            raise ValueError("periodic tail needs at least one law")
        period = len(cycle_raw)
        cycle = [_events_from_json(raw, relative=True) for raw in cycle_raw]
        min_off = min(
            (t for events in cycle for _, counts in events for t in counts), default=0
        )
        max_off = max(
            (t for events in cycle for _, counts in events for t in counts), default=0
        )
        if start + min_off < min_type:
            raise ValueError("periodic tail reaches below min_type")

        @lru_cache(maxsize=None)
        def tail_law(i: int) -> TypeLaw:
            events = cycle[(i - start) % period]
            return TypeLaw.from_pairs(
                (p, {i + off: c for off, c in counts.items()}) for p, counts in events
            )

        def law_rule(i: int, _table=table, _start=start) -> TypeLaw:
            return _table[i] if i < _start else tail_law(i)

        def reach(k: int, _pm=prefix_max, _hi=hi, _start=start, _mo=max_off) -> int:
            best = _pm[min(k, _hi)] if k >= lo else 0
            if k >= _start:
                best = max(best, k + _mo)
            return best

        return ProgenyModel(
            law_rule,
            min_type=min_type,
            initial_type=int(doc.get("initial_type", min_type)),
            max_type=None,
            max_reachable_rule=reach,
            name=name,
        )

    raise ValueError(f"unknown tail kind {kind!r}")
