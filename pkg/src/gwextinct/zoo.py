"""Built-in model families with closed-form oracles.

example1: a cascade where type 1 spawns type 2 with probability a, and each
type i >= 2 spawns one type-(i+1) child plus a Poisson number of type-1
children whose rate b^(i-1) decays up the cascade.

example2: a ladder on which odd types jump up with mean cd and down with
mean ad, while even types jump up with mean c/d and down with mean a/d, so
consecutive truncations alternate between two different boundary behaviours.

example3: a binary-splitting chain on types {2, 3, ...}: every type steps
down one level with probability eps, and each power of two can additionally
launch three copies of its double.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

from .progeny import InvalidTypeError, ProgenyModel, TypeLaw


def _minimal_root(rhs, tol: float = 1e-12) -> float:
    """Smallest x in [0, 1] with x = rhs(x), for rhs convex, nondecreasing,
    and mapping [0, 1] into [0, 1] (so x = 1 is always a root candidate)."""
    h0 = rhs(0.0)
    if h0 <= 0.0:
        return 0.0
    hi = 1.0 - 1e-9
    if rhs(hi) - hi > 0.0:
        return 1.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rhs(mid) - mid > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _poisson_events(lam: float, companion: int, tol: float = 1e-12):
    """(prob, offspring) pairs for one type-`companion` child plus a
    Poisson(lam) count of type-1 children, the count truncated at the
    smallest n with tail mass < tol and renormalized."""
    weights = [math.exp(-lam)]
    total = weights[0]
    m = 0
    while 1.0 - total >= tol:
        m += 1
        weights.append(weights[-1] * lam / m)
        total += weights[-1]
    events = []
    for cnt, w in enumerate(weights):
        off = {1: cnt, companion: 1} if cnt else {companion: 1}
        events.append((w / total, off))
    return events


def example1(a: float, b: float) -> ProgenyModel:
    """Cascade model; see the module docstring."""
    if not (0.0 < a <= 1.0):
        raise ValueError(f"need 0 < a <= 1, got a={a}")
    if not (0.0 < b < 1.0):
        raise ValueError(f"need 0 < b < 1, got b={b}")

    def law_rule(i: int) -> TypeLaw:
        if i == 1:
            return TypeLaw.from_pairs([(a, {2: 1}), (1.0 - a, {})])
        return TypeLaw.from_pairs(_poisson_events(b ** (i - 1), i + 1))

    return ProgenyModel(
        law_rule,
        min_type=1,
        initial_type=1,
        max_reachable_rule=lambda k: k + 1,
        name=f"example1(a={a},b={b})",
    )


def example1_oracles(a: float, b: float) -> tuple[float, float, float]:
    """(q1, qtilde1, qbar1_limit) for the cascade, from its scalar equations.

    q1 = 1 - a exactly.  qtilde1 is the minimal root of x = 1-a+aF(x) and the
    limit of the augmented sequence solves x = 1-a+aF(x)x, where
    F(x) = exp(b(1-b)^-1 (x-1)) is the pgf of the total Poisson load a
    surviving cascade line ever drops back to type 1.  Roots by bisection."""
    if not (0.0 < a <= 1.0 and 0.0 < b < 1.0):
        raise ValueError("parameters outside validity region")
    rate = b / (1.0 - b)
    big_f = lambda x: math.exp(rate * (x - 1.0))
    q1 = 1.0 - a
    qtilde = _minimal_root(lambda x: 1.0 - a + a * big_f(x))
    qbar_limit = _minimal_root(lambda x: 1.0 - a + a * big_f(x) * x)
    return q1, qtilde, qbar_limit


def _example2_params(a: float, c: float, d: float):
    if not (a > 0.0 and c > 0.0):
        raise ValueError("need a > 0 and c > 0")
    if not d > 1.0:
        raise ValueError("need d > 1")
    t = math.ceil(d * c) + 1
    u = math.ceil(d * (c + a)) + 1
    v = math.ceil((c + a) / d) + 1
    # the ceilings guarantee these; keep the checks as safety assertions
    if d * c / t > 1.0 or d * (a + c) / u > 1.0 or (a + c) / (d * v) > 1.0:
        raise ValueError("offspring masses exceed 1")
    return t, u, v


def example2(a: float, c: float, d: float) -> ProgenyModel:
    """Ladder model; see the module docstring."""
    t, u, v = _example2_params(a, c, d)

    def law_rule(i: int) -> TypeLaw:
        if i == 1:
            p_up = d * c / t
            return TypeLaw.from_pairs([(p_up, {2: t}), (1.0 - p_up, {})])
        if i % 2 == 1:
            p_up = d * c / u
            p_down = d * a / u
            return TypeLaw.from_pairs(
                [(p_up, {i + 1: u}), (p_down, {i - 1: u}), (1.0 - p_up - p_down, {})]
            )
        p_up = c / (d * v)
        p_down = a / (d * v)
        return TypeLaw.from_pairs(
            [(p_up, {i + 1: v}), (p_down, {i - 1: v}), (1.0 - p_up - p_down, {})]
        )

    return ProgenyModel(
        law_rule,
        min_type=1,
        initial_type=1,
        max_reachable_rule=lambda k: k + 1,
        name=f"example2(a={a},c={c},d={d})",
    )


def _upper_threshold(a: float, c: float) -> float:
    """Largest x with cx^2 + a <= x, i.e. (1+sqrt(1-4ac))/(2c); requires
    ac <= 1/4."""
    return (1.0 + math.sqrt(1.0 - 4.0 * a * c)) / (2.0 * c)


def example2_regime(a: float, c: float, d: float) -> str:
    """Regime tag for the ladder, by comparing 1/d and d to the threshold
    (1+sqrt(1-4ac))/(2c)."""
    _example2_params(a, c, d)
    if a * c > 0.25:
        return "supercritical-partial"
    theta = _upper_threshold(a, c)
    if 1.0 / d > theta:
        return "case-i"
    if theta < d:
        return "case-ii"
    return "case-iii"


def example2_mean_limits(a: float, c: float, d: float) -> tuple[float, float]:
    """Limits of the embedded boundary-return means along odd and even
    truncation levels: cd + delta and c/d + delta with
    delta = (1-sqrt(1-4ac))/2; both +inf when ac > 1/4."""
    _example2_params(a, c, d)
    if a * c > 0.25:
        return math.inf, math.inf
    delta = 0.5 * (1.0 - math.sqrt(1.0 - 4.0 * a * c))
    return c * d + delta, c / d + delta


def example2_q1_certificate(a: float, c: float, d: float, window: int = 200) -> bool:
    """True iff a geometric row vector certifies extinction from type 1:
    x_i = sqrt(d)^((-1)^i) x^(1-i) satisfies xM <= x exactly when
    cx^2 + a <= x, and a certificate needs such an x > 1, i.e. ac <= 1/4 and
    (1+sqrt(1-4ac))/(2c) > 1.  When the condition holds, the constructed
    vector is verified numerically on a `window`-type stretch."""
    _example2_params(a, c, d)
    if a * c > 0.25:
        return False
    theta = _upper_threshold(a, c)
    if theta <= 1.0:
        return False
    low = (1.0 - math.sqrt(1.0 - 4.0 * a * c)) / (2.0 * c)
    x = 0.5 * (max(1.0, low) + theta)  # interior point: strict subinvariance
    rows = window + 1
    model = example2(a, c, d)
    vec = np.array(
        [math.sqrt(d) ** ((-1) ** i) * x ** (1 - i) for i in range(1, rows + 1)]
    )
    # columns 1..window receive mass only from rows within 1..window+1
    lhs = np.zeros(window)
    for i in range(1, rows + 1):
        for j, m in model.mean_row(i).items():
            if j <= window:
                lhs[j - 1] += vec[i - 1] * m
    if not np.all(lhs <= vec[:window] + 1e-12):
        raise AssertionError("certificate condition held but the vector check failed")
    return True


def example3(p: float, eps: float) -> ProgenyModel:
    """Binary-splitting model on types {2, 3, ...}; see the module docstring."""
    if not (0.0 < p < 1.0 and 0.0 < eps < 1.0):
        raise ValueError("need p, eps in (0, 1)")
    if not 3.0 * p * eps**2 < 1.0:
        raise ValueError("need 3 p eps^2 < 1")

    def law_rule(i: int) -> TypeLaw:
        if i == 2:
            return TypeLaw.from_pairs([(p, {4: 3}), (1.0 - p, {})])
        if i >= 4 and (i & (i - 1)) == 0:  # powers of two
            launch = p * (1.0 - 3.0 * p * eps ** (i // 2))
            if not 0.0 <= launch <= 1.0:
                raise ValueError("launch probability outside [0, 1]")
            pairs = [
                (eps * launch, {i - 1: 1, 2 * i: 3}),
                (eps * (1.0 - launch), {i - 1: 1}),
                ((1.0 - eps) * launch, {2 * i: 3}),
                ((1.0 - eps) * (1.0 - launch), {}),
            ]
            return TypeLaw.from_pairs(pairs)
        return TypeLaw.from_pairs([(eps, {i - 1: 1}), (1.0 - eps, {})])

    def reach(k: int) -> int:
        if k < 2:
            return 0
        p2 = 1 << (int(k).bit_length() - 1)  # largest power of two <= k
        return 2 * p2

    return ProgenyModel(
        law_rule,
        min_type=2,
        initial_type=2,
        max_reachable_rule=reach,
        name=f"example3(p={p},eps={eps})",
    )


def example3_oracles(p: float, eps: float, l: int) -> tuple[float, dict[int, float]]:
    """(mean of the embedded boundary process of the sterile truncation at
    level 2^l, first-passage weight table f[i] = (3p)^(l-i)).

    Both are exact closed forms: the embedded mean at level 2^l telescopes
    to 3p eps^(2^(l-1)), and the weight of reaching level l from level i
    compounds a factor 3p per doubling."""
    if not (0.0 < p < 1.0 and 0.0 < eps < 1.0 and 3.0 * p * eps**2 < 1.0):
        raise ValueError("parameters outside validity region")
    if l < 2:
        raise ValueError("need l >= 2")
    m_tilde = 3.0 * p * eps ** (2 ** (l - 1))
    table = {i: (3.0 * p) ** (l - i) for i in range(1, l + 1)}
    return m_tilde, table


_ZOO = {"example1": (example1, ("a", "b")), "example2": (example2, ("a", "c", "d")), "example3": (example3, ("p", "eps"))}


def _parse_number(text: str) -> float:
    text = text.strip()
    if "/" in text:
        return float(Fraction(text))
    return float(text)


def model_from_uri(uri: str) -> ProgenyModel:
    """Build a zoo model from a URI like zoo:example2?a=1/6&c=7/8&d=2."""
    if not uri.startswith("zoo:"):
        raise ValueError(f"not a zoo URI: {uri!r}")
    rest = uri[len("zoo:") :]
    name, _, query = rest.partition("?")
    if name not in _ZOO:
        raise ValueError(f"unknown zoo entry {name!r}; choose from {sorted(_ZOO)}")
    ctor, param_names = _ZOO[name]
    params = {}
    if query:
        for piece in query.split("&"):
            key, _, value = piece.partition("=")
            if key not in param_names:
                raise ValueError(f"unknown parameter {key!r} for {name}")
            params[key] = _parse_number(value)
    missing = [nm for nm in param_names if nm not in params]
    if missing:
        raise ValueError(f"{name} needs parameters {missing}")
    return ctor(**params)
