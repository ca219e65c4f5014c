"""Transition matrices of the RR, LP, TLP-A/P and LRU replacement schemes.

All matrices are column-stochastic: ``theta[m, k]`` is the probability of
moving from state ``k`` to state ``m`` at one replacement point. They are
built in the state order of the :class:`StateSpace` passed in; LP and TLP are
lower-triangular when that space is sorted by predicted mass (see
:func:`cachefield.states.sorted_space`).

Two construction paths exist on purpose. :func:`conditional_matrix` goes
through the general per-request replacement model, while
:func:`overall_matrix` writes the aggregated per-scheme formulas directly.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import permutations
from math import factorial
from typing import ClassVar, Mapping, Union

import numpy as np

from .states import PROB_TOL, StateSpace, check_popularity

MAX_RECENCY_ORDERS = 40_320  # 8!


class RecencyTooLarge(ValueError):
    """Raised when exact recency enumeration is too expensive."""


def _as_tuple(v) -> tuple[float, ...] | None:
    return None if v is None else tuple(float(x) for x in v)


@dataclass(frozen=True)
class RR:
    """Random replacement: a miss replaces each cached content w.p. ``phi``."""

    phi: float
    name: ClassVar[str] = "rr"

    def __post_init__(self):
        if not (0.0 < self.phi <= 1.0):
            raise ValueError(f"RR phi must lie in (0, 1/L], got {self.phi}")

    def validate(self, space: StateSpace, popularity=None) -> None:
        if self.phi * space.cache_size > 1.0 + PROB_TOL:
            raise ValueError(f"RR phi={self.phi} exceeds 1/L = {1.0 / space.cache_size}")

    def to_config(self) -> dict:
        return {"scheme": "rr", "phi": self.phi}


@dataclass(frozen=True)
class LP:
    """Replace-less-popular, gated by ``alpha``.

    ``predicted`` defaults to the true popularity (perfect prediction).
    """

    alpha: float
    predicted: tuple[float, ...] | None = None
    name: ClassVar[str] = "lp"

    def __post_init__(self):
        object.__setattr__(self, "predicted", _as_tuple(self.predicted))
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError(f"LP alpha must lie in (0, 1], got {self.alpha}")

    def validate(self, space: StateSpace, popularity=None) -> None:
        _predicted(self, space, popularity)

    def to_config(self) -> dict:
        cfg = {"scheme": "lp", "alpha": self.alpha}
        if self.predicted is not None:
            cfg["predicted"] = list(self.predicted)
        return cfg


@dataclass(frozen=True)
class TLP:
    """Replace-the-least-popular; variant ``"A"`` always, ``"P"`` probabilistically."""

    variant: str = "A"
    predicted: tuple[float, ...] | None = None
    name: ClassVar[str] = "tlp"

    def __post_init__(self):
        object.__setattr__(self, "predicted", _as_tuple(self.predicted))
        object.__setattr__(self, "variant", str(self.variant).upper())
        if self.variant not in ("A", "P"):
            raise ValueError(f"TLP variant must be 'A' or 'P', got {self.variant!r}")

    def validate(self, space: StateSpace, popularity=None) -> None:
        _predicted(self, space, popularity)

    def to_config(self) -> dict:
        cfg = {"scheme": "tlp", "variant": self.variant}
        if self.predicted is not None:
            cfg["predicted"] = list(self.predicted)
        return cfg


@dataclass(frozen=True)
class LRU:
    name: ClassVar[str] = "lru"

    def validate(self, space: StateSpace, popularity=None) -> None:
        pass

    def to_config(self) -> dict:
        return {"scheme": "lru"}


Scheme = Union[RR, LP, TLP, LRU]

_SCHEME_KEYS = {"rr": {"phi"}, "lp": {"alpha", "predicted"}, "tlp": {"variant", "predicted"}, "lru": set()}


def scheme_from_config(cfg: Mapping) -> Scheme:
    """Parse ``{"scheme": "rr", "phi": 0.45}`` style configurations.

    Keys other than the scheme's own parameters are ignored so that a scheme
    can be read straight out of a larger experiment document.
    """
    kind = str(cfg.get("scheme", "")).lower()
    if kind == "rr":
        return RR(float(cfg["phi"]))
    if kind == "lp":
        return LP(float(cfg["alpha"]), cfg.get("predicted"))
    if kind == "tlp":
        return TLP(cfg.get("variant", "A"), cfg.get("predicted"))
    if kind == "lru":
        return LRU()
    raise ValueError(f"unknown scheme {cfg.get('scheme')!r}; expected one of {sorted(_SCHEME_KEYS)}")


def scheme_label(scheme: Scheme) -> str:
    return f"tlp-{scheme.variant.lower()}" if isinstance(scheme, TLP) else scheme.name


def _predicted(scheme, space: StateSpace, popularity) -> np.ndarray:
    if scheme.predicted is not None:
        return check_popularity(scheme.predicted, space.n_contents, "predicted popularity")
    if popularity is None:
        raise ValueError(f"{scheme.name.upper()} needs a predicted popularity or the true one")
    return check_popularity(popularity, space.n_contents)


def predicted_popularity(scheme: LP | TLP, n_contents: int, popularity=None) -> np.ndarray:
    if scheme.predicted is not None:
        return check_popularity(scheme.predicted, n_contents, "predicted popularity")
    return check_popularity(popularity, n_contents)


# ---------------------------------------------------------------------------
# per-scheme replacement rules


def lp_replacement_probability(predicted, l: int, q: int, cached) -> float:
    """Conditional probability that requested ``l`` replaces cached ``q`` under LP.

    Proportional to the predicted popularity gap over all cached contents
    that are strictly less popular than ``l``.
    """
    p = np.asarray(predicted, dtype=float)
    cached = tuple(cached)
    if q not in cached or l in cached:
        raise ValueError(f"need q in cached set and l outside it (l={l}, q={q}, cached={cached})")
    if not p[l - 1] > p[q - 1]:
        raise ValueError(f"content {l} is not predicted more popular than {q}")
    gaps = [p[l - 1] - p[t - 1] for t in cached if p[t - 1] < p[l - 1]]
    return float((p[l - 1] - p[q - 1]) / sum(gaps))


def tlp_target(predicted, cached) -> int:
    """Least predicted-popular cached content; ties go to the smallest label."""
    p = np.asarray(predicted, dtype=float)
    return min(cached, key=lambda t: (p[t - 1], t))


def tlp_replacement_probability(scheme: TLP, predicted, l: int, target: int) -> float:
    p = np.asarray(predicted, dtype=float)
    if not p[l - 1] > p[target - 1]:
        return 0.0
    if scheme.variant == "A":
        return 1.0
    phi = float(p[l - 1] - p[target - 1])
    assert 0.0 < phi < 1.0
    return phi


def replacement_distribution(scheme: Scheme, cached, l: int, predicted=None, rho_row=None) -> dict[int, float]:
    """Map ``q -> P(l replaces q | state, l requested)`` for uncached ``l``.

    Missing mass is the probability of no replacement. ``predicted`` is
    needed for LP/TLP and ``rho_row`` (indexed by content-1) for LRU.
    """
    cached = tuple(cached)
    if isinstance(scheme, RR):
        return {q: scheme.phi for q in cached}
    if isinstance(scheme, LP):
        eligible = [q for q in cached if predicted[q - 1] < predicted[l - 1]]
        return {q: scheme.alpha * lp_replacement_probability(predicted, l, q, cached) for q in eligible}
    if isinstance(scheme, TLP):
        target = tlp_target(predicted, cached)
        phi = tlp_replacement_probability(scheme, predicted, l, target)
        return {target: phi} if phi > 0.0 else {}
    if isinstance(scheme, LRU):
        return {q: float(rho_row[q - 1]) for q in cached}
    raise TypeError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# LRU recency


def recency_order_distribution(cached, popularity, max_orders: int = MAX_RECENCY_ORDERS):
    """Distribution of the recency order of a cache caching ``cached``.

    Returns ``(orders, probs)`` where each order lists the cached contents
    most-recent first. Under IRM the stationary probability of an LRU list
    ``(s_1..s_L)`` is ``prod_i v[s_i] / (1 - sum_{j<i} v[s_j])``; conditioning
    on the set removes the common numerator.
    """
    cached = tuple(cached)
    v = np.asarray(popularity, dtype=float)
    if factorial(len(cached)) > max_orders:
        raise RecencyTooLarge(
            f"{len(cached)}! recency orders exceed the cap {max_orders}; "
            "use cachefield.sim.estimate_recency_profile (Monte-Carlo) instead"
        )
    orders = list(permutations(cached))
    weights = np.empty(len(orders))
    for i, order in enumerate(orders):
        w, seen = 1.0, 0.0
        for c in order:
            w /= 1.0 - seen
            seen += v[c - 1]
        weights[i] = w
    return orders, weights / weights.sum()


@lru_cache(maxsize=None)
def _lru_tail_probs(cached: tuple[int, ...], popularity: tuple[float, ...]) -> dict[int, float]:
    # prefix-set recursion: weight(S + x) += weight(S) / (1 - v(S))
    v = popularity
    full = frozenset(cached)
    weight = {frozenset(): 1.0}
    frontier = [frozenset()]
    for _ in range(len(cached) - 1):
        nxt = {}
        for s in frontier:
            w = weight[s] / (1.0 - sum(v[c - 1] for c in s))
            for x in full - s:
                t = s | {x}
                nxt[t] = nxt.get(t, 0.0) + w
        weight.update(nxt)
        frontier = list(nxt)
    tail = {}
    for q in cached:
        head = full - {q}
        tail[q] = weight[head] / (1.0 - sum(v[c - 1] for c in head))
    total = sum(tail.values())
    return {q: w / total for q, w in tail.items()}


def lru_recency_profile(space: StateSpace, popularity, max_orders: int = MAX_RECENCY_ORDERS) -> np.ndarray:
    """Probability that each cached content is the least recently used one.

    Returns ``rho`` of shape ``(n_states, n_contents)`` with
    ``rho[k, q-1] = P(q is LRU | state k)`` and zeros for uncached contents.
    """
    v = check_popularity(popularity, space.n_contents)
    if factorial(space.cache_size) > max_orders:
        raise RecencyTooLarge(
            f"{space.cache_size}! recency orders exceed the cap {max_orders}; "
            "use cachefield.sim.estimate_recency_profile (Monte-Carlo) instead"
        )
    key = tuple(float(x) for x in v)
    rho = np.zeros((space.n_states, space.n_contents))
    for k, s in enumerate(space.states):
        for q, p in _lru_tail_probs(s, key).items():
            rho[k, q - 1] = p
    return rho


# ---------------------------------------------------------------------------
# matrices


def _prepare(scheme: Scheme, space: StateSpace, popularity):
    v = check_popularity(popularity, space.n_contents)
    scheme.validate(space, v)
    predicted = _predicted(scheme, space, v) if isinstance(scheme, (LP, TLP)) else None
    rho = lru_recency_profile(space, v) if isinstance(scheme, LRU) else None
    return v, predicted, rho


def _conditional(scheme, space, l, predicted, rho) -> np.ndarray:
    n = space.n_states
    theta = np.zeros((n, n))
    for k, cached in enumerate(space.states):
        if l in cached:
            theta[k, k] = 1.0
            continue
        probs = replacement_distribution(scheme, cached, l, predicted, None if rho is None else rho[k])
        out = 0.0
        for m, evicted, inserted in space.transitions(k):
            if inserted == l and evicted in probs:
                theta[m, k] = probs[evicted]
                out += probs[evicted]
        theta[k, k] = max(1.0 - out, 0.0)  # round-off when replacement is certain
    return theta


def conditional_matrix(scheme: Scheme, space: StateSpace, popularity, l: int) -> np.ndarray:
    """Transition matrix given that content ``l`` is requested."""
    if not (1 <= l <= space.n_contents):
        raise ValueError(f"content {l} out of range 1..{space.n_contents}")
    _, predicted, rho = _prepare(scheme, space, popularity)
    return _conditional(scheme, space, l, predicted, rho)


def conditional_matrices(scheme: Scheme, space: StateSpace, popularity) -> np.ndarray:
    """All conditional matrices stacked as ``(n_contents, n_states, n_states)``."""
    _, predicted, rho = _prepare(scheme, space, popularity)
    return np.stack([_conditional(scheme, space, l, predicted, rho) for l in range(1, space.n_contents + 1)])


def overall_matrix(scheme: Scheme, space: StateSpace, popularity) -> np.ndarray:
    """Overall transition matrix from the aggregated per-scheme expressions."""
    v, predicted, rho = _prepare(scheme, space, popularity)
    n = space.n_states
    L = space.cache_size
    theta = np.zeros((n, n))
    for k, cached in enumerate(space.states):
        cached_mass = v[[c - 1 for c in cached]].sum()
        moves = space.transitions(k)
        if isinstance(scheme, RR):
            theta[k, k] = max(1.0 - L * scheme.phi * (1.0 - cached_mass), 0.0)
            for m, evicted, inserted in moves:
                theta[m, k] = scheme.phi * v[inserted - 1]
        elif isinstance(scheme, LRU):
            theta[k, k] = cached_mass
            for m, evicted, inserted in moves:
                theta[m, k] = v[inserted - 1] * rho[k, evicted - 1]
        elif isinstance(scheme, LP):
            floor = min(predicted[c - 1] for c in cached)
            above = [l for l in range(1, space.n_contents + 1) if l not in cached and predicted[l - 1] > floor]
            below_mass = 1.0 - cached_mass - v[[l - 1 for l in above]].sum()
            theta[k, k] = cached_mass + below_mass + (1.0 - scheme.alpha) * v[[l - 1 for l in above]].sum()
            for m, evicted, inserted in moves:
                if predicted[inserted - 1] > predicted[evicted - 1]:
                    phi = lp_replacement_probability(predicted, inserted, evicted, cached)
                    theta[m, k] = scheme.alpha * v[inserted - 1] * phi
        elif isinstance(scheme, TLP):
            target = tlp_target(predicted, cached)
            diag = cached_mass
            for l in range(1, space.n_contents + 1):
                if l not in cached:
                    diag += v[l - 1] * (1.0 - tlp_replacement_probability(scheme, predicted, l, target))
            theta[k, k] = diag
            for m, evicted, inserted in moves:
                if evicted == target:
                    theta[m, k] = v[inserted - 1] * tlp_replacement_probability(scheme, predicted, inserted, target)
        else:
            raise TypeError(f"unknown scheme {scheme!r}")
    return theta
