"""Cache states, neighbor structure and SCP/CCP conversions.

Contents are labelled ``1..n_contents``. States are addressed by their
0-based position in :attr:`StateSpace.states`; the canonical order is
lexicographic on the sorted content tuples, so with ``(5, 2)`` the state at
index 6 caches ``(2, 5)``.
"""
from __future__ import annotations

import os
from functools import cached_property
from itertools import combinations
from math import comb
from typing import Iterable, Sequence

import numpy as np

DEFAULT_MAX_STATES = 100_000
PROB_TOL = 1e-12


class StateSpaceTooLarge(ValueError):
    """Raised when C(N_c, L) exceeds the exact-regime cap."""


def max_states_cap() -> int:
    env = os.environ.get("STF_CACHE_MAX_STATES")
    return int(env) if env else DEFAULT_MAX_STATES


def check_popularity(probs, n_contents: int | None = None, name: str = "popularity") -> np.ndarray:
    """Validate a request probability vector and return it as a float array.

    Entries must be strictly positive and sum to one within ``1e-12``. The
    vector is never renormalised.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d vector")
    if n_contents is not None and p.size != n_contents:
        raise ValueError(f"{name} has length {p.size}, expected {n_contents}")
    if not np.all(np.isfinite(p)) or np.any(p <= 0.0) or np.any(p > 1.0):
        raise ValueError(f"{name} entries must lie in (0, 1]")
    if abs(p.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"{name} sums to {p.sum()!r}, not 1 (tolerance {PROB_TOL})")
    return p


def check_simplex_point(eta, n_states: int) -> np.ndarray:
    x = np.asarray(eta, dtype=float)
    if x.shape != (n_states,):
        raise ValueError(f"SCP vector has shape {x.shape}, expected ({n_states},)")
    if np.any(x < -PROB_TOL) or np.any(x > 1.0 + PROB_TOL):
        raise ValueError("SCP entries must lie in [0, 1]")
    if abs(x.sum() - 1.0) > PROB_TOL:
        raise ValueError(f"SCP sums to {x.sum()!r}, not 1")
    return x


class StateSpace:
    """All L-subsets of ``{1..n_contents}`` in a fixed order.

    Instances are immutable after construction. Use :func:`enumerate_states`
    for the canonical order and :meth:`reordered` for any other order.
    """

    def __init__(self, n_contents: int, cache_size: int, states: Sequence[Sequence[int]]):
        self.n_contents = int(n_contents)
        self.cache_size = int(cache_size)
        self.states: tuple[tuple[int, ...], ...] = tuple(tuple(sorted(s)) for s in states)
        self._index = {s: i for i, s in enumerate(self.states)}
        if len(self._index) != len(self.states):
            raise ValueError("duplicate states")
        if len(self.states) != comb(self.n_contents, self.cache_size):
            raise ValueError("states do not exhaust all L-subsets")
        for s in self.states:
            if len(s) != self.cache_size or s[0] < 1 or s[-1] > self.n_contents:
                raise ValueError(f"invalid state {s}")

    def __repr__(self) -> str:
        return f"StateSpace(n_contents={self.n_contents}, cache_size={self.cache_size}, n_states={self.n_states})"

    def __len__(self) -> int:
        return len(self.states)

    @property
    def n_states(self) -> int:
        return len(self.states)

    def index(self, contents: Iterable[int]) -> int:
        key = tuple(sorted(contents))
        try:
            return self._index[key]
        except KeyError:
            raise ValueError(f"{key} is not a state of {self!r}") from None

    def contents(self, k: int) -> tuple[int, ...]:
        self._check_index(k)
        return self.states[k]

    def _check_index(self, k: int) -> None:
        if not (0 <= k < self.n_states):
            raise ValueError(f"state index {k} out of range 0..{self.n_states - 1}")

    @cached_property
    def _sets(self) -> tuple[frozenset, ...]:
        return tuple(frozenset(s) for s in self.states)

    @cached_property
    def matrix(self) -> np.ndarray:
        """Cache state matrix C_s (rows = contents, columns = states)."""
        cs = np.zeros((self.n_contents, self.n_states))
        for k, s in enumerate(self.states):
            cs[[c - 1 for c in s], k] = 1.0
        cs.setflags(write=False)
        return cs

    @cached_property
    def _transitions(self) -> tuple[tuple[tuple[int, int, int], ...], ...]:
        # per state k: (m, removed e(k,m), added e(m,k)) for every neighbor m
        out = []
        for s in self.states:
            cached = set(s)
            row = []
            for q in s:
                base = cached - {q}
                for l in range(1, self.n_contents + 1):
                    if l in cached:
                        continue
                    m = self._index[tuple(sorted(base | {l}))]
                    row.append((m, q, l))
            row.sort()
            out.append(tuple(row))
        return tuple(out)

    def transitions(self, k: int) -> tuple[tuple[int, int, int], ...]:
        """Neighbor moves out of state ``k`` as ``(m, evicted, inserted)`` triples."""
        self._check_index(k)
        return self._transitions[k]

    def neighbors(self, k: int) -> list[int]:
        return [m for m, _, _ in self.transitions(k)]

    def content_neighbors(self, k: int, l: int) -> list[int]:
        if not (1 <= l <= self.n_contents):
            raise ValueError(f"content {l} out of range")
        if l in self.contents(k):
            raise ValueError(f"content {l} is cached in state {k}")
        return [m for m, _, added in self.transitions(k) if added == l]

    def swapped_content(self, k: int, m: int) -> int:
        """The unique content cached in state ``k`` but not in state ``m``."""
        self._check_index(k)
        self._check_index(m)
        diff = self._sets[k] - self._sets[m]
        if len(diff) != 1:
            raise ValueError(f"states {k} and {m} are not neighbors")
        return next(iter(diff))

    def reordered(self, perm: Sequence[int]) -> "StateSpace":
        """A new space whose i-th state is ``self.states[perm[i]]``."""
        perm = list(perm)
        if sorted(perm) != list(range(self.n_states)):
            raise ValueError("perm is not a permutation of state indices")
        return StateSpace(self.n_contents, self.cache_size, [self.states[i] for i in perm])


def enumerate_states(n_contents: int, cache_size: int, max_states: int | None = None) -> StateSpace:
    if not (1 <= cache_size < n_contents):
        raise ValueError(f"need 1 <= cache_size < n_contents, got L={cache_size}, N_c={n_contents}")
    cap = max_states_cap() if max_states is None else max_states
    n = comb(n_contents, cache_size)
    if n > cap:
        raise StateSpaceTooLarge(
            f"state space too large for exact regime: C({n_contents},{cache_size}) = {n} > {cap}"
        )
    return StateSpace(n_contents, cache_size, combinations(range(1, n_contents + 1), cache_size))


def neighbors(space: StateSpace, k: int) -> list[int]:
    return space.neighbors(k)


def content_neighbors(space: StateSpace, k: int, l: int) -> list[int]:
    return space.content_neighbors(k, l)


def swapped_content(space: StateSpace, k: int, m: int) -> int:
    return space.swapped_content(k, m)


def scp_to_ccp(space: StateSpace, eta) -> np.ndarray:
    """Content caching probabilities ``lambda = C_s @ eta``."""
    eta = check_simplex_point(eta, space.n_states)
    return space.matrix @ eta


def hit_probability(popularity, ccp) -> float:
    v = np.asarray(popularity, dtype=float)
    lam = np.asarray(ccp, dtype=float)
    if v.shape != lam.shape or v.ndim != 1:
        raise ValueError(f"dimension mismatch: {v.shape} vs {lam.shape}")
    return float(v @ lam)


def sort_states_by_predicted_mass(space: StateSpace, predicted) -> np.ndarray:
    """Permutation putting states in non-decreasing order of predicted mass.

    Ties keep the order of ``space`` (lexicographic for a canonical space).
    """
    p = check_popularity(predicted, space.n_contents, "predicted popularity")
    mass = np.array([p[[c - 1 for c in s]].sum() for s in space.states])
    return np.argsort(mass, kind="stable")


def sorted_space(space: StateSpace, predicted) -> StateSpace:
    return space.reordered(sort_states_by_predicted_mass(space, predicted))
