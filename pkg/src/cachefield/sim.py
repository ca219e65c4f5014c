"""Monte-Carlo engine: IRM requests, trace-driven replacement and estimators.

Two executors implement the replacement rules operationally. :func:`step`
advances a single :class:`CacheInstance` and backs :func:`run_trace`;
:class:`BatchCache` advances many independent caches at once with numpy and
backs the estimators. Neither touches the analytic transition matrices.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .schemes import LP, LRU, RR, TLP, Scheme, lp_replacement_probability, predicted_popularity, recency_order_distribution, tlp_target
from .states import StateSpace, check_popularity, check_simplex_point


def zipf_popularity(n_contents: int, exponent: float) -> np.ndarray:
    """Zipf request probabilities, content 1 most popular."""
    if exponent < 0:
        raise ValueError("Zipf exponent must be >= 0")
    if n_contents < 1:
        raise ValueError("n_contents must be >= 1")
    w = np.arange(1, n_contents + 1, dtype=float) ** -float(exponent)
    return w / w.sum()


def _cdf(probs) -> np.ndarray:
    c = np.cumsum(probs)
    c[-1] = 1.0
    return c


def categorical(probs, n: int, rng: np.random.Generator, stratified: bool = False) -> np.ndarray:
    """``n`` 0-based draws by cumulative-sum inversion.

    With ``stratified`` the uniforms are ``(i + U) / n`` (systematic
    sampling), so category counts are within one of ``n * probs`` and the
    draws come out sorted.
    """
    u = (np.arange(n) + rng.random()) / n if stratified else rng.random(n)
    return np.minimum(np.searchsorted(_cdf(probs), u, side="right"), len(probs) - 1)


class RequestStream:
    """Buffered IRM request generator yielding 1-based content labels."""

    def __init__(self, popularity, rng: np.random.Generator, block: int = 4096):
        self._cdf = _cdf(np.asarray(popularity, dtype=float))
        self._rng = rng
        self._block = block
        self._buf = np.empty(0, dtype=int)
        self._pos = 0

    def __iter__(self):
        return self

    def __next__(self) -> int:
        if self._pos >= self._buf.size:
            self._buf = np.searchsorted(self._cdf, self._rng.random(self._block), side="right") + 1
            np.minimum(self._buf, self._cdf.size, out=self._buf)
            self._pos = 0
        self._pos += 1
        return int(self._buf[self._pos - 1])

    def take(self, n: int) -> np.ndarray:
        return np.array([next(self) for _ in range(n)], dtype=int)


# ---------------------------------------------------------------------------
# single-cache executor


@dataclass(frozen=True)
class CacheInstance:
    """Cached contents plus, for LRU, the recency list (most recent first)."""

    contents: frozenset
    capacity: int
    recency: tuple[int, ...] | None = None

    @classmethod
    def from_contents(cls, contents: Iterable[int], capacity: int, track_recency: bool = False) -> "CacheInstance":
        order = tuple(contents)
        if len(set(order)) != len(order) or len(order) > capacity:
            raise ValueError(f"invalid initial cache {order} for capacity {capacity}")
        return cls(frozenset(order), capacity, order if track_recency else None)

    @property
    def full(self) -> bool:
        return len(self.contents) == self.capacity


def _resolve(scheme: Scheme, n_contents: int, popularity) -> np.ndarray | None:
    if isinstance(scheme, (LP, TLP)):
        return predicted_popularity(scheme, n_contents, popularity)
    return None


def step(scheme: Scheme, cache: CacheInstance, requested: int, rng: np.random.Generator, popularity=None):
    """Serve one request and apply the scheme's replacement decision.

    Returns ``(hit, cache_after)``. ``popularity`` is only consulted by
    LP/TLP when the scheme carries no prediction of its own. Misses on a
    cache that is not yet full fill a free slot without evicting.
    """
    hit = requested in cache.contents
    if hit:
        if cache.recency is not None:
            rec = (requested,) + tuple(c for c in cache.recency if c != requested)
            return True, CacheInstance(cache.contents, cache.capacity, rec)
        return True, cache
    if not cache.full:
        rec = None if cache.recency is None else (requested,) + cache.recency
        return False, CacheInstance(cache.contents | {requested}, cache.capacity, rec)

    victim = None
    cached = sorted(cache.contents)
    if isinstance(scheme, RR):
        u = rng.random()
        if u < scheme.phi * cache.capacity:
            victim = cached[min(int(u / scheme.phi), cache.capacity - 1)]
    elif isinstance(scheme, LP):
        pred = np.asarray(scheme.predicted if scheme.predicted is not None else popularity, dtype=float)
        eligible = [q for q in cached if pred[q - 1] < pred[requested - 1]]
        if eligible and rng.random() < scheme.alpha:
            u, acc = rng.random(), 0.0
            victim = eligible[-1]
            for q in eligible:
                acc += lp_replacement_probability(pred, requested, q, cached)
                if u < acc:
                    victim = q
                    break
    elif isinstance(scheme, TLP):
        pred = np.asarray(scheme.predicted if scheme.predicted is not None else popularity, dtype=float)
        target = tlp_target(pred, cached)
        gap = pred[requested - 1] - pred[target - 1]
        if gap > 0 and (scheme.variant == "A" or rng.random() < gap):
            victim = target
    elif isinstance(scheme, LRU):
        if cache.recency is None:
            raise ValueError("LRU needs a cache with a recency list")
        victim = cache.recency[-1]
    else:
        raise TypeError(f"unknown scheme {scheme!r}")

    if victim is None:
        return False, cache
    contents = (cache.contents - {victim}) | {requested}
    rec = None if cache.recency is None else (requested,) + tuple(c for c in cache.recency if c != victim)
    return False, CacheInstance(contents, cache.capacity, rec)


@dataclass
class Trajectory:
    """Per-request records of a trace; ``states`` is -1 while not full or without a space."""

    requests: np.ndarray
    hits: np.ndarray
    states: np.ndarray
    final_cache: CacheInstance

    @property
    def hit_ratio(self) -> float:
        return float(self.hits.mean())

    def occupancy(self, n_states: int, burn_in: int = 0) -> np.ndarray:
        s = self.states[burn_in:]
        s = s[s >= 0]
        return np.bincount(s, minlength=n_states) / max(s.size, 1)


def run_trace(
    scheme: Scheme,
    popularity,
    initial_cache,
    n_requests: int,
    seed: int = 0,
    space: StateSpace | None = None,
    cache_size: int | None = None,
) -> Trajectory:
    """Drive one cache with ``n_requests`` IRM requests.

    ``initial_cache`` is a :class:`CacheInstance` or an iterable of contents
    (most recent first); ``cache_size`` defaults to ``space.cache_size`` or
    to the size of the initial cache.
    """
    if n_requests < 1:
        raise ValueError("n_requests must be >= 1")
    v = check_popularity(popularity)
    if not isinstance(initial_cache, CacheInstance):
        order = tuple(initial_cache)
        cap = cache_size or (space.cache_size if space is not None else len(order))
        initial_cache = CacheInstance.from_contents(order, cap, isinstance(scheme, LRU))
    pred = _resolve(scheme, v.size, v)
    rng = np.random.default_rng(seed)
    requests = RequestStream(v, rng).take(n_requests)
    hits = np.zeros(n_requests, dtype=bool)
    states = np.full(n_requests, -1, dtype=int)
    cache = initial_cache
    for i, l in enumerate(requests):
        hits[i], cache = step(scheme, cache, int(l), rng, pred)
        if space is not None and cache.full:
            states[i] = space.index(cache.contents)
    return Trajectory(requests, hits, states, cache)


# ---------------------------------------------------------------------------
# vectorised executor


class BatchCache:
    """Many independent caches advanced in lock-step.

    ``slots`` holds content labels (0 marks a free slot); ``stamps`` holds
    last-use times and is what LRU evicts by.
    """

    def __init__(self, scheme: Scheme, n_contents: int, cache_size: int, slots: np.ndarray, stamps=None, popularity=None):
        self.scheme = scheme
        self.n_contents = n_contents
        self.L = cache_size
        self.slots = np.array(slots, dtype=np.int64).reshape(-1, cache_size)
        self.stamps = (
            np.zeros(self.slots.shape, dtype=float) if stamps is None else np.array(stamps, dtype=float).reshape(self.slots.shape)
        )
        self.stamps[self.slots == 0] = -np.inf
        self.time = float(max(self.stamps.max(initial=0.0), 0.0)) + 1.0
        pred = _resolve(scheme, n_contents, popularity)
        if pred is not None:
            self._pred = np.concatenate([[-np.inf], pred])
            order = sorted(range(1, n_contents + 1), key=lambda c: (pred[c - 1], c))
            self._rank = np.empty(n_contents + 1, dtype=np.int64)
            self._rank[0] = -1
            self._rank[order] = np.arange(n_contents)

    @classmethod
    def empty(cls, scheme, n_contents, cache_size, n, popularity=None) -> "BatchCache":
        return cls(scheme, n_contents, cache_size, np.zeros((n, cache_size), dtype=np.int64), popularity=popularity)

    def __len__(self) -> int:
        return self.slots.shape[0]

    def cached(self, content: int) -> np.ndarray:
        return (self.slots == content).any(axis=1)

    def state_keys(self) -> np.ndarray:
        s = np.sort(self.slots, axis=1)
        base = self.n_contents + 1
        return s @ (base ** np.arange(self.L, dtype=np.int64))

    def apply(self, requests: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        req = np.asarray(requests, dtype=np.int64)
        n, L = self.slots.shape
        rows = np.arange(n)
        match = self.slots == req[:, None]
        hit = match.any(axis=1)
        t = self.time
        self.time += 1.0
        self.stamps[match] = t

        miss = ~hit
        free = self.slots == 0
        filling = miss & free.any(axis=1)
        if filling.any():
            col = np.argmax(free[filling], axis=1)
            r = rows[filling]
            self.slots[r, col] = req[filling]
            self.stamps[r, col] = t
        full_miss = miss & ~filling
        if not full_miss.any():
            return hit
        r = rows[full_miss]
        lr = req[full_miss]
        victim = np.full(r.size, -1, dtype=np.int64)
        s = self.scheme
        if isinstance(s, RR):
            u = rng.random(r.size)
            go = u < s.phi * L
            # slots are compared in sorted-label order, as in the scalar executor
            order = np.argsort(self.slots[r], axis=1)
            pick = np.minimum((u / s.phi).astype(np.int64), L - 1)
            victim[go] = order[go, pick[go]]
        elif isinstance(s, LP):
            gaps = self._pred[lr][:, None] - self._pred[self.slots[r]]
            gaps = np.where(gaps > 0, gaps, 0.0)
            tot = gaps.sum(axis=1)
            go = (tot > 0) & (rng.random(r.size) < s.alpha)
            u = rng.random(r.size)
            cdf = np.cumsum(gaps, axis=1) / np.where(tot > 0, tot, 1.0)[:, None]
            pick = np.minimum((u[:, None] >= cdf).sum(axis=1), L - 1)
            # never land on an ineligible slot through rounding at the top end
            pick = np.where(gaps[np.arange(r.size), pick] > 0, pick, np.argmax(gaps, axis=1))
            victim[go] = pick[go]
        elif isinstance(s, TLP):
            target = np.argmin(self._rank[self.slots[r]], axis=1)
            gap = self._pred[lr] - self._pred[self.slots[r, target]]
            go = gap > 0
            if s.variant == "P":
                go &= rng.random(r.size) < gap
            victim[go] = target[go]
        elif isinstance(s, LRU):
            victim = np.argmin(self.stamps[r], axis=1)
        else:
            raise TypeError(f"unknown scheme {s!r}")
        ok = victim >= 0
        self.slots[r[ok], victim[ok]] = lr[ok]
        self.stamps[r[ok], victim[ok]] = t
        return hit


class _StateIndex:
    def __init__(self, space: StateSpace):
        base = space.n_contents + 1
        weights = base ** np.arange(space.cache_size, dtype=np.int64)
        keys = np.array(space.states, dtype=np.int64) @ weights
        self.order = np.argsort(keys)
        self.keys = keys[self.order]

    def __call__(self, keys: np.ndarray) -> np.ndarray:
        pos = np.searchsorted(self.keys, keys)
        return self.order[pos]


# ---------------------------------------------------------------------------
# LRU recency realisations


def history_recency(cached: Sequence[int], stream: RequestStream, max_tries: int = 1_000_000) -> tuple[int, ...]:
    """Recency order of a stationary LRU cache known to hold ``cached``.

    Requests are replayed backwards in time; the first ``L`` distinct
    contents met form the LRU list. Histories whose list is not exactly
    ``cached`` are rejected.
    """
    target = set(cached)
    L = len(target)
    for _ in range(max_tries):
        seen: list[int] = []
        while len(seen) < L:
            c = next(stream)
            if c in seen:
                continue
            if c not in target:
                break
            seen.append(c)
        else:
            return tuple(seen)
    raise RuntimeError(f"no history produced cache {sorted(cached)} in {max_tries} tries")


def _initial_batch(scheme, space, popularity, state_idx, rng, recency):
    """Caches realising the given states; LRU recency drawn per ``recency`` mode."""
    slots = np.array([space.states[k] for k in state_idx], dtype=np.int64).reshape(-1, space.cache_size)
    stamps = None
    if isinstance(scheme, LRU):
        stamps = np.empty(slots.shape)
        ranks = -np.arange(space.cache_size, dtype=float)
        if recency == "profile":
            for k in np.unique(state_idx):
                rows = np.flatnonzero(state_idx == k)
                orders, probs = recency_order_distribution(space.states[k], popularity)
                pick = categorical(probs, rows.size, rng)
                slots[rows] = np.array(orders, dtype=np.int64)[pick]
        elif recency == "trace":
            stream = RequestStream(popularity, rng)
            for i, k in enumerate(state_idx):
                slots[i] = history_recency(space.states[k], stream)
        else:
            raise ValueError(f"unknown recency mode {recency!r}")
        stamps[:] = ranks
    return BatchCache(scheme, space.n_contents, space.cache_size, slots, stamps, popularity)


def _stratified_within(groups: np.ndarray, probs, rng, stratified: bool) -> np.ndarray:
    """One categorical draw per entry of ``groups``, stratified inside each group."""
    out = np.empty(groups.size, dtype=np.int64)
    for g in np.unique(groups):
        rows = np.flatnonzero(groups == g)
        draws = categorical(probs, rows.size, rng, stratified)
        out[rows] = rng.permutation(draws) if stratified else draws
    return out


@dataclass
class ThetaEstimate:
    theta: np.ndarray
    conditional: np.ndarray  # (n_contents, n_states, n_states)
    stderr: np.ndarray
    counts: np.ndarray  # trials per (content, state)


def _theta_column(scheme, space, v, k, n, seed, recency, stratified, index):
    rng = np.random.default_rng(seed)
    reqs = categorical(v, n, rng, stratified) + 1
    batch = _initial_batch(scheme, space, v, np.full(n, k), rng, recency)
    batch.apply(reqs, rng)
    nxt = index(batch.state_keys())
    cond = np.zeros((space.n_contents, space.n_states))
    counts = np.bincount(reqs - 1, minlength=space.n_contents)
    for l in range(1, space.n_contents + 1):
        sel = reqs == l
        if sel.any():
            cond[l - 1] = np.bincount(nxt[sel], minlength=space.n_states) / sel.sum()
    return cond, counts


def empirical_theta(
    scheme: Scheme,
    popularity,
    space: StateSpace,
    samples_per_state: int,
    seed: int = 0,
    recency: str = "profile",
    sampling: str = "stratified",
    workers: int = 1,
) -> ThetaEstimate:
    """Transition matrix estimated from simulated single-step transitions.

    Each state gets ``samples_per_state`` requests; requests are grouped by
    content so that the conditional matrices are estimated too, and the
    overall estimate weights them by popularity. Every state uses its own
    child seed, so results do not depend on ``workers``.
    """
    v = check_popularity(popularity, space.n_contents)
    if sampling not in ("stratified", "iid"):
        raise ValueError(f"unknown sampling {sampling!r}")
    seeds = np.random.SeedSequence(seed).spawn(space.n_states)
    index = _StateIndex(space)
    args = [(scheme, space, v, k, samples_per_state, seeds[k], recency, sampling == "stratified", index) for k in range(space.n_states)]
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            cols = list(pool.map(lambda a: _theta_column(*a), args))
    else:
        cols = [_theta_column(*a) for a in args]
    cond = np.zeros((space.n_contents, space.n_states, space.n_states))
    counts = np.zeros((space.n_contents, space.n_states))
    for k, (c, n) in enumerate(cols):
        cond[:, :, k] = c
        counts[:, k] = n
    theta = np.einsum("l,lmk->mk", v, cond)
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(counts[:, None, :] > 0, cond * (1 - cond) / counts[:, None, :], 0.0)
    stderr = np.sqrt(np.einsum("l,lmk->mk", v**2, var))
    return ThetaEstimate(theta, cond, stderr, counts)


def empirical_stf(
    scheme: Scheme,
    popularity,
    space: StateSpace,
    eta,
    n_realizations: int = 1000,
    n_requests: int = 1000,
    seed: int = 0,
    mode: str = "categorical",
    sampling: str = "stratified",
) -> np.ndarray:
    """Estimate the field at ``eta`` from simulated one-step transitions.

    ``mode="categorical"``: draw ``n_realizations`` states from ``eta`` and
    serve ``n_requests`` independent requests to each (LRU recency drawn
    from its stationary conditional law). ``mode="trace"``: serve
    ``n_requests`` requests, each to its own realised cache whose LRU
    recency comes from a replayed request history; ``n_realizations`` is
    not used. ``sampling="stratified"`` uses systematic draws for states and
    for requests within each state.
    """
    v = check_popularity(popularity, space.n_contents)
    x = check_simplex_point(eta, space.n_states)
    strat = {"stratified": True, "iid": False}[sampling]
    rng = np.random.default_rng(seed)
    index = _StateIndex(space)
    if mode == "categorical":
        states = categorical(x, n_realizations, rng, strat)
        if strat:
            u = (np.arange(n_requests)[None, :] + rng.random((n_realizations, 1))) / n_requests
        else:
            u = rng.random((n_realizations, n_requests))
        reqs = np.minimum(np.searchsorted(_cdf(v), u, side="right"), v.size - 1) + 1
        batch = _initial_batch(scheme, space, v, states, rng, "profile")
        # each realisation serves its requests independently from the same start
        start_slots, start_stamps = batch.slots, batch.stamps
        batch.slots = np.repeat(start_slots, n_requests, axis=0)
        batch.stamps = np.repeat(start_stamps, n_requests, axis=0)
        start = np.repeat(states, n_requests)
        batch.apply(reqs.reshape(-1), rng)
    elif mode == "trace":
        start = categorical(x, n_requests, rng, strat)
        reqs = _stratified_within(start, v, rng, strat) + 1
        batch = _initial_batch(scheme, space, v, start, rng, "trace")
        batch.apply(reqs, rng)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    nxt = index(batch.state_keys())
    total = start.size
    return (np.bincount(nxt, minlength=space.n_states) - np.bincount(start, minlength=space.n_states)) / total


@dataclass
class CcpEstimate:
    """Instantaneous caching probabilities averaged over rounds.

    ``values[n, j]`` is the fraction of rounds caching ``contents[j]`` right
    after request ``n + 1``.
    """

    contents: list[int]
    values: np.ndarray
    hit_ratio: np.ndarray
    n_rounds: int

    @property
    def request_index(self) -> np.ndarray:
        return np.arange(1, self.values.shape[0] + 1)

    def series(self, content: int) -> np.ndarray:
        return self.values[:, self.contents.index(content)]


def ccp_trajectory(
    scheme: Scheme,
    popularity,
    cache_size: int,
    n_rounds: int,
    n_requests: int,
    tracked_contents: Sequence[int] | None = None,
    seed: int = 0,
) -> CcpEstimate:
    """Rounds start from an empty cache; CCP is recorded after every request."""
    v = check_popularity(popularity)
    if not (1 <= cache_size < v.size):
        raise ValueError("need 1 <= cache_size < n_contents")
    tracked = list(range(1, v.size + 1)) if tracked_contents is None else [int(c) for c in tracked_contents]
    if any(not (1 <= c <= v.size) for c in tracked):
        raise ValueError(f"tracked contents must lie in 1..{v.size}")
    rng = np.random.default_rng(seed)
    batch = BatchCache.empty(scheme, v.size, cache_size, n_rounds, popularity=v)
    cdf = _cdf(v)
    values = np.empty((n_requests, len(tracked)))
    hits = np.empty(n_requests)
    for n in range(n_requests):
        reqs = np.minimum(np.searchsorted(cdf, rng.random(n_rounds), side="right"), v.size - 1) + 1
        hits[n] = batch.apply(reqs, rng).mean()
        for j, c in enumerate(tracked):
            values[n, j] = batch.cached(c).mean()
    return CcpEstimate(tracked, values, hits, n_rounds)


def estimate_recency_profile(space: StateSpace, popularity, n_requests: int, seed: int = 0, burn_in: int = 1000):
    """Monte-Carlo LRU recency profile from one long LRU trace.

    Returns ``(rho_hat, visits)`` where ``rho_hat[k, q-1]`` is the observed
    frequency of ``q`` being least recent while the cache is in state ``k``.
    """
    v = check_popularity(popularity, space.n_contents)
    rng = np.random.default_rng(seed)
    stream = RequestStream(v, rng)
    rec = list(space.states[0])
    hits = Counter()
    visits = np.zeros(space.n_states)
    for i in range(burn_in + n_requests):
        c = next(stream)
        if c in rec:
            rec.remove(c)
        else:
            rec.pop()
        rec.insert(0, c)
        if i >= burn_in:
            k = space.index(rec)
            visits[k] += 1
            hits[(k, rec[-1])] += 1
    rho = np.zeros((space.n_states, space.n_contents))
    for (k, q), n in hits.items():
        rho[k, q - 1] = n / visits[k]
    return rho, visits
