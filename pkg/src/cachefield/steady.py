"""Steady states, balance checks and spectral convergence diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .schemes import LP, RR, TLP, Scheme, overall_matrix, predicted_popularity, tlp_replacement_probability
from .states import StateSpace, check_popularity, check_simplex_point

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000_000
AGREEMENT_TOL = 1e-9


class ConvergenceError(RuntimeError):
    """Power iteration ran out of iterations; carries the last iterate."""

    def __init__(self, message: str, last: np.ndarray, residual: float, iterations: int):
        super().__init__(message)
        self.last = last
        self.residual = residual
        self.iterations = iterations


@dataclass
class SteadyStateResult:
    eta_star: np.ndarray
    iterations: int
    residual: float
    method: str

    def to_dict(self) -> dict:
        return {
            "eta_star": self.eta_star.tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
            "method": self.method,
        }


def steady_state_power(theta, eta0=None, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SteadyStateResult:
    """Iterate ``eta <- theta @ eta`` until the sup-norm drift is at most ``tol``.

    ``iterations`` is the number of steps taken from ``eta0`` (uniform by
    default), i.e. the length of the path traced by the field.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    if tol <= 0:
        raise ValueError("tol must be positive")
    eta = np.full(n, 1.0 / n) if eta0 is None else check_simplex_point(eta0, n).copy()
    for it in range(max_iter + 1):
        nxt = theta @ eta
        residual = float(np.max(np.abs(nxt - eta)))
        if residual <= tol:
            return SteadyStateResult(eta, it, residual, "power-iteration")
        if it == max_iter:
            break
        eta = nxt
    raise ConvergenceError(f"no convergence within {max_iter} iterations (residual {residual:.3e})", eta, residual, max_iter)


def steady_state_rr_closed_form(space: StateSpace, popularity) -> SteadyStateResult:
    """RR steady state from the linear balance system, independent of phi.

    Rows ``0..N_s-2`` of ``A`` hold the balance vectors of the first
    ``N_s - 1`` states; the last row enforces normalisation.
    """
    v = check_popularity(popularity, space.n_contents)
    n, L = space.n_states, space.cache_size
    A = np.zeros((n, n))
    for m in range(n - 1):
        cached = space.states[m]
        A[m, m] = 1.0 - v[[c - 1 for c in cached]].sum()
        for k, evicted, _ in space.transitions(m):
            A[m, k] = -v[evicted - 1] / L
    A[n - 1, :] = 1.0
    g = np.zeros(n)
    g[-1] = 1.0
    try:
        eta = np.linalg.solve(A, g)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - positive popularity keeps A regular
        raise np.linalg.LinAlgError(f"singular balance system for RR: {exc}") from exc
    theta = overall_matrix(RR(1.0 / L), space, v)
    residual = float(np.max(np.abs(theta @ eta - eta)))
    return SteadyStateResult(eta, 0, residual, "rr-closed-form")


def absorbing_steady_state(theta) -> SteadyStateResult:
    """Steady state of a lower-triangular LP/TLP matrix in sorted state order."""
    theta = np.asarray(theta, dtype=float)
    if np.any(np.triu(theta, 1) != 0.0):
        raise ValueError("matrix is not lower-triangular; sort the state space by predicted mass")
    eta = np.zeros(theta.shape[0])
    eta[-1] = 1.0
    return SteadyStateResult(eta, 0, float(np.max(np.abs(theta @ eta - eta))), "absorbing-analytic")


def verify_balance_rr(space: StateSpace, popularity, eta) -> np.ndarray:
    """Per-state outflow minus inflow of the RR balance relation (phi factored out)."""
    v = check_popularity(popularity, space.n_contents)
    x = check_simplex_point(eta, space.n_states)
    res = np.empty(space.n_states)
    for m, cached in enumerate(space.states):
        miss = 1.0 - v[[c - 1 for c in cached]].sum()
        inflow = sum(x[k] * v[evicted - 1] for k, evicted, _ in space.transitions(m))
        res[m] = x[m] * miss - inflow / space.cache_size
    return res


def verify_balance_lru(space: StateSpace, popularity, rho, eta) -> np.ndarray:
    v = check_popularity(popularity, space.n_contents)
    x = check_simplex_point(eta, space.n_states)
    rho = np.asarray(rho, dtype=float)
    res = np.empty(space.n_states)
    for m, cached in enumerate(space.states):
        miss = 1.0 - v[[c - 1 for c in cached]].sum()
        # neighbor k returns to m when e(m,k) is requested and e(k,m) is its LRU content
        inflow = sum(v[evicted - 1] * rho[k, inserted - 1] * x[k] for k, evicted, inserted in space.transitions(m))
        res[m] = x[m] * miss - inflow
    return res


class BoundCheck(NamedTuple):
    t: int
    bound: float
    actual: float

    @property
    def holds(self) -> bool:
        return self.actual <= self.bound


@dataclass
class SpectralReport:
    eigenvalues: np.ndarray  # sorted by decreasing modulus
    largest: float
    second_largest_numeric: float
    second_largest_closed_form: float | None = None

    @property
    def agreement(self) -> bool | None:
        if self.second_largest_closed_form is None:
            return None
        return abs(self.second_largest_closed_form - self.second_largest_numeric) <= AGREEMENT_TOL

    def bound_at(self, t: int, eta0) -> float:
        return self.second_largest_numeric**t * float(np.linalg.norm(eta0))

    def to_dict(self) -> dict:
        ev = self.eigenvalues
        return {
            "eigenvalues_sorted": [[float(z.real), float(z.imag)] for z in ev],
            "ordering": "modulus",
            "largest": self.largest,
            "second_largest_numeric": self.second_largest_numeric,
            "closed_form": self.second_largest_closed_form,
            "agreement": self.agreement,
        }


def second_eigenvalue_closed_form(scheme: LP | TLP, space: StateSpace, popularity) -> float:
    """Diagonal entry of the second-best state in sorted LP/TLP matrices.

    The relevant content is the ``L``-th most popular by prediction; its
    request probability is taken from the true popularity, which coincides
    with the prediction when the prediction is perfect.
    """
    v = check_popularity(popularity, space.n_contents)
    p = predicted_popularity(scheme, space.n_contents, v)
    ascending = sorted(range(1, space.n_contents + 1), key=lambda c: (p[c - 1], c))
    l_hat = ascending[space.n_contents - space.cache_size]
    below = ascending[space.n_contents - space.cache_size - 1]
    if isinstance(scheme, LP):
        return 1.0 - scheme.alpha * v[l_hat - 1]
    return 1.0 - v[l_hat - 1] * tlp_replacement_probability(scheme, p, l_hat, below)


def spectral_report(theta, scheme: Scheme | None = None, space: StateSpace | None = None, popularity=None) -> SpectralReport:
    """Eigenvalues ordered by modulus; LP/TLP also get the closed-form value."""
    theta = np.asarray(theta, dtype=float)
    try:
        ev = np.linalg.eigvals(theta)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"eigensolver failed: {exc}") from exc
    ev = ev[np.argsort(-np.abs(ev), kind="stable")]
    mod = np.abs(ev)
    closed = None
    if isinstance(scheme, (LP, TLP)):
        if space is None or popularity is None:
            raise ValueError("closed form for LP/TLP needs the state space and popularity")
        closed = second_eigenvalue_closed_form(scheme, space, popularity)
    return SpectralReport(ev, float(mod[0]), float(mod[1]) if mod.size > 1 else 0.0, closed)


def convergence_bound(theta, eta0, t: int, eta_star=None, d2: float | None = None) -> BoundCheck:
    """``d2**t * ||eta0||_2`` next to the actual distance ``||theta^t eta0 - eta*||_2``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    theta = np.asarray(theta, dtype=float)
    x0 = check_simplex_point(eta0, theta.shape[0])
    if eta_star is None:
        eta_star = steady_state_power(theta).eta_star
    if d2 is None:
        d2 = spectral_report(theta).second_largest_numeric
    xt = np.linalg.matrix_power(theta, t) @ x0
    return BoundCheck(t, float(d2**t * np.linalg.norm(x0)), float(np.linalg.norm(xt - eta_star)))
