"""State transition field evaluation, domain sampling and steady-state metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .schemes import Scheme, conditional_matrices, overall_matrix
from .states import StateSpace, check_popularity, check_simplex_point

DEFAULT_SAMPLE_COUNT = 1000


@dataclass
class FieldSample:
    point: np.ndarray
    field: np.ndarray
    decomposition: np.ndarray | None = None  # (n_contents, n_states), row l-1 is u_l


@dataclass
class ConvergenceReport:
    aggregate: float
    minimum: float
    maximum: float
    samples_used: int
    second_eigenvalue_numeric: float
    projections: np.ndarray = field(repr=False)

    @property
    def projection_metric(self) -> float:
        return self.aggregate


def _check_square(theta) -> np.ndarray:
    t = np.asarray(theta, dtype=float)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise ValueError(f"transition matrix must be square, got shape {t.shape}")
    return t


def stf(theta, eta) -> np.ndarray:
    """Expected one-step drift ``theta @ eta - eta`` of the SCP."""
    t = _check_square(theta)
    x = check_simplex_point(eta, t.shape[0])
    return t @ x - x


content_stf = stf


def rr_content_stf(space: StateSpace, phi: float, l: int, eta) -> np.ndarray:
    """Content-``l`` field of RR written out per state, without any matrix.

    States caching ``l`` gain ``phi`` times the mass of every state they are a
    content-``l`` neighbor of; the other states lose ``L * phi`` of their own.
    """
    x = check_simplex_point(eta, space.n_states)
    u = np.empty(space.n_states)
    for m, cached in enumerate(space.states):
        if l in cached:
            # m is a content-l neighbor of k  <=>  k is reached from m by evicting l
            u[m] = phi * sum(x[k] for k, evicted, _ in space.transitions(m) if evicted == l)
        else:
            u[m] = -space.cache_size * phi * x[m]
    return u


def lru_content_stf(space: StateSpace, rho, l: int, eta) -> np.ndarray:
    """Content-``l`` field of LRU written out per state."""
    x = check_simplex_point(eta, space.n_states)
    rho = np.asarray(rho, dtype=float)
    u = np.empty(space.n_states)
    for m, cached in enumerate(space.states):
        if l in cached:
            # k -> m evicts e(k, m), the content m gains back when reverting to k
            u[m] = sum(rho[k, inserted - 1] * x[k] for k, evicted, inserted in space.transitions(m) if evicted == l)
        else:
            u[m] = -x[m]
    return u


def barycentric_grid(step: float = 0.1) -> np.ndarray:
    """Regular grid on the 2-simplex (three states), vertices included."""
    n = round(1.0 / step)
    if n < 1 or abs(n * step - 1.0) > 1e-9:
        raise ValueError(f"step must divide 1, got {step}")
    pts = [(i / n, j / n, (n - i - j) / n) for i in range(n + 1) for j in range(n + 1 - i)]
    return np.array(pts)


def sample_domain(n_states: int, count: int, rng_seed: int | None = 0, grid_step: float | None = None) -> np.ndarray:
    """Points in the SCP domain, one per row.

    Uniform (flat Dirichlet) draws by default. With ``grid_step`` and three
    states a barycentric grid is returned instead and ``count`` is ignored.
    """
    if grid_step is not None:
        if n_states != 3:
            raise ValueError("barycentric grids are only offered for three states")
        return barycentric_grid(grid_step)
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(rng_seed)
    return rng.dirichlet(np.ones(n_states), size=count)


def field_snapshot(scheme: Scheme, space: StateSpace, popularity, points, decompose: bool = False) -> list[FieldSample]:
    theta = overall_matrix(scheme, space, popularity)
    conds = conditional_matrices(scheme, space, popularity) if decompose else None
    out = []
    for eta in np.atleast_2d(np.asarray(points, dtype=float)):
        x = check_simplex_point(eta, space.n_states)
        dec = None
        if conds is not None:
            dec = np.einsum("lmk,k->lm", conds, x) - x
        out.append(FieldSample(x, theta @ x - x, dec))
    return out


def replacement_activity_metric(scheme: Scheme, space: StateSpace, popularity, eta_star) -> float:
    """Popularity-weighted sum of content-field norms at ``eta_star``.

    Zero means no replacements happen at that point; larger values mean
    more churn while the overall field stays balanced.
    """
    v = check_popularity(popularity, space.n_contents)
    x = check_simplex_point(eta_star, space.n_states)
    conds = conditional_matrices(scheme, space, v)
    per_content = np.einsum("lmk,k->lm", conds, x) - x
    return float(v @ np.linalg.norm(per_content, axis=1))


def convergence_projection_metric(
    scheme: Scheme, space: StateSpace, popularity, eta_star, points: Sequence, atol: float = 1e-12
) -> ConvergenceReport:
    """Project the field at each point onto the unit direction towards ``eta_star``.

    Points closer than ``atol`` to ``eta_star`` are skipped. The aggregate is
    the arithmetic mean of the projections.
    """
    theta = overall_matrix(scheme, space, popularity)
    target = check_simplex_point(eta_star, space.n_states)
    projections = []
    for eta in np.atleast_2d(np.asarray(points, dtype=float)):
        x = check_simplex_point(eta, space.n_states)
        d = target - x
        dist = np.linalg.norm(d)
        if dist <= atol:
            continue
        projections.append((theta @ x - x) @ d / dist)
    if not projections:
        raise ValueError("no sample points left after removing those at the steady state")
    p = np.array(projections)
    moduli = np.sort(np.abs(np.linalg.eigvals(theta)))[::-1]
    second = float(moduli[1]) if moduli.size > 1 else 0.0
    return ConvergenceReport(float(p.mean()), float(p.min()), float(p.max()), p.size, second, p)
