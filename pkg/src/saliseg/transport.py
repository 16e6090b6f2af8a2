"""Saliency-aware fused unbalanced Gromov-Wasserstein transport solver.

The problem couples ``F_v`` valid frames with ``K`` anchors through a plan
``T >= 0``. Three costs enter the objective:

* a Kantorovich cost: cosine distance between frame and anchor, discounted
  per frame by ``mu`` times the sigmoid saliency prior;
* a quadratic structure term comparing normalized frame-index distances
  against a 0/1 anchor-disagreement matrix with the squared loss, which
  rewards temporally contiguous anchor assignments;
* a KL penalty ``gamma * KL(T 1_K || p_hat)`` that pulls the frame marginal
  toward the normalized saliency prior, while the anchor marginal is pinned
  exactly to uniform ``1/K``.

The solver alternates two steps until the plan stabilizes: (1) linearize the
quadratic term at the current plan, giving a local linear cost, and solve the
resulting KL-relaxed entropic problem with log-domain scaling iterations
(row exponent ``gamma / (gamma + epsilon)``, exact column scaling); (2) take
the best point on the segment from the current plan to that solution under
the exact fused objective. Step (2) makes the recorded objective trace
non-increasing by construction, and keeps column sums exact because both
segment endpoints satisfy them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import DataError, NumericalError
from .rng import substream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnchorSet:
    """K anchor vectors acting as semantic prototypes for segmentation."""

    anchors: NDArray[np.float64]

    def __post_init__(self) -> None:
        a = np.asarray(self.anchors, dtype=np.float64)
        object.__setattr__(self, "anchors", a)
        if a.ndim != 2 or a.shape[0] < 1:
            raise DataError("anchors must be a K x D matrix with K >= 1")
        if not np.all(np.isfinite(a)):
            raise DataError("non-finite anchors")
        if np.any(np.linalg.norm(a, axis=1) == 0):
            raise DataError("zero-norm anchor")

    @property
    def count(self) -> int:
        return self.anchors.shape[0]


@dataclass(frozen=True)
class OtProblem:
    """All inputs of one solve, built on valid frames only."""

    C_k: NDArray[np.float64]
    C_v: NDArray[np.float64]
    C_a: NDArray[np.float64]
    p_hat: NDArray[np.float64]
    q: NDArray[np.float64]
    alpha: float
    gamma: float
    epsilon: float
    F_v: int

    def __post_init__(self) -> None:
        if self.epsilon <= 0:
            raise DataError("epsilon must be > 0")
        if not 0.0 <= self.alpha <= 1.0:
            raise DataError("alpha must lie in [0, 1]")
        if self.gamma < 0:
            raise DataError("gamma must be >= 0")
        if abs(float(self.p_hat.sum()) - 1.0) > 1e-9 or np.any(self.p_hat <= 0):
            raise DataError("p_hat must be strictly positive and sum to 1")
        if abs(float(self.q.sum()) - 1.0) > 1e-9:
            raise DataError("q must sum to 1")
        if self.C_k.shape != (self.F_v, self.q.shape[0]):
            raise DataError("cost matrix shape mismatch")


@dataclass
class TransportPlan:
    """Solver output: the plan, the objective trace, and convergence info."""

    T: NDArray[np.float64]
    objective_trace: list[float]
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SolverOptions:
    max_outer: int = 200
    max_inner: int = 100
    plan_tol: float = 1e-7
    potential_tol: float = 1e-11
    line_search_points: int = 33


def build_kot_cost(
    xs: NDArray[np.float64],
    anchors: AnchorSet,
    p_s: NDArray[np.float64],
    mu: float,
) -> NDArray[np.float64]:
    """Cosine frame-anchor cost with a saliency discount.

    ``C[n, j] = (1 - cos(x_n, a_j)) - mu * p_s[n]``; entries lie in
    ``[-mu, 2]``. Uses the raw sigmoid prior, not its normalized variant.
    """
    xs = np.asarray(xs, dtype=np.float64)
    p_s = np.asarray(p_s, dtype=np.float64)
    x_norm = np.linalg.norm(xs, axis=1)
    if np.any(x_norm == 0):
        raise DataError("zero-norm feature row")
    a = anchors.anchors
    a_norm = np.linalg.norm(a, axis=1)
    cos = (xs @ a.T) / np.outer(x_norm, a_norm)
    return (1.0 - cos) - mu * p_s[:, None]


def build_structure_costs(
    n_frames: int, n_anchors: int
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Normalized index-distance frame cost and 0/1 anchor-disagreement cost."""
    if n_frames < 1 or n_anchors < 1:
        raise DataError("need at least one frame and one anchor")
    idx = np.arange(n_frames, dtype=np.float64)
    c_v = np.abs(idx[:, None] - idx[None, :]) / max(n_frames - 1, 1)
    c_a = 1.0 - np.eye(n_anchors)
    return c_v, c_a


def _gw_operator(
    t: NDArray[np.float64], c_v: NDArray[np.float64], c_a: NDArray[np.float64]
) -> NDArray[np.float64]:
    # (L x T)[n,j] = sum_{m,k} (C_v[n,m] - C_a[j,k])^2 T[m,k], expanded so the
    # squared loss never materializes the 4-index tensor. The marginal-weighted
    # squares use T's own (possibly relaxed) marginals.
    rows = t.sum(axis=1)
    cols = t.sum(axis=0)
    term_v = (c_v**2) @ rows
    term_a = (c_a**2) @ cols
    return term_v[:, None] + term_a[None, :] - 2.0 * (c_v @ t @ c_a.T)


def gw_value(
    t: NDArray[np.float64], c_v: NDArray[np.float64], c_a: NDArray[np.float64]
) -> float:
    """Quadratic structure objective via the square-loss decomposition."""
    return float(np.sum(_gw_operator(t, c_v, c_a) * t))


def gw_gradient(
    t: NDArray[np.float64], c_v: NDArray[np.float64], c_a: NDArray[np.float64]
) -> NDArray[np.float64]:
    """Gradient of :func:`gw_value`; twice the operator by symmetry of C_v, C_a."""
    return 2.0 * _gw_operator(t, c_v, c_a)


def kl_divergence(m: NDArray[np.float64], ref: NDArray[np.float64]) -> float:
    """Generalized KL for nonnegative vectors, with 0 log 0 = 0."""
    m = np.asarray(m, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if np.any((m > 0) & (ref == 0)):
        return float("inf")
    pos = m > 0
    return float(np.sum(m[pos] * np.log(m[pos] / ref[pos])) - m.sum() + ref.sum())


def fused_objective(prob: OtProblem, t: NDArray[np.float64]) -> float:
    """alpha * GW + (1 - alpha) * <C_k, T> + gamma * KL(T 1 || p_hat)."""
    val = (1.0 - prob.alpha) * float(np.sum(prob.C_k * t))
    if prob.alpha > 0:
        val += prob.alpha * gw_value(t, prob.C_v, prob.C_a)
    if prob.gamma > 0:
        val += prob.gamma * kl_divergence(t.sum(axis=1), prob.p_hat)
    return val


def _logsumexp(x: NDArray[np.float64], axis: int) -> NDArray[np.float64]:
    m = np.max(x, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def _scaling_iterations(
    cost: NDArray[np.float64],
    log_p: NDArray[np.float64],
    log_q: NDArray[np.float64],
    gamma: float,
    epsilon: float,
    f: NDArray[np.float64],
    g: NDArray[np.float64],
    options: SolverOptions,
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64], bool]:
    """Log-domain scaling for one linearized problem.

    Row potentials follow the KL-relaxed update with exponent
    ``gamma / (gamma + epsilon)`` (zero when gamma is 0, which leaves rows
    unconstrained); column potentials are exact, so the anchor marginal of
    the returned plan matches ``q`` to machine precision..
    """
    fi = gamma / (gamma + epsilon) if gamma > 0 else 0.0
    inner_ok = False
    for _ in range(options.max_inner):
        f_prev = f
        g_prev = g
        if fi > 0:
            softmin = _logsumexp((g[None, :] - cost) / epsilon, axis=1)
            f = fi * epsilon * (log_p - softmin)
        else:
            f = np.zeros_like(log_p)
        g = epsilon * (log_q - _logsumexp((f[:, None] - cost) / epsilon, axis=0))
        if np.any(~np.isfinite(f)) or np.any(~np.isfinite(g)):
            raise NumericalError("non-finite scaling potentials")
        delta = max(float(np.max(np.abs(f - f_prev))), float(np.max(np.abs(g - g_prev))))
        if delta < options.potential_tol:
            inner_ok = True
            break
    t = np.exp((f[:, None] + g[None, :] - cost) / epsilon)
    if np.any(~np.isfinite(t)):
        raise NumericalError("non-finite transport plan after scaling")
    return t, f, g, inner_ok


def solve_fugw(prob: OtProblem, options: SolverOptions = SolverOptions()) -> TransportPlan:
    """Minimize the fused objective; see the module docstring for the scheme.

    The returned trace holds the exact fused objective at the initial plan
    and after every outer step; it is non-increasing. ``converged`` is set
    once the plan moves less than ``plan_tol`` in L1 between outer steps and
    the inner scaling loop itself reported convergence.
    """
    p_hat = prob.p_hat
    q = prob.q
    t = np.outer(p_hat, q)  # feasible start: exact marginals, zero KL
    log_p = np.log(p_hat)
    log_q = np.log(q)
    f = np.zeros(prob.F_v)
    g = np.zeros(q.shape[0])
    trace = [fused_objective(prob, t)]
    converged = False
    iterations = 0

    for _outer in range(options.max_outer):
        iterations += 1
        local_cost = (1.0 - prob.alpha) * prob.C_k
        if prob.alpha > 0:
            local_cost = local_cost + prob.alpha * gw_gradient(t, prob.C_v, prob.C_a)
        cand, f, g, inner_ok = _scaling_iterations(
            local_cost, log_p, log_q, prob.gamma, prob.epsilon, f, g, options
        )
        _, t_next = _segment_search(prob, t, cand, options.line_search_points)
        trace.append(fused_objective(prob, t_next))
        moved = float(np.abs(t_next - t).sum())
        t = t_next
        if moved < options.plan_tol and inner_ok:
            converged = True
            break

    if not converged:
        logger.warning("transport solver hit max_outer=%d without converging", options.max_outer)
    return TransportPlan(T=t, objective_trace=trace, iterations=iterations, converged=converged)


def _segment_search(
    prob: OtProblem,
    t: NDArray[np.float64],
    cand: NDArray[np.float64],
    n_points: int,
) -> tuple[float, NDArray[np.float64]]:
    """Exact fused objective minimized over the segment t -> cand.

    The quadratic term restricted to the segment is a polynomial in the step
    size, so only the KL term needs per-point evaluation. Step 0 is always a
    candidate, which makes the outer objective monotone.
    """
    delta = cand - t
    steps = np.linspace(0.0, 1.0, n_points)
    kot_t = float(np.sum(prob.C_k * t))
    kot_d = float(np.sum(prob.C_k * delta))
    values = (1.0 - prob.alpha) * (kot_t + steps * kot_d)
    if prob.alpha > 0:
        op_t = _gw_operator(t, prob.C_v, prob.C_a)
        op_d = _gw_operator(delta, prob.C_v, prob.C_a)
        a0 = float(np.sum(op_t * t))
        a1 = 2.0 * float(np.sum(op_t * delta))
        a2 = float(np.sum(op_d * delta))
        values = values + prob.alpha * (a0 + a1 * steps + a2 * steps**2)
    if prob.gamma > 0:
        rows_t = t.sum(axis=1)
        rows_d = delta.sum(axis=1)
        kl = np.array([kl_divergence(rows_t + s * rows_d, prob.p_hat) for s in steps])
        values = values + prob.gamma * kl
    best = int(len(values) - 1 - np.argmin(values[::-1]))  # prefer larger step on ties
    s = float(steps[best])
    return s, t + s * delta


def init_anchors(
    xs: NDArray[np.float64], n_anchors: int, seed: int, video_id: str = ""
) -> AnchorSet:
    """Farthest-point anchors from the video's own feature rows.

    Rows are compared after L2 normalization, matching the cosine cost. The
    first pick is drawn from a seeded substream; each following anchor is the
    row farthest from the chosen set (ties to the lowest index). Rows may
    repeat only when there are fewer frames than anchors.
    """
    xs = np.asarray(xs, dtype=np.float64)
    norms = np.linalg.norm(xs, axis=1)
    if np.any(norms == 0):
        raise DataError("zero-norm feature row")
    unit = xs / norms[:, None]
    n = xs.shape[0]
    rng = substream(seed, "anchors", video_id)
    first = int(rng.integers(n))
    chosen = [first]
    min_d = np.linalg.norm(unit - unit[first], axis=1)
    while len(chosen) < n_anchors:
        nxt = int(np.argmax(min_d)) if n > len(chosen) else int(rng.integers(n))
        chosen.append(nxt)
        min_d = np.minimum(min_d, np.linalg.norm(unit - unit[nxt], axis=1))
    return AnchorSet(anchors=xs[np.array(chosen, dtype=np.int64)].copy())


def build_problem(
    xs_valid: NDArray[np.float64],
    anchors: AnchorSet,
    p_s_valid: NDArray[np.float64],
    alpha: float,
    gamma: float,
    epsilon: float,
    mu: float,
) -> OtProblem:
    """Assemble an :class:`OtProblem` from valid-frame features and the prior."""
    f_v = xs_valid.shape[0]
    c_k = build_kot_cost(xs_valid, anchors, p_s_valid, mu)
    c_v, c_a = build_structure_costs(f_v, anchors.count)
    total = float(np.sum(p_s_valid))
    if total <= 0:
        raise DataError("saliency prior has no mass on valid frames")
    p_hat = np.asarray(p_s_valid, dtype=np.float64) / total
    q = np.full(anchors.count, 1.0 / anchors.count)
    return OtProblem(
        C_k=c_k, C_v=c_v, C_a=c_a, p_hat=p_hat, q=q,
        alpha=alpha, gamma=gamma, epsilon=epsilon, F_v=f_v,
    )
