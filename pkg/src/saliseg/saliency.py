"""Trainable frame-saliency head.

The head scores each frame against a pooled global context vector:
``score_n = (x_n W1^T) . (g W2^T) / sqrt(D)`` where ``g`` is an attention
pooling of the valid frames driven by a learnable query vector. Training
minimizes a masked listwise softmax loss in which all valid frames compete
for probability mass and annotated highlight frames are pushed up.

Gradients are analytic (no autodiff framework); ``saliency_grad`` is checked
against central finite differences in the test suite.

Checkpoint format: one newline-terminated JSON header line
``{"D": int, "tau": float}`` followed by little-endian f32 payloads for
``w_pool`` (D), ``W1`` (D*D row-major) and ``W2`` (D*D row-major).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .data import PipelineConfig
from .errors import DataError
from .rng import substream

logger = logging.getLogger(__name__)


@dataclass
class SaliencyHead:
    """Learnable parameters of the saliency head."""

    w_pool: NDArray[np.float64]
    W1: NDArray[np.float64]
    W2: NDArray[np.float64]
    tau: float

    def __post_init__(self) -> None:
        self.w_pool = np.asarray(self.w_pool, dtype=np.float64)
        self.W1 = np.asarray(self.W1, dtype=np.float64)
        self.W2 = np.asarray(self.W2, dtype=np.float64)
        d = self.w_pool.shape[0]
        if self.W1.shape != (d, d) or self.W2.shape != (d, d):
            raise DataError("W1 and W2 must be square D x D matrices")
        if self.tau <= 0:
            raise DataError("tau must be > 0")
        for p in (self.w_pool, self.W1, self.W2):
            if not np.all(np.isfinite(p)):
                raise DataError("non-finite head parameters")

    @property
    def dim(self) -> int:
        return self.w_pool.shape[0]

    def copy(self) -> "SaliencyHead":
        return SaliencyHead(self.w_pool.copy(), self.W1.copy(), self.W2.copy(), self.tau)


@dataclass(frozen=True)
class SaliencyOutput:
    """Forward results: per-frame scores, pooled context, pooling weights."""

    scores: NDArray[np.float64]
    pooled: NDArray[np.float64]
    pool_weights: NDArray[np.float64]


def init_head(dim: int, tau: float, seed: int) -> SaliencyHead:
    """Near-identity init: W = I + 0.01 N(0,1), zero pooling query.

    Zero query keeps the initial pooling uniform over valid frames.
    """
    rng = substream(seed, "head-init")
    w1 = np.eye(dim) + 0.01 * rng.standard_normal((dim, dim))
    w2 = np.eye(dim) + 0.01 * rng.standard_normal((dim, dim))
    return SaliencyHead(w_pool=np.zeros(dim), W1=w1, W2=w2, tau=tau)


def attention_pool(
    xp: NDArray[np.float64], mask: NDArray[np.float64], w_pool: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Pool valid frames with a masked softmax over ``(X w_pool) / sqrt(D)``.

    Returns (pooled vector, weights); weights are zero on masked frames and
    sum to one over valid ones.
    """
    xp = np.asarray(xp, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    w_pool = np.asarray(w_pool, dtype=np.float64)
    if not np.any(mask > 0):
        raise DataError("all frames masked")
    logits = (xp @ w_pool) / np.sqrt(xp.shape[1])
    weights = masked_softmax(logits, mask, 1.0)
    pooled = weights @ xp
    return pooled, weights


def masked_softmax(
    scores: NDArray[np.float64], mask: NDArray[np.float64], tau: float
) -> NDArray[np.float64]:
    """Temperature softmax over valid frames only, max-shifted for stability."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    valid = mask > 0
    if not np.any(valid):
        raise DataError("all frames masked")
    z = np.where(valid, scores / tau, -np.inf)
    zmax = np.max(z[valid])
    expz = np.exp(z - zmax)
    return expz / expz.sum()


def saliency_forward(
    head: SaliencyHead, xp: NDArray[np.float64], mask: NDArray[np.float64]
) -> SaliencyOutput:
    """Score every frame (masked ones included; masking happens downstream)."""
    xp = np.asarray(xp, dtype=np.float64)
    if xp.ndim != 2 or xp.shape[1] != head.dim:
        raise DataError(f"features must be F x {head.dim}")
    pooled, weights = attention_pool(xp, mask, head.w_pool)
    proj = xp @ head.W1.T
    ctx = pooled @ head.W2.T
    scores = (proj @ ctx) / np.sqrt(head.dim)
    return SaliencyOutput(scores=scores, pooled=pooled, pool_weights=weights)


def saliency_loss(
    scores: NDArray[np.float64],
    labels: NDArray[np.float64],
    mask: NDArray[np.float64],
    tau: float,
) -> float:
    """Masked listwise softmax loss: mean negative log-probability of highlights."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    hm = labels * mask
    n_high = hm.sum()
    if n_high < 1:
        raise DataError("empty highlight set")
    valid = mask > 0
    z = scores / tau
    zmax = np.max(z[valid])
    zsafe = np.where(valid, z - zmax, -np.inf)
    log_z = zmax + np.log(np.sum(np.exp(zsafe)))
    log_p = np.where(hm > 0, z - log_z, 0.0)
    return float(-(hm @ log_p) / n_high)


def saliency_grad(
    head: SaliencyHead,
    xp: NDArray[np.float64],
    mask: NDArray[np.float64],
    labels: NDArray[np.float64],
) -> dict[str, NDArray[np.float64]]:
    """Analytic gradients of the saliency loss w.r.t. w_pool, W1 and W2.

    Includes the pooling path: the pooled context depends on w_pool, and the
    scores depend on the pooled context through W2.
    """
    xp = np.asarray(xp, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    out = saliency_forward(head, xp, mask)
    hm = labels * mask
    n_high = hm.sum()
    if n_high < 1:
        raise DataError("empty highlight set")
    d = head.dim
    sqrt_d = np.sqrt(d)

    p = masked_softmax(out.scores, mask, head.tau)
    g_scores = (p - hm / n_high) / head.tau  # zero on masked frames

    ctx = out.pooled @ head.W2.T
    gx = g_scores @ xp  # sum_n g_n x_n
    d_w1 = np.outer(ctx, gx) / sqrt_d
    d_w2 = np.outer(head.W1 @ gx, out.pooled) / sqrt_d

    # Pooling path: scores depend on pooled through W2.
    d_pooled = (head.W2.T @ (head.W1 @ gx)) / sqrt_d
    d_weights = xp @ d_pooled
    a = out.pool_weights
    d_logits = a * (d_weights - a @ d_weights)
    d_w_pool = (xp.T @ d_logits) / sqrt_d
    return {"w_pool": d_w_pool, "W1": d_w1, "W2": d_w2}


def saliency_prior(
    scores: NDArray[np.float64], mask: NDArray[np.float64]
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Sigmoid saliency prior and its L1-normalized variant.

    Returns ``(p_s, p_hat)``: ``p_s`` is the per-frame sigmoid, zeroed on
    masked frames; ``p_hat`` sums to one over valid frames and serves as the
    reference measure of the transport solver's KL term.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if not np.any(mask > 0):
        raise DataError("all frames masked")
    if not np.all(np.isfinite(scores)):
        raise DataError("non-finite saliency scores")
    with np.errstate(over="ignore"):
        p_s = np.where(scores >= 0, 1.0 / (1.0 + np.exp(-scores)), np.exp(scores) / (1.0 + np.exp(scores)))
    p_s = p_s * mask
    p_hat = p_s / p_s.sum()
    return p_s, p_hat


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    """Adam state: per-parameter first/second moments and hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    step: int = 0
    m: dict[str, NDArray[np.float64]] = field(default_factory=dict)
    v: dict[str, NDArray[np.float64]] = field(default_factory=dict)

    def ensure_shapes(self, head: SaliencyHead) -> None:
        params = {"w_pool": head.w_pool, "W1": head.W1, "W2": head.W2}
        for name, value in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(value)
                self.v[name] = np.zeros_like(value)
            elif self.m[name].shape != value.shape:
                raise DataError(f"train state shape mismatch for {name}")


@dataclass(frozen=True)
class SaliencyExample:
    """One training item: refined features plus labels and mask."""

    video_id: str
    features: NDArray[np.float64]
    mask: NDArray[np.float64]
    labels: NDArray[np.float64]


@dataclass
class TrainResult:
    head: SaliencyHead
    state: TrainState
    loss_curve: list[float]


def train_saliency(
    examples: list[SaliencyExample],
    cfg: PipelineConfig,
    state: TrainState | None = None,
    head: SaliencyHead | None = None,
    epochs: int = 20,
    seed: int | None = None,
) -> TrainResult:
    """Adam over per-video losses ``lambda * L``; deterministic given seed.

    Videos without any valid highlight frame are skipped with a warning.
    If the loss turns non-finite, training aborts and the last finite
    checkpoint is returned.
    """
    if seed is None:
        seed = cfg.seed
    usable = []
    for ex in examples:
        if float(np.sum(ex.labels * ex.mask)) >= 1:
            usable.append(ex)
        else:
            logger.warning("%s: no highlight frames, skipped for training", ex.video_id)
    if head is None:
        if not usable:
            raise DataError("no trainable videos")
        head = init_head(usable[0].features.shape[1], cfg.tau, seed)
    head = head.copy()
    if state is None:
        state = TrainState()
    state.ensure_shapes(head)
    rng = substream(seed, "train-saliency")
    loss_curve: list[float] = []
    last_good = head.copy()

    for _epoch in range(epochs):
        order = rng.permutation(len(usable))
        epoch_loss = 0.0
        for idx in order:
            ex = usable[idx]
            loss = saliency_loss(
                saliency_forward(head, ex.features, ex.mask).scores, ex.labels, ex.mask, head.tau
            )
            if not np.isfinite(loss):
                logger.error("training diverged at step %d, restoring last checkpoint", state.step)
                return TrainResult(head=last_good, state=state, loss_curve=loss_curve)
            grads = saliency_grad(head, ex.features, ex.mask, ex.labels)
            state.step += 1
            t = state.step
            params = {"w_pool": head.w_pool, "W1": head.W1, "W2": head.W2}
            for name, g in grads.items():
                g = cfg.lambda_ * g
                state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
                state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
                m_hat = state.m[name] / (1 - state.beta1**t)
                v_hat = state.v[name] / (1 - state.beta2**t)
                params[name] -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.adam_epsilon)
            epoch_loss += cfg.lambda_ * loss
            last_good = head.copy()
        if usable:
            loss_curve.append(epoch_loss / len(usable))
    return TrainResult(head=head, state=state, loss_curve=loss_curve)


# ---------------------------------------------------------------------------
# Checkpoint IO
# ---------------------------------------------------------------------------

def save_head(head: SaliencyHead, path: str | Path) -> None:
    header = json.dumps({"D": head.dim, "tau": head.tau}, sort_keys=True) + "\n"
    payload = bytearray(header.encode("utf-8"))
    payload += head.w_pool.astype("<f4").tobytes()
    payload += head.W1.astype("<f4").tobytes(order="C")
    payload += head.W2.astype("<f4").tobytes(order="C")
    Path(path).write_bytes(bytes(payload))


def load_head(path: str | Path) -> SaliencyHead:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
        dim = int(header["D"])
        tau = float(header["tau"])
    except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: bad checkpoint header: {exc}") from exc
    body = raw[nl + 1 :]
    expected = (dim + 2 * dim * dim) * 4
    if len(body) != expected:
        raise DataError(f"{path}: truncated checkpoint body")
    flat = np.frombuffer(body, dtype="<f4").astype(np.float64)
    w_pool = flat[:dim]
    w1 = flat[dim : dim + dim * dim].reshape(dim, dim)
    w2 = flat[dim + dim * dim :].reshape(dim, dim)
    return SaliencyHead(w_pool=w_pool, W1=w1, W2=w2, tau=tau)
