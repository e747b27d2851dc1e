"""BCE objective, AdamW with warmup + cosine decay, and the training loop."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from affordmap.decoder import AHDParams, DecoderConfig, decoder_forward, init_params
from affordmap.errors import DimensionError, NumericalError, ParameterError, TrainingError
from affordmap.grid import FeatureMap, Heatmap

BCE_EPS = 1e-7


def _grid(m):
    return m.values if isinstance(m, Heatmap) else np.asarray(m, dtype=np.float64)


def bce_loss(pred, target) -> float:
    """Mean pixel-wise binary cross-entropy, predictions clamped to ``[eps, 1-eps]``."""
    p, t = _grid(pred), _grid(target)
    if p.shape != t.shape:
        raise DimensionError(f"prediction {p.shape} and target {t.shape} differ")
    p = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))))


def bce_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d(mean BCE)/d(pred); zero where the clamp is active."""
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    return np.where(inside, (p - target) / (p * (1.0 - p)), 0.0) / pred.size


def loss_and_grads(params, features: np.ndarray, targets: np.ndarray):
    """Batch-mean BCE and its gradient for every parameter tensor of ``params``."""
    out, cache = params.forward_batch(features)
    if out.shape != targets.shape:
        raise DimensionError(f"decoder output {out.shape} does not match targets {targets.shape}")
    loss = bce_loss(out, targets)
    grads = params.backward_batch(cache, bce_grad(out, targets))
    return loss, grads


def ahd_backward(f: FeatureMap, p: AHDParams, target: Heatmap) -> dict[str, np.ndarray]:
    """Gradient of ``bce_loss(ahd_forward(f, p), target)`` for every AHD tensor."""
    _, grads = loss_and_grads(p, f.values[None], target.values[None])
    return grads


def gradient_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


@dataclass(frozen=True)
class TrainConfig:
    lr_peak: float = 3e-5
    warmup_steps: int = 400
    total_steps: int = 1000
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.1
    eps: float = 1e-8
    batch_size: int = 16
    seed: int = 0
    eval_interval: int = 0  # 0: only at the start and end

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ParameterError("beta1 and beta2 must lie in (0, 1)")
        if self.total_steps < 1 or not (0 <= self.warmup_steps <= self.total_steps):
            raise ParameterError("need 0 <= warmup_steps <= total_steps and total_steps >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.lr_peak < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise ParameterError("lr_peak and weight_decay must be >= 0, eps > 0")


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr_peak``, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= cfg.total_steps:
        raise ParameterError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.lr_peak * step / cfg.warmup_steps
    decay_len = cfg.total_steps - cfg.warmup_steps
    if decay_len == 0:
        return cfg.lr_peak
    progress = (step - cfg.warmup_steps) / decay_len
    return cfg.lr_peak * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params) -> "OptimState":
        t = params.tensors()
        return cls(0, {n: np.zeros_like(a) for n, a in t.items()}, {n: np.zeros_like(a) for n, a in t.items()})


def adamw_step(params, grads, state: OptimState, cfg: TrainConfig, lr: float):
    """One AdamW update; weight decay is applied to the weights directly, not through the moments."""
    step = state.step + 1
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for {name!r} at step {step}")
    b1, b2 = cfg.beta1, cfg.beta2
    bc1, bc2 = 1.0 - b1 ** step, 1.0 - b2 ** step
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.tensors().items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat, v_hat = m / bc1, v / bc2
        new_params[name] = p - lr * cfg.weight_decay * p - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
        new_m[name], new_v[name] = m, v
    return params.with_tensors(new_params), OptimState(step, new_m, new_v)


@dataclass
class LossPoint:
    step: int
    lr: float
    train_bce: float
    eval_bce: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Stacked training arrays: features ``(N, C, h, w)`` and targets ``(N, H, W)``."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.features) == 0 or len(self.features) != len(self.targets):
            raise ParameterError("dataset must be non-empty with one target per feature map")
        if not np.all(np.isfinite(self.features)):
            raise ParameterError("dataset features must be finite")
        if not np.all((self.targets >= 0) & (self.targets <= 1)):
            raise ParameterError("dataset targets must lie in [0, 1]")

    def __len__(self):
        return len(self.features)


def mean_bce(params, data: Dataset, chunk: int = 32) -> float:
    """Mean BCE over a dataset, evaluated in fixed-size chunks."""
    total = 0.0
    for i in range(0, len(data), chunk):
        out = decoder_forward(params, data.features[i:i + chunk])
        total += bce_loss(out, data.targets[i:i + chunk]) * len(out)
    return total / len(data)


def _batches(n, batch_size, rng):
    while True:
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            yield order[i:i + batch_size]


def train(cfg: TrainConfig, decoder_kind, dataset: Dataset, eval_set: Dataset | None = None,
          decoder_config: DecoderConfig | None = None):
    """Train one decoder; returns ``(params, loss_curve)``.

    ``decoder_kind`` is a kind name (then ``decoder_config`` supplies the
    shapes) or an already initialized parameter object to continue from.
    Each epoch visits the data in a fresh permutation drawn from ``cfg.seed``.
    """
    if isinstance(decoder_kind, str):
        base = decoder_config or DecoderConfig()
        decoder_config = DecoderConfig(decoder_kind, dataset.features.shape[1], base.c_m, base.k, base.s)
        params = init_params(cfg.seed, decoder_config)
    else:
        params = decoder_kind
    rng = np.random.default_rng(cfg.seed)
    batches = _batches(len(dataset), cfg.batch_size, rng)
    state = OptimState.zeros_like(params)
    curve = []

    def record(step):
        tr = mean_bce(params, dataset)
        ev = mean_bce(params, eval_set) if eval_set is not None else float("nan")
        if not math.isfinite(tr):
            raise TrainingError(f"non-finite training loss at step {step}")
        curve.append(LossPoint(step, lr_schedule(step, cfg), tr, ev))

    record(0)
    for step in range(cfg.total_steps):
        idx = next(batches)
        try:
            loss, grads = loss_and_grads(params, dataset.features[idx], dataset.targets[idx])
        except NumericalError as exc:
            raise TrainingError(f"non-finite activations at step {step} (batch indices {idx.tolist()}): {exc}") from None
        if not math.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at step {step} (batch indices {idx.tolist()}, "
                f"grad norm {gradient_norm(grads):.3g})")
        params, state = adamw_step(params, grads, state, cfg, lr_schedule(step, cfg))
        done = step + 1
        if done == cfg.total_steps or (cfg.eval_interval and done % cfg.eval_interval == 0):
            record(done)
    return params, curve
