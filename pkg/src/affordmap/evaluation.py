"""Peak-in-region evaluation with confidence refusal, ablations and timing."""

from __future__ import annotations

import enum
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from affordmap.decoder import DecoderConfig, decoder_forward
from affordmap.errors import DimensionError, ParameterError
from affordmap.grid import BinaryMask, FeatureMap, Heatmap, argmax_peak
from affordmap.scenes import data_hash
from affordmap.training import Dataset, TrainConfig, mean_bce, train


class Outcome(str, enum.Enum):
    HIT = "hit"
    MISS = "miss"
    REFUSED = "refused"


@dataclass(frozen=True, eq=False)
class EvalCase:
    features: FeatureMap
    success_region: BinaryMask
    instruction_id: str
    target: Heatmap | None = None


def evaluate_case(m: Heatmap, region: BinaryMask, threshold: float) -> Outcome:
    """Refuse when the peak is below ``threshold``; a peak exactly at the threshold acts."""
    if m.shape != region.shape:
        raise DimensionError(f"heatmap {m.width}x{m.height} vs region {region.width}x{region.height}")
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must lie in [0, 1], got {threshold}")
    (x, y), value = argmax_peak(m)
    if value < threshold:
        return Outcome.REFUSED
    return Outcome.HIT if region.bits[y, x] else Outcome.MISS


@dataclass
class CaseRecord:
    instruction_id: str
    x: int
    y: int
    value: float
    outcome: str
    latency_us: float


TIMING_FIELDS = ("latency_us", "latency_mean_us", "latency_median_us", "latency_p95_us")


@dataclass
class EvalReport:
    n_cases: int
    hits: int
    misses: int
    refusals: int
    accuracy: float
    accuracy_non_refused: float | None
    threshold: float
    records: list[CaseRecord] = field(default_factory=list)
    latency_mean_us: float = 0.0
    latency_median_us: float = 0.0
    latency_p95_us: float = 0.0

    def to_dict(self, include_timing: bool = True) -> dict:
        d = asdict(self)
        if not include_timing:
            for key in TIMING_FIELDS:
                d.pop(key, None)
            for r in d["records"]:
                r.pop("latency_us", None)
        return d


def run_eval(params, cases, threshold: float, decoder_kind: str | None = None) -> EvalReport:
    """Forward every case in order, timing the decoder call alone."""
    if decoder_kind is not None and decoder_kind != params.kind:
        raise ParameterError(f"params are for {params.kind!r}, not {decoder_kind!r}")
    if not cases:
        raise ParameterError("no evaluation cases")
    records = []
    for case in cases:
        batch = case.features.values[None]
        t0 = time.perf_counter_ns()
        out = decoder_forward(params, batch)[0]
        latency = (time.perf_counter_ns() - t0) / 1e3
        m = Heatmap(np.clip(out, 0.0, 1.0))
        outcome = evaluate_case(m, case.success_region, threshold)
        (x, y), value = argmax_peak(m)
        records.append(CaseRecord(case.instruction_id, x, y, value, outcome.value, latency))
    counts = {o: sum(r.outcome == o.value for r in records) for o in Outcome}
    hits, misses, refusals = counts[Outcome.HIT], counts[Outcome.MISS], counts[Outcome.REFUSED]
    lat = np.array([r.latency_us for r in records])
    return EvalReport(
        n_cases=len(records), hits=hits, misses=misses, refusals=refusals,
        accuracy=hits / len(records),
        accuracy_non_refused=hits / (hits + misses) if hits + misses else None,
        threshold=threshold, records=records,
        latency_mean_us=float(lat.mean()), latency_median_us=float(np.median(lat)),
        latency_p95_us=float(np.percentile(lat, 95)),
    )


def cases_dataset(cases) -> Dataset:
    if any(c.target is None for c in cases):
        raise ParameterError("every case needs a target heatmap to compute held-out BCE")
    return Dataset(np.stack([c.features.values for c in cases]), np.stack([c.target.values for c in cases]))


@dataclass
class AblationRow:
    kind: str
    seed: int
    accuracy: float
    eval_bce: float
    median_latency_us: float
    train_hash: str
    eval_hash: str
    final_train_bce: float


@dataclass
class AblationResult:
    rows: list[AblationRow]

    def kinds(self) -> list[str]:
        return list(dict.fromkeys(r.kind for r in self.rows))

    def summary(self) -> dict[str, dict[str, float]]:
        out = {}
        for kind in self.kinds():
            acc = np.array([r.accuracy for r in self.rows if r.kind == kind])
            bce = np.array([r.eval_bce for r in self.rows if r.kind == kind])
            ddof = 1 if len(acc) > 1 else 0
            out[kind] = {"accuracy_mean": float(acc.mean()), "accuracy_std": float(acc.std(ddof=ddof)),
                         "eval_bce_mean": float(bce.mean()), "eval_bce_std": float(bce.std(ddof=ddof)),
                         "n_seeds": int(len(acc))}
        return out


def ablate(decoder_kinds, train_cfg: TrainConfig, dataset: Dataset, cases, seeds=(0, 1, 2, 3, 4),
           decoder_config: DecoderConfig | None = None, threshold: float = 0.0) -> AblationResult:
    """Train and evaluate every kind under every seed on the same data and step budget.

    The seed drives parameter init and batch order; data is shared.
    """
    kinds = list(decoder_kinds)
    if len(kinds) < 2:
        raise ParameterError("an ablation needs at least two decoder kinds")
    held_out = cases_dataset(cases)
    regions = np.stack([c.success_region.bits for c in cases])
    train_hash = data_hash(dataset.features, dataset.targets)
    eval_hash = data_hash(held_out.features, held_out.targets, regions)
    rows = []
    for kind in kinds:
        for seed in seeds:
            cfg = TrainConfig(**{**asdict(train_cfg), "seed": int(seed)})
            params, curve = train(cfg, kind, dataset, None, decoder_config)
            report = run_eval(params, cases, threshold)
            rows.append(AblationRow(kind, int(seed), report.accuracy, mean_bce(params, held_out),
                                    report.latency_median_us, train_hash, eval_hash, curve[-1].train_bce))
    return AblationResult(rows)


@dataclass
class LatencyStats:
    samples_us: list[float]
    mean_us: float
    median_us: float
    p95_us: float


def time_inference(params, feature_dims=None, s=None, repeats: int = 20, warmup: int = 3,
                   seed: int = 0, dtype=np.float32) -> LatencyStats:
    """Single-threaded wall-clock latency of one decoder forward pass.

    ``feature_dims`` is ``(h, w)`` and defaults to 16x16. ``warmup`` passes run
    first and are discarded.
    """
    if repeats < 10 or warmup < 3:
        raise ParameterError("need repeats >= 10 and warmup >= 3")
    h, w = feature_dims or (16, 16)
    if s is not None and s != params.s:
        raise ParameterError(f"params upsample by {params.s}, not {s}")
    rng = np.random.default_rng(seed)
    f = rng.standard_normal((1, params.channels, h, w)).astype(dtype)
    p = params.astype(dtype)
    samples = []
    with threadpool_limits(limits=1):
        for i in range(warmup + repeats):
            t0 = time.perf_counter_ns()
            decoder_forward(p, f)
            dt = (time.perf_counter_ns() - t0) / 1e3
            if i >= warmup:
                samples.append(dt)
    arr = np.array(samples)
    return LatencyStats(samples, float(arr.mean()), float(np.median(arr)), float(np.percentile(arr, 95)))
