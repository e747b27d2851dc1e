import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from affordmap.decoder import DecoderConfig, init_params, zero_params
from affordmap.errors import DimensionError, ParameterError
from affordmap.evaluation import (
    EvalCase,
    Outcome,
    ablate,
    evaluate_case,
    run_eval,
    time_inference,
)
from affordmap.grid import BinaryMask, FeatureMap, Heatmap
from affordmap.training import Dataset, TrainConfig


def peak_map(shape, x, y, value, floor=0.0):
    v = np.full(shape, floor)
    v[y, x] = value
    return Heatmap(v)


def region(shape, x, y):
    b = np.zeros(shape, bool)
    b[y, x] = True
    return BinaryMask(b)


def test_evaluate_case_examples():
    r = region((5, 5), 2, 2)
    assert evaluate_case(peak_map((5, 5), 2, 2, 0.9), r, 0.5) is Outcome.HIT
    assert evaluate_case(peak_map((5, 5), 2, 2, 0.3), r, 0.5) is Outcome.REFUSED
    assert evaluate_case(peak_map((5, 5), 0, 4, 0.9), r, 0.5) is Outcome.MISS
    # a peak exactly at the threshold acts
    assert evaluate_case(peak_map((5, 5), 2, 2, 0.5), r, 0.5) is Outcome.HIT


def test_evaluate_case_errors():
    with pytest.raises(DimensionError):
        evaluate_case(peak_map((5, 5), 0, 0, 1), region((4, 5), 0, 0), 0)
    with pytest.raises(ParameterError):
        evaluate_case(peak_map((5, 5), 0, 0, 1), region((5, 5), 0, 0), 1.5)


def test_tie_break_exhaustive_on_3x3():
    # every pair of tied maxima: the lower row-major index decides hit or miss
    for a, b in itertools.combinations(range(9), 2):
        v = np.zeros((3, 3))
        v.flat[a] = v.flat[b] = 0.8
        r = np.zeros((3, 3), bool)
        r.flat[a] = True
        assert evaluate_case(Heatmap(v), BinaryMask(r), 0.0) is Outcome.HIT
        r = ~r
        assert evaluate_case(Heatmap(v), BinaryMask(r), 0.0) is Outcome.MISS


@given(arrays(np.float64, (4, 4), elements=st.floats(0, 1)), arrays(bool, (4, 4)),
       st.floats(0, 1), st.floats(0, 1))
def test_refusal_monotone_in_threshold(v, bits, t1, t2):
    lo, hi = sorted((t1, t2))
    m, r = Heatmap(v), BinaryMask(bits)
    if evaluate_case(m, r, lo) is Outcome.REFUSED:
        assert evaluate_case(m, r, hi) is Outcome.REFUSED


@given(arrays(np.float64, (4, 4), elements=st.floats(0.01, 1)), arrays(bool, (4, 4)),
       st.floats(0.01, 0.99), st.floats(0.5, 3))
def test_invariant_under_monotone_rescaling(v, bits, tau, gamma):
    m, r = Heatmap(v), BinaryMask(bits)
    mapped = Heatmap(v ** gamma)
    if np.array_equal(v == v.max(), mapped.values == mapped.values.max()) and \
            (v.max() >= tau) == (mapped.values.max() >= tau ** gamma):
        assert evaluate_case(m, r, tau) is evaluate_case(mapped, r, tau ** gamma)


class _FixedOutputs:
    """Stand-in decoder returning precomputed heatmaps keyed by a feature tag."""

    kind = "ahd"

    def __init__(self, maps):
        self.maps = maps

    def forward_batch(self, f):
        return np.stack([self.maps[int(x[0, 0, 0])] for x in f]), None


def _cases(maps, regions):
    return [EvalCase(FeatureMap(np.full((1, 1, 1), float(i))), BinaryMask(r), f"c{i}")
            for i, r in enumerate(regions)]


def test_run_eval_accuracy_examples():
    shape = (4, 4)
    inside = [peak_map(shape, 1, 1, 0.9).values for _ in range(4)]
    r_in = [region(shape, 1, 1).bits] * 4
    r_out = [region(shape, 3, 3).bits] * 4
    assert run_eval(_FixedOutputs(inside), _cases(inside, r_in), 0.0).accuracy == 1.0
    assert run_eval(_FixedOutputs(inside), _cases(inside, r_out), 0.0).accuracy == 0.0
    mixed = r_in[:3] + r_out[:1]
    report = run_eval(_FixedOutputs(inside), _cases(inside, mixed), 0.0)
    assert (report.hits, report.misses, report.accuracy) == (3, 1, 0.75)


@given(st.lists(st.tuples(st.integers(0, 15), st.floats(0, 1), st.integers(0, 15)), min_size=1, max_size=12),
       st.floats(0, 1))
def test_report_conservation(entries, tau):
    shape = (4, 4)
    maps = [peak_map(shape, p % 4, p // 4, v).values for p, v, _ in entries]
    regions = [region(shape, q % 4, q // 4).bits for _, _, q in entries]
    rep = run_eval(_FixedOutputs(maps), _cases(maps, regions), tau)
    assert rep.hits + rep.misses + rep.refusals == rep.n_cases == len(entries)
    if rep.hits + rep.misses:
        assert rep.accuracy_non_refused == rep.hits / (rep.hits + rep.misses)
    else:
        assert rep.accuracy_non_refused is None


def test_run_eval_rejects_empty_and_wrong_kind():
    p = zero_params(DecoderConfig("bilinear", 1, 1, 1, 2))
    with pytest.raises(ParameterError):
        run_eval(p, [], 0.0)
    case = EvalCase(FeatureMap(np.zeros((1, 2, 2))), region((4, 4), 0, 0), "x")
    with pytest.raises(ParameterError):
        run_eval(p, [case], 0.0, decoder_kind="ahd")
    rep = run_eval(p, [case], 0.0, decoder_kind="bilinear")
    # a flat 0.5 map peaks at the origin
    assert rep.records[0].outcome == "hit"
    d = rep.to_dict(include_timing=False)
    assert "latency_mean_us" not in d and "latency_us" not in d["records"][0]


def _tiny_suite():
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((6, 3, 4, 4))
    targets = rng.random((6, 8, 8))
    regions = rng.random((3, 8, 8)) < 0.3
    cases = [EvalCase(FeatureMap(feats[i]), BinaryMask(regions[i - 3]), f"c{i}", Heatmap(targets[i]))
             for i in range(3, 6)]
    return Dataset(feats[:3], targets[:3]), cases


def test_ablate_harness_contract():
    data, cases = _tiny_suite()
    cfg = TrainConfig(lr_peak=1e-2, warmup_steps=1, total_steps=4, batch_size=2)
    dcfg = DecoderConfig("ahd", 3, 2, 3, 2)
    res = ablate(["ahd", "bilinear"], cfg, data, cases, seeds=(0, 1), decoder_config=dcfg)
    assert len(res.rows) == 4 and res.kinds() == ["ahd", "bilinear"]
    assert len({r.train_hash for r in res.rows}) == 1 and len({r.eval_hash for r in res.rows}) == 1
    again = ablate(["ahd", "ahd"], cfg, data, cases, seeds=(0,), decoder_config=dcfg)
    a, b = again.rows
    assert (a.accuracy, a.eval_bce, a.final_train_bce) == (b.accuracy, b.eval_bce, b.final_train_bce)
    summary = res.summary()
    assert set(summary) == {"ahd", "bilinear"} and summary["ahd"]["n_seeds"] == 2
    with pytest.raises(ParameterError):
        ablate(["ahd"], cfg, data, cases)


def test_time_inference_contract():
    p = init_params(0, DecoderConfig("ahd", 4, 3, 3, 2))
    stats = time_inference(p, (4, 4), 2, repeats=10)
    assert len(stats.samples_us) == 10
    assert stats.mean_us <= stats.p95_us or np.isclose(stats.mean_us, stats.p95_us)
    assert min(stats.samples_us) <= stats.median_us <= max(stats.samples_us)
    with pytest.raises(ParameterError):
        time_inference(p, (4, 4), 2, repeats=5)
    with pytest.raises(ParameterError):
        time_inference(p, (4, 4), 3)
