"""Acceptance criteria, each run at its stated tolerance.

Every test prints one ``CRITERION n ... PASS|FAIL`` line; the lines are also
collected into a summary section at the end of the pytest run.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from affordmap.cli import cli_main
from affordmap.decoder import DecoderConfig, KernelField, convex_upsample, init_params, softmax_normalize
from affordmap.evaluation import Outcome, ablate, evaluate_case, run_eval, time_inference
from affordmap.experiment import RunConfig, build_data, decoder_config_for
from affordmap.grid import BinaryMask, FeatureMap, Heatmap, argmax_peak
from affordmap.io import decode_rle, encode_rle, read_heatmap, write_heatmap
from affordmap.synthesis import (
    BoxSupervision,
    MaskSupervision,
    PointSupervision,
    box_heatmap,
    euclidean_distance_transform,
    mask_heatmap,
    point_heatmap,
)
from affordmap.training import bce_loss, decoder_forward, loss_and_grads
from conftest import ACCEPTANCE_LINES
from oracles import (
    box_value,
    brute_force_edt,
    clamped_neighborhood,
    direct_convex_upsample,
    finite_difference_grads,
    mask_value,
    point_value,
    relative_error,
)


def report(n, title, ok, detail):
    line = f"CRITERION {n} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# ------------------------------------------------------------------ 1


def test_criterion_1_synthesis_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst, sampled = 0.0, 0
    for _ in range(30):
        w, h = (int(v) for v in rng.integers(8, 40, size=2))
        pts = [tuple(rng.uniform(0, [w, h])) for _ in range(rng.integers(1, 4))]
        sigma = rng.uniform(0.5, 6)
        box = BoxSupervision(tuple(rng.uniform(0, [w, h])), rng.uniform(1, w), rng.uniform(1, h),
                             rng.uniform(0.1, 0.4))
        bits = rng.random((h, w)) < rng.uniform(0.01, 0.2)
        bits[rng.integers(h), rng.integers(w)] = True
        maps = (point_heatmap(PointSupervision(pts, sigma), w, h).values,
                box_heatmap(box, w, h).values,
                mask_heatmap(MaskSupervision(BinaryMask(bits), sigma), w, h).values)
        for _ in range(12):
            x, y = int(rng.integers(w)), int(rng.integers(h))
            refs = (point_value(x, y, pts, sigma),
                    box_value(x, y, *box.center, box.sigma_x, box.sigma_y),
                    mask_value(x, y, bits, sigma))
            for m, ref in zip(maps, refs):
                worst = max(worst, abs(m[y, x] - ref))
                sampled += 1
    edt_worst = 0.0
    for _ in range(100):
        bits = rng.random((32, 32)) < rng.uniform(0.005, 0.3)
        bits[rng.integers(32), rng.integers(32)] = True
        d = euclidean_distance_transform(BinaryMask(bits)).distances
        edt_worst = max(edt_worst, float(np.max(np.abs(d - brute_force_edt(bits)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and sampled >= 1000 and edt_worst < 1e-6 and elapsed < 30
    assert report(1, "synthesis exactness", ok,
                  f"{sampled} pixels, max err {worst:.2e}; EDT max err {edt_worst:.2e} on 100 masks; "
                  f"{elapsed:.1f}s")


# ------------------------------------------------------------------ 2


def test_criterion_2_convex_upsampling():
    rng = np.random.default_rng(202)
    loop_err = 0.0
    for k, s, h, w in [(3, 2, 4, 5), (5, 3, 3, 4), (5, 4, 4, 4), (1, 2, 3, 3), (3, 7, 2, 3)]:
        m = rng.random((h, w))
        weights = softmax_normalize(3 * rng.standard_normal((k * k, h * s, w * s)), axis=0)
        out = convex_upsample(Heatmap(m), KernelField(weights, k), s).values
        loop_err = max(loop_err, float(np.max(np.abs(out - direct_convex_upsample(m, weights, k, s)))))

    m = rng.random((3, 4))
    k, s = 5, 3
    one_hot = np.zeros((k * k, 9, 12))
    one_hot[(k * k) // 2] = 1.0
    nn_ok = np.array_equal(convex_upsample(Heatmap(m), KernelField(one_hot, k), s).values,
                           np.kron(m, np.ones((s, s))))
    uniform = np.full((k * k, 9, 12), 1 / (k * k))
    box = convex_upsample(Heatmap(m), KernelField(uniform, k), s).values
    box_ref = np.array([[np.mean(clamped_neighborhood(m, i, j, k, s)) for j in range(12)] for i in range(9)])
    box_err = float(np.max(np.abs(box - box_ref)))

    hull_ok = True
    for _ in range(100):
        k = int(rng.choice([1, 3, 5]))
        s = int(rng.integers(1, 5))
        h, w = (int(v) for v in rng.integers(1, 5, size=2))
        m = rng.random((h, w))
        kf = KernelField(softmax_normalize(5 * rng.standard_normal((k * k, h * s, w * s)), axis=0), k)
        out = convex_upsample(Heatmap(m), kf, s).values
        for i in range(h * s):
            for j in range(w * s):
                nb = clamped_neighborhood(m, i, j, k, s)
                hull_ok &= min(nb) - 1e-12 <= out[i, j] <= max(nb) + 1e-12
    ok = loop_err < 1e-12 and nn_ok and box_err < 1e-12 and hull_ok
    assert report(2, "convex upsampling", ok,
                  f"loop oracle err {loop_err:.1e}; one-hot=NN {nn_ok}; uniform=box-mean err {box_err:.1e}; "
                  f"hull bound on 100 inputs {hull_ok}")


# ------------------------------------------------------------------ 3


def test_criterion_3_gradient_fidelity():
    t0 = time.perf_counter()
    worst = {}
    for seed in range(3):
        rng = np.random.default_rng(300 + seed)
        p = init_params(seed, DecoderConfig("ahd", 3, 2, 3, 2))
        p = p.with_tensors({n: a + 0.3 * rng.standard_normal(a.shape) for n, a in p.tensors().items()})
        f = rng.standard_normal((1, 3, 4, 4))
        t = rng.random((1, 8, 8))
        _, grads = loss_and_grads(p, f, t)
        fd = finite_difference_grads(lambda q: bce_loss(decoder_forward(q, f), t), p)
        for name in grads:
            worst[name] = max(worst.get(name, 0.0), relative_error(grads[name], fd[name]))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and len(worst) == 6 and elapsed < 120
    detail = ", ".join(f"{n} {e:.1e}" for n, e in worst.items())
    assert report(3, "gradient fidelity", ok, f"3 configs, max rel err per tensor: {detail}; {elapsed:.1f}s")


# ------------------------------------------------------------------ 4


@pytest.fixture(scope="module")
def desk_ablation():
    run = RunConfig()
    t0 = time.perf_counter()
    data = build_data(run)
    result = ablate(["ahd", "bilinear", "deconv", "pixelshuffle"], run.train, data.train_set, data.cases,
                    seeds=(0, 1, 2, 3, 4), decoder_config=decoder_config_for(run, "ahd"))
    return result, time.perf_counter() - t0


def test_criterion_4_desk_ablation(desk_ablation):
    result, elapsed = desk_ablation
    summary = result.summary()
    ahd = summary.pop("ahd")
    bce_ok = all(ahd["eval_bce_mean"] < s["eval_bce_mean"] for s in summary.values())
    acc_ok = all(ahd["accuracy_mean"] >= s["accuracy_mean"] for s in summary.values())
    fair = len({(r.train_hash, r.eval_hash) for r in result.rows}) == 1
    table = "; ".join(f"{k} bce {s['eval_bce_mean']:.5f} acc {s['accuracy_mean']:.3f}"
                      for k, s in [("ahd", ahd), *summary.items()])
    report("4a", "desk ablation, AHD lowest held-out BCE", bce_ok and fair, table)
    report("4b", "desk ablation, AHD accuracy >= every baseline", acc_ok, table)
    ok = report(4, "desk ablation", bce_ok and acc_ok and fair and elapsed < 3600,
                f"{len(result.rows)} runs, identical data {fair}, {elapsed:.0f}s")
    assert ok


# ------------------------------------------------------------------ 5


def test_criterion_5_evaluation_semantics():
    rng = np.random.default_rng(505)
    shape = (3, 3)
    conservation = monotone = True
    for _ in range(300):
        v = np.round(rng.random(shape), 1)
        r = BinaryMask(rng.random(shape) < 0.4)
        m = Heatmap(v)
        outcomes = [evaluate_case(m, r, tau) for tau in np.linspace(0, 1, 21)]
        seen_refusal = False
        for o in outcomes:
            seen_refusal |= o is Outcome.REFUSED
            monotone &= not (seen_refusal and o is not Outcome.REFUSED)
        conservation &= len(outcomes) == sum(outcomes.count(o) for o in Outcome)

    class Fixed:
        kind = "ahd"

        def forward_batch(self, f):
            return np.stack([maps[int(x[0, 0, 0])] for x in f]), None

    maps = [np.round(rng.random(shape), 1) for _ in range(50)]
    from affordmap.evaluation import EvalCase
    cases = [EvalCase(FeatureMap(np.full((1, 1, 1), float(i))), BinaryMask(rng.random(shape) < 0.3), str(i))
             for i in range(50)]
    for tau in (0.0, 0.3, 0.5, 0.9, 1.0):
        rep = run_eval(Fixed(), cases, tau)
        conservation &= rep.hits + rep.misses + rep.refusals == rep.n_cases

    # exhaustive tie-break: every pair of tied maxima on a 3x3 grid
    tie_ok = True
    for a in range(9):
        for b in range(a + 1, 9):
            v = np.zeros(shape)
            v.flat[a] = v.flat[b] = 0.7
            (x, y), _ = argmax_peak(Heatmap(v))
            tie_ok &= y * 3 + x == a
    ok = conservation and monotone and tie_ok
    assert report(5, "evaluation semantics", ok,
                  f"conservation {conservation}, refusal monotone {monotone}, tie-break {tie_ok}")


# ------------------------------------------------------------------ 6


def test_criterion_6_performance():
    p = init_params(0, DecoderConfig("ahd", 256, 36, 5, 14))
    stats = time_inference(p, (16, 16), 14, repeats=30, warmup=5)
    ms = stats.median_us / 1e3
    within = ms < 40.0
    # the bound applies to optimized runs; instrumented runs (coverage, profilers) may opt out
    enforce = os.environ.get("AFFORDMAP_TIMING_ADVISORY", "") != "1"
    report(6, "performance sanity", within,
           f"16x16->224x224 k=5 decoder median {ms:.2f} ms, p95 {stats.p95_us / 1e3:.2f} ms, "
           f"{p.num_parameters():,} params, bound {'enforced' if enforce else 'advisory'}")
    assert within or not enforce


# ------------------------------------------------------------------ 7


def test_criterion_7_determinism(tmp_path):
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli_main(["train", "--seed", "11", "--out", str(out)]) == 0
        assert cli_main(["eval", "--ckpt", str(out / "model.ahdp"), "--cases", str(out / "cases.npz"),
                         "--threshold", "0.3", "--report", str(out / "report.json")]) == 0
    same = {}
    for name in ("model.ahdp", "loss.csv"):
        same[name] = (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def strip_timing(path):
        d = json.loads(path.read_text())
        for key in [k for k in d if k.startswith("latency")]:
            del d[key]
        for r in d["records"]:
            del r["latency_us"]
        return json.dumps(d, sort_keys=True)

    same["report"] = strip_timing(tmp_path / "a" / "report.json") == strip_timing(tmp_path / "b" / "report.json")
    ok = all(same.values())
    assert report(7, "determinism", ok, ", ".join(f"{k} identical {v}" for k, v in same.items()))


# ------------------------------------------------------------------ 8


def test_criterion_8_format_round_trips(tmp_path):
    rng = np.random.default_rng(808)
    afhm_ok = rle_ok = True
    for i in range(100):
        h, w = (int(v) for v in rng.integers(1, 48, size=2))
        v = rng.random((h, w)).astype(np.float32)
        v.flat[rng.integers(v.size)] = rng.choice([0.0, 1.0])
        path = tmp_path / f"{i}.afhm"
        write_heatmap(path, Heatmap(v.astype(np.float64)))
        afhm_ok &= read_heatmap(path).values.astype(np.float32).tobytes() == v.tobytes()
        bits = rng.random((h, w)) < rng.uniform(0, 1)
        rle_ok &= np.array_equal(decode_rle(encode_rle(bits), w, h), bits)
    ok = afhm_ok and rle_ok
    assert report(8, "format round trips", ok, f"AFHM 100/100 {afhm_ok}, RLE 100/100 {rle_ok}")


def test_acceptance_constants_are_sane():
    # guards against an accidentally shrunken suite
    run = RunConfig()
    assert (run.n_train, run.n_eval, run.scene.feature_size, run.scene.size) == (512, 128, 16, 64)
    assert math.isclose(run.train.lr_peak, 3e-2)
