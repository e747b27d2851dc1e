"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data or validation error. All
diagnostics go to stderr; stdout carries only results.
"""

from __future__ import annotations

import argparse
import re
import sys
import zipfile
from pathlib import Path

import numpy as np

from affordmap.decoder import DECODER_KINDS
from affordmap.errors import AffordmapError, FormatError
from affordmap.evaluation import EvalCase, ablate, run_eval
from affordmap.experiment import RunConfig, build_data, decoder_config_for, load_run_config
from affordmap.grid import BinaryMask, FeatureMap, Heatmap, argmax_peak
from affordmap.io import (
    export_pgm,
    load_checkpoint,
    parse_annotations,
    read_heatmap,
    save_checkpoint,
    write_ablation_csv,
    write_heatmap,
    write_json,
    write_loss_csv,
)
from affordmap.synthesis import synthesize
from affordmap.training import train

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _safe_name(record_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", record_id) or "record"


def _config(path) -> RunConfig:
    return load_run_config(path) if path else RunConfig()


# ------------------------------------------------------------------ commands


def cmd_synth(args) -> int:
    records = parse_annotations(args.annotations, sigma=args.sigma, alpha=args.alpha)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seen = set()
    for r in records:
        name = _safe_name(r.id)
        if name in seen:
            raise FormatError(f"record id {r.id!r}: duplicate output name {name}.afhm")
        seen.add(name)
        path = out / f"{name}.afhm"
        write_heatmap(path, synthesize(r))
        print(path)
    return EXIT_OK


def save_cases(path, cases) -> None:
    np.savez(path,
             features=np.stack([c.features.values for c in cases]),
             regions=np.stack([c.success_region.bits for c in cases]),
             targets=np.stack([c.target.values for c in cases]),
             ids=np.array([c.instruction_id for c in cases]))


def load_cases(path) -> list[EvalCase]:
    try:
        with np.load(path, allow_pickle=False) as z:
            f, r, t, ids = z["features"], z["regions"], z["targets"], z["ids"]
    except (KeyError, ValueError, zipfile.BadZipFile) as exc:
        raise FormatError(f"{path}: not a cases archive ({exc})") from None
    if not (len(f) == len(r) == len(t) == len(ids)):
        raise FormatError(f"{path}: arrays disagree on the number of cases")
    return [EvalCase(FeatureMap(f[i]), BinaryMask(r[i]), str(ids[i]), Heatmap(t[i])) for i in range(len(f))]


def cmd_train(args) -> int:
    run = _config(args.config)
    if args.seed is not None:
        run = run.with_seed(args.seed)
    data = build_data(run)
    params, curve = train(run.train, args.decoder, data.train_set, data.eval_set,
                          decoder_config_for(run, args.decoder))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ahdp", params)
    write_loss_csv(out / "loss.csv", curve)
    save_cases(out / "cases.npz", data.cases)
    write_json(out / "config.json", {**run.to_dict(), "decoder_kind": args.decoder})
    last = curve[-1]
    print(f"{args.decoder} seed={run.train.seed} steps={last.step} "
          f"train_bce={last.train_bce:.6f} eval_bce={last.eval_bce:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    params = load_checkpoint(args.ckpt)
    cases = load_cases(args.cases)
    report = run_eval(params, cases, args.threshold)
    if args.report:
        write_json(args.report, report.to_dict(include_timing=not args.no_timing))
    nr = report.accuracy_non_refused
    print(f"cases={report.n_cases} hits={report.hits} misses={report.misses} refusals={report.refusals} "
          f"accuracy={report.accuracy:.4f} accuracy_non_refused={'n/a' if nr is None else f'{nr:.4f}'}")
    return EXIT_OK


def _parse_list(text, conv, what):
    try:
        items = [conv(v.strip()) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad {what} list {text!r}") from None
    if not items:
        raise UsageError(f"empty {what} list")
    return items


def cmd_ablate(args) -> int:
    kinds = _parse_list(args.decoders, str, "decoder")
    unknown = [k for k in kinds if k not in DECODER_KINDS]
    if unknown:
        raise UsageError(f"unknown decoder kinds {unknown}; choose from {', '.join(DECODER_KINDS)}")
    seeds = _parse_list(args.seeds, int, "seed")
    run = _config(args.config)
    data = build_data(run)
    result = ablate(kinds, run.train, data.train_set, data.cases, seeds, decoder_config_for(run, "ahd"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(out / "ablation.csv", result.rows)
    summary = result.summary()
    write_json(out / "summary.json", {"summary": summary, "config": run.to_dict(),
                                      "train_hash": result.rows[0].train_hash,
                                      "eval_hash": result.rows[0].eval_hash})
    for kind, s in summary.items():
        print(f"{kind:12s} accuracy={s['accuracy_mean']:.4f}±{s['accuracy_std']:.4f} "
              f"eval_bce={s['eval_bce_mean']:.6f}±{s['eval_bce_std']:.6f}")
    return EXIT_OK


def cmd_peak(args) -> int:
    (x, y), value = argmax_peak(read_heatmap(args.heatmap))
    print(f"{x} {y} {value:.6f}")
    return EXIT_OK


def cmd_export_pgm(args) -> int:
    export_pgm(read_heatmap(args.input), args.out)
    return EXIT_OK


# -------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="affordmap", description="Dense affordance heatmaps: synthesis, training, evaluation.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", help="annotations -> AFHM heatmaps")
    s.add_argument("--annotations", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--sigma", type=float, help="default sigma for point and mask records")
    s.add_argument("--alpha", type=float, help="default box alpha")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train one decoder on the synthetic suite")
    t.add_argument("--config", help="run config JSON (defaults to the desk-scale run)")
    t.add_argument("--seed", type=int)
    t.add_argument("--decoder", choices=DECODER_KINDS, default="ahd")
    t.add_argument("--out", required=True, help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="peak-in-region evaluation of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--cases", required=True, help="cases.npz written by train")
    e.add_argument("--threshold", type=float, default=0.0)
    e.add_argument("--report", help="write the JSON report here")
    e.add_argument("--no-timing", action="store_true", help="omit latency fields from the report")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate several decoders over several seeds")
    a.add_argument("--decoders", default=",".join(DECODER_KINDS))
    a.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    a.add_argument("--config")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    k = sub.add_parser("peak", help="print the argmax of a heatmap as 'x y value'")
    k.add_argument("--heatmap", required=True)
    k.set_defaults(func=cmd_peak)

    x = sub.add_parser("export-pgm", help="AFHM -> 16-bit PGM")
    x.add_argument("--in", dest="input", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_pgm)
    return p


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (AffordmapError, OSError) as exc:
        print(f"affordmap: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
