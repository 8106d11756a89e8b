"""Command-line entry point: ``adspeech <subcommand> [options]``.

Exit codes: 0 success, 2 validation error, 3 runtime failure. Failures print
one JSON object on standard error; successes print a JSON summary on
standard output.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import evaluation, pipeline, synthetic
from .pipeline import (
    EXIT_OK, STUB_BACKEND, ConfigError, ExperimentConfig, classify_error, error_payload,
)


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="experiment config JSON")
    parser.add_argument("--workers", type=int, default=default, help="worker pool size")
    parser.add_argument("--seed", type=int, default=default, help="seed (u64) for CV and models")
    parser.add_argument("--out", default=default, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adspeech", description="Speech-based AD/CN classification pipeline.")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    p = add("gen-synthetic", "write the bundled synthetic corpus and a ready-to-run config")
    p.add_argument("--n-clips", type=int, default=20, help="training clips to synthesize")
    p.add_argument("--n-test", type=int, default=0, help="labeled held-out test clips")

    for name, text in (("extract-features", "write features.csv"),
                       ("extract-embeddings", "write embeddings.csv")):
        p = add(name, text)
        p.add_argument("--manifest", help="corpus manifest (overrides the config)")
        p.add_argument("--encoder", help=f"ONNX encoder path or {STUB_BACKEND}")
        p.add_argument("--embeddings", help="precomputed embeddings CSV")

    p = add("fuse", "join features and embeddings into fused.csv")
    p.add_argument("--features", help="features CSV (without --config)")
    p.add_argument("--embeddings", help="embeddings CSV (without --config)")

    for name, text in (("cv", "cross-validate the configured pipeline"),
                       ("train", "fit the configured pipeline on the full training set"),
                       ("run", "all stages, from extraction to the gap report")):
        p = add(name, text)
        p.add_argument("--manifest", help="corpus manifest (overrides the config)")

    p = add("predict", "predict a manifest with a trained model file")
    p.add_argument("--model", required=True, help="model file written by train")
    p.add_argument("--manifest", required=True, help="manifest of clips to predict")
    p.add_argument("--encoder", help=f"ONNX encoder path or {STUB_BACKEND}")
    p.add_argument("--embeddings", help="precomputed embeddings CSV")

    p = add("report-gaps", "percentage-point gaps between two metric reports")
    p.add_argument("--a", dest="report_a", help="first report (defaults to <out>/test_metrics.json)")
    p.add_argument("--b", dest="report_b", help="second report (defaults to <out>/cv_report.json)")

    p = add("rank-models", "rank CV reports by aggregate accuracy")
    p.add_argument("reports", nargs="+", help="NAME=cv_report.json entries")
    p.add_argument("--top", type=int, default=5, help="how many models to keep")
    p.add_argument("--manual", help="comma-separated model names that replace the computed ranking")
    return parser


def _config_from_args(args, mode: str | None = None) -> ExperimentConfig:
    if args.config:
        config = ExperimentConfig.from_file(args.config)
    else:
        manifest = getattr(args, "manifest", None)
        if not manifest or not args.out:
            raise ConfigError("without --config, pass --manifest and --out")
        config = ExperimentConfig(manifest, args.out, mode or "feat")
    overrides = {
        "corpus_manifest": getattr(args, "manifest", None),
        "output_directory": args.out,
        "worker_count": args.workers,
        "cv_seed": args.seed,
        "encoder_backend_path": getattr(args, "encoder", None),
        "precomputed_embeddings_path": getattr(args, "embeddings", None),
    }
    if mode is not None and not args.config:
        overrides["representation_mode"] = mode
    return config.override(**overrides)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _stage_command(args, until: str, mode: str | None = None) -> int:
    config = _config_from_args(args, mode)
    result = pipeline.run_experiment(config, until=until)
    if result.exit_status == EXIT_OK:
        _emit({"status": "ok", "stages": result.stages, "artifacts": result.artifacts})
    return result.exit_status


def cmd_gen_synthetic(args) -> int:
    if not args.out:
        raise ConfigError("gen-synthetic needs --out")
    seed = 7 if args.seed is None else args.seed
    manifests = synthetic.generate_corpus(args.out, args.n_clips, seed=seed, n_test=args.n_test)
    config = {
        "corpus_manifest": manifests["train"].name,
        "output_directory": "results",
        "representation_mode": "combo",
        "model_family": "svm-rbf",
        "standardization": True,
        "cv_scheme": "loso",
        "cv_seed": 0,
        "encoder_backend_path": STUB_BACKEND,
        "worker_count": args.workers or 1,
    }
    if "test" in manifests:
        config["test_manifest"] = manifests["test"].name
    config_path = Path(args.out) / "config.json"
    pipeline.atomic_write_text(config_path, json.dumps(config, indent=2, sort_keys=True) + "\n")
    _emit({"status": "ok", "manifests": {k: str(v) for k, v in manifests.items()}, "config": str(config_path)})
    return EXIT_OK


def cmd_fuse(args) -> int:
    if args.config:
        return _stage_command(args, "fuse")
    if not (args.features and args.embeddings and args.out):
        raise ConfigError("fuse without --config needs --features, --embeddings and --out")
    out = pipeline.fuse_tables(args.features, args.embeddings, Path(args.out) / pipeline.FUSED_CSV)
    _emit({"status": "ok", "artifacts": {"fuse": str(out)}})
    return EXIT_OK


def cmd_predict(args) -> int:
    if not args.out:
        raise ConfigError("predict needs --out")
    out = pipeline.predict_batch(args.model, args.manifest, Path(args.out) / pipeline.PREDICTIONS_CSV,
                                 args.encoder, args.embeddings, args.workers or 1)
    _emit({"status": "ok", "artifacts": {"predict": str(out)}})
    return EXIT_OK


def cmd_report_gaps(args) -> int:
    out_dir = Path(args.out) if args.out else None
    if args.config and out_dir is None:
        out_dir = Path(ExperimentConfig.from_file(args.config).output_directory)
    a = args.report_a or (out_dir / pipeline.TEST_METRICS if out_dir else None)
    b = args.report_b or (out_dir / pipeline.CV_REPORT if out_dir else None)
    if a is None or b is None or out_dir is None:
        raise ConfigError("report-gaps needs --a/--b and --out, or --config")
    report = pipeline.gap_report_from_files(a, b)
    path = out_dir / pipeline.GAP_REPORT
    pipeline.atomic_write_text(path, evaluation.dumps(report) + "\n")
    _emit({"status": "ok", "artifacts": {"gap_report": str(path)}, "gaps_pp": report["gaps_pp"]})
    return EXIT_OK


def cmd_rank_models(args) -> int:
    results = []
    for entry in args.reports:
        name, sep, path = entry.partition("=")
        if not sep:
            raise ConfigError(f"expected NAME=report.json, got {entry!r}")
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        results.append((name, float(obj["aggregate"]["accuracy"])))
    ranked = evaluation.rank_models(results, min(args.top, len(results)))
    payload = {"status": "ok", "ranked": [{"model": n, "accuracy": a} for n, a in ranked]}
    if args.manual:
        chosen = [n.strip() for n in args.manual.split(",") if n.strip()]
        known = dict(results)
        unknown = [n for n in chosen if n not in known]
        if unknown:
            raise ConfigError(f"manual selection names unknown models: {unknown}")
        payload["selected"] = [{"model": n, "accuracy": known[n]} for n in chosen]
        payload["selection"] = "manual"
    else:
        payload["selected"] = payload["ranked"]
        payload["selection"] = "top-accuracy"
    _emit(payload)
    return EXIT_OK


def dispatch(args) -> int:
    command = args.command
    if command == "gen-synthetic":
        return cmd_gen_synthetic(args)
    if command == "extract-features":
        return _stage_command(args, "features", "feat")
    if command == "extract-embeddings":
        return _stage_command(args, "embeddings", "embed")
    if command == "fuse":
        return cmd_fuse(args)
    if command in ("cv", "train"):
        return _stage_command(args, command)
    if command == "run":
        return _stage_command(args, "all")
    if command == "predict":
        return cmd_predict(args)
    if command == "report-gaps":
        return cmd_report_gaps(args)
    if command == "rank-models":
        return cmd_rank_models(args)
    raise ConfigError(f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except Exception as exc:
        sys.stderr.write(json.dumps(error_payload(exc), sort_keys=True) + "\n")
        return classify_error(exc)


if __name__ == "__main__":
    sys.exit(main())
