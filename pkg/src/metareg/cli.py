"""Command-line front end: synth, crossval, generalize, predict, describe.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 training failure. Output directories carry a ``.partial`` marker until the
command finishes, so an interrupted or failed run is recognisable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .dataset import load_dir, load_for_prediction, write_dataset
from .errors import ConfigError, DataError, TrainingError
from .experiment import PIPELINES, crossval, generalize, write_manifest
from .metamodel import Metamodel, check_schema
from .synth import DESCRIBE_COLUMNS, describe, format_describe, generate

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3
PARTIAL = ".partial"
PREDICT_HEADER = "subject_id,predicted_score"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve(value: str | None, base: Path | None) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() or base is None else base / p


def _config(args) -> tuple[ExperimentConfig, Path | None]:
    """Load --config if given; relative paths inside it are relative to the file."""
    if getattr(args, "config", None) is None:
        return ExperimentConfig(), None
    return load_config(args.config), Path(args.config).resolve().parent


def _data_dir(args, cfg: ExperimentConfig, base: Path | None, fallback: str | None) -> Path:
    if args.data is not None:
        return Path(args.data)
    path = _resolve(fallback, base)
    if path is None:
        raise UsageError("no data directory: set it in the config or pass --data")
    return path


def _out_dir(args, cfg: ExperimentConfig, base: Path | None, suffix: str | None = None) -> Path:
    if args.out is not None:
        return Path(args.out)
    path = _resolve(cfg.out_dir, base)
    if path is None:
        raise UsageError("no output directory: set out_dir in the config or pass --out")
    return path / suffix if suffix else path


class _OutputDir:
    """Creates the directory with a .partial marker; removes the marker on success."""

    def __init__(self, path: Path):
        self.path = path

    def __enter__(self) -> Path:
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / PARTIAL).write_text("incomplete run\n")
        return self.path

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            (self.path / PARTIAL).unlink()
        return False


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    cfg, base = _config(args)
    out = _out_dir(args, cfg, base)
    dataset = generate(cfg.synth)
    with _OutputDir(out):
        write_dataset(dataset, out)
        write_manifest(out, cfg, "synth", {"n_subjects": len(dataset), "rois": dataset.rois})
    print(f"wrote {len(dataset)} subjects to {out}")
    print(format_describe(*describe(dataset)))
    return EXIT_OK


def _format_summary(summary: dict) -> str:
    lines = [f"{'kind':<14}" + "".join(f"{p + ' mean(SD)':>26}" for p in PIPELINES)]
    for kind, row in summary["table"].items():
        cells = []
        for p in PIPELINES:
            s = row.get(p)
            if not s or s.get("mean") is None:
                cells.append(f"{'-':>26}")
            else:
                cells.append(f"{s['mean']:>18.4f} ({s['sd']:.4f})")
        lines.append(f"{kind:<14}" + "".join(cells))
    return "\n".join(lines)


def cmd_crossval(args) -> int:
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    cfg, base = _config(args)
    data = _data_dir(args, cfg, base, cfg.data_dir)
    out = _out_dir(args, cfg, base)
    dataset = load_dir(data)
    with _OutputDir(out):
        summary = crossval(dataset, cfg, out, jobs=args.jobs)
    print(_format_summary(summary))
    print(f"report written to {out / 'report.csv'}")
    return EXIT_OK


def _models_root(path: Path) -> Path:
    """Accept either a crossval output directory or its models/ subdirectory."""
    if (path / "models").is_dir() and not any(path.glob("fold_*")):
        return path / "models"
    return path


def cmd_generalize(args) -> int:
    cfg, base = _config(args)
    data = _data_dir(args, cfg, base, cfg.generalize.data_dir)
    out = _out_dir(args, cfg, base, suffix=f"generalize_method{args.method}")
    models = _models_root(Path(args.models))
    if not models.is_dir():
        raise DataError(f"models directory not found: {models}")
    new_data = load_dir(data)
    with _OutputDir(out):
        summary = generalize(new_data, cfg, models, out, args.method)
    print(_format_summary(summary))
    for t in summary["tests"]:
        if t.get("name") == "pooled_correlation" and "p_two_tailed" in t:
            print(f"pooled {t['base_kind']}/{t['tag']}: r({t['df']}) = {t['r']:.4f}, "
                  f"p = {t['p_two_tailed']:.4g}")
    print(f"report written to {out / 'report.csv'}")
    return EXIT_OK


def _metamodel_dir(path: Path) -> Path:
    for candidate in (path, path / "metamodel"):
        if (candidate / "meta.json").exists():
            return candidate
    raise DataError(f"no stored metamodel (meta.json) under {path}")


def cmd_predict(args) -> int:
    cfg, base = _config(args)
    if args.out is None:
        raise UsageError("predict needs --out PATH for the predictions CSV")
    data = _data_dir(args, cfg, base, cfg.data_dir)
    model_dir = _metamodel_dir(Path(args.models))
    model = Metamodel.load(model_dir)
    if model.features is None:
        raise DataError(f"metamodel at {model_dir} has no feature spec")
    dataset = load_for_prediction(data)
    check_schema(model, dataset)
    samples = model.features.build(dataset.subjects, views=(model.view,))
    pred = model.predict(samples, clip=cfg.clip_predictions)

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(out.name + PARTIAL)
    lines = [PREDICT_HEADER] + [f"{sid},{repr(float(pred[sid]))}" for sid in sorted(pred)]
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, out)
    manifest = {
        "command": "predict",
        "models": str(model_dir),
        "data": str(data),
        "n_subjects": len(pred),
        "versions": {"metareg": __version__, "numpy": np.__version__},
    }
    out.with_name(out.name + ".manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(pred)} predictions to {out}")
    return EXIT_OK


def cmd_describe(args) -> int:
    cfg, base = _config(args)
    data = _data_dir(args, cfg, base, cfg.data_dir)
    rows, hist = describe(load_dir(data))
    print(format_describe(rows, hist))
    if args.out is not None:
        with _OutputDir(Path(args.out)) as out:
            lines = [",".join(DESCRIBE_COLUMNS)]
            for r in rows:
                lines.append(",".join("" if r[c] is None else str(r[c]) for c in DESCRIBE_COLUMNS))
            (out / "describe.csv").write_text("\n".join(lines) + "\n")
            (out / "score_histogram.csv").write_text(
                "score,count\n" + "".join(f"{k},{v}\n" for k, v in hist.items()))
            write_manifest(out, cfg, "describe", {"data": str(data)})
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="metareg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"metareg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON experiment config (its synth section is used)")
    p.add_argument("--out", help="dataset directory (default: out_dir from the config)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("crossval", help="k-fold metamodel vs traditional regression")
    p.add_argument("--config", required=True)
    p.add_argument("--data", help="dataset directory (overrides data_dir)")
    p.add_argument("--out", help="output directory (overrides out_dir)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for fold tasks")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("generalize", help="apply stored fold models to a new dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--models", required=True, help="crossval output or its models/ directory")
    p.add_argument("--method", type=int, choices=(1, 2), required=True,
                   help="1: frozen metamodels; 2: frozen bank, retrained meta level")
    p.add_argument("--data", help="new dataset directory (overrides generalize.data_dir)")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_generalize)

    p = sub.add_parser("predict", help="predict scores with one stored metamodel")
    p.add_argument("--models", required=True, help="metamodel directory (holding meta.json)")
    p.add_argument("--data", help="directory with series/ and optionally phenotypes.csv")
    p.add_argument("--out", help="predictions CSV path")
    p.add_argument("--config", help="optional config (data_dir, clip_predictions)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("describe", help="per-site summary table of a dataset")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--config", help="config whose data_dir is described")
    p.add_argument("--out", help="also write describe.csv to this directory")
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"metareg {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"metareg {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"metareg {args.command}: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING


if __name__ == "__main__":
    sys.exit(main())
