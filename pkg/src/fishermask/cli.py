"""Command-line entry point: ``fishermask {run,compare,profile,plot}``.

Exit codes: 0 success, 2 configuration or input-format error, 3 runtime or
numeric error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, FisherMaskError, FormatError
from .fisher import build_mask, fisher_diag_pool, layer_profile
from .harness import (
    DatasetConfig,
    ExperimentConfig,
    ModelConfig,
    aggregate_trials,
    initial_round,
    load_datasets,
    run_experiment,
)
from .model import TrainConfig
from .selector import STRATEGIES

log = logging.getLogger("fishermask")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
OUTPUT_ENV = "FISHERMASK_OUTPUT_DIR"
PATH_KEYS = ("images", "labels", "test_images", "test_labels", "path", "test_path")
FILE_ONLY_KEYS = ("strategies", "output_dir")
_SECTIONS = {"dataset": DatasetConfig, "model": ModelConfig, "train": TrainConfig}


# ----------------------------------------------------------------- config


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _override_target(key):
    """Map a flat or dotted flag name onto a (section, field) config path."""
    if "." in key:
        section, name = key.split(".", 1)
        if section not in _SECTIONS or name not in {f.name for f in dataclasses.fields(_SECTIONS[section])}:
            raise ConfigError(f"unknown override --{key}")
        return section, name
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} | set(FILE_ONLY_KEYS) | {"lambda"}
    if key in top:
        return None, key
    owners = [s for s, cls in _SECTIONS.items() if key in {f.name for f in dataclasses.fields(cls)}]
    if len(owners) == 1:
        return owners[0], key
    if owners:
        raise ConfigError(f"--{key} is ambiguous; use one of " + ", ".join(f"--{s}.{key}" for s in owners))
    raise ConfigError(f"unknown override --{key}")


def parse_overrides(tokens):
    """``['--strategy', 'entropy', '--train.epochs', '50']`` -> nested dict."""
    if len(tokens) % 2:
        raise ConfigError(f"overrides must come in --key value pairs, got {tokens}")
    out = {}
    for flag, text in zip(tokens[::2], tokens[1::2]):
        if not flag.startswith("--"):
            raise ConfigError(f"expected a --key flag, got {flag!r}")
        section, name = _override_target(flag[2:].replace("-", "_"))
        value = _parse_value(text)
        if name == "strategies" and isinstance(value, str):
            value = value.split(",")
        if section is None:
            out[name] = value
        else:
            out.setdefault(section, {})[name] = value
    return out


def _merge(base, extra):
    merged = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def load_config(path, overrides=()):
    """Read a JSON config file and apply flag overrides.

    Returns ``(ExperimentConfig, strategies, output_dir)``. Relative paths
    resolve against the config file's directory.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    flags = parse_overrides(list(overrides))
    raw = _merge(raw, flags)
    base = path.resolve().parent

    output_dir = raw.pop("output_dir", None)
    if "output_dir" not in flags and os.environ.get(OUTPUT_ENV):
        output_dir = os.environ[OUTPUT_ENV]
    output_dir = base / (output_dir or "out")

    strategies = raw.pop("strategies", None)
    if strategies is not None:
        if not isinstance(strategies, list) or not strategies:
            raise ConfigError("strategies must be a non-empty list")
        unknown = [s for s in strategies if s not in STRATEGIES]
        if unknown:
            raise ConfigError(f"unknown strategies {unknown}; choose from {STRATEGIES}")

    if isinstance(raw.get("dataset"), dict):
        ds = dict(raw["dataset"])
        for key in PATH_KEYS:
            if isinstance(ds.get(key), str):
                ds[key] = str(base / ds[key])
        raw["dataset"] = ds
    cfg = ExperimentConfig.from_dict(raw)
    return cfg, strategies, output_dir


# ----------------------------------------------------------------- output


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x):
    return repr(float(x))


def write_curve(curve, path):
    rows = [(int(n), _fmt(m), _fmt(s)) for n, m, s in curve.rows()]
    atomic_write(path, _csv_text(["labels", "mean_acc", "std_acc"], rows))


def write_record(record, path):
    atomic_write(path, json.dumps(record.to_dict(), indent=2, sort_keys=True) + "\n")


def write_selections(record, path):
    rows = [(r, s, i, _fmt(score)) for r, s, i, score in record.selections]
    atomic_write(path, _csv_text(["round", "step", "sample_id", "score"], rows))


# ----------------------------------------------------------------- commands


def _run_trials(cfg, datasets, jobs, base_dir):
    seeds = [cfg.base_seed + t for t in range(cfg.trials)]
    if jobs <= 1 or len(seeds) == 1:
        return [run_experiment(cfg, s, datasets=datasets, base_dir=base_dir) for s in seeds]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(run_experiment, cfg, s, datasets, base_dir) for s in seeds]
        return [f.result() for f in futures]


def _run_strategy(cfg, datasets, out, jobs, base_dir):
    records = _run_trials(cfg, datasets, jobs, base_dir)
    for rec in records:
        stem = f"{cfg.strategy}_trial{rec.trial_seed - cfg.base_seed}"
        write_record(rec, out / "records" / f"{stem}.json")
        write_selections(rec, out / "selections" / f"{stem}.csv")
    curve = aggregate_trials(records)
    write_curve(curve, out / f"curve_{cfg.strategy}.csv")
    log.info("%s: final mean accuracy %.4f", cfg.strategy, curve.mean_acc[-1])
    return records, curve


def cmd_run(args):
    cfg, _, out = load_config(args.config, args.overrides)
    datasets = load_datasets(cfg.dataset)
    _run_strategy(cfg, datasets, out, args.jobs, Path(args.config).parent)
    print(out)
    return EXIT_OK


def cmd_compare(args):
    cfg, strategies, out = load_config(args.config, args.overrides)
    strategies = strategies or [cfg.strategy]
    datasets = load_datasets(cfg.dataset)
    rows = []
    for name in strategies:
        scfg = dataclasses.replace(cfg, strategy=name)
        try:
            _, curve = _run_strategy(scfg, datasets, out, args.jobs, Path(args.config).parent)
        except FisherMaskError as exc:
            raise type(exc)(f"strategy {name} failed: {exc}") from exc
        rows.extend((int(n), name, _fmt(m), _fmt(s)) for n, m, s in curve.rows())
    rows.sort(key=lambda r: (r[0], strategies.index(r[1])))
    atomic_write(out / "comparison.csv", _csv_text(["labels", "strategy", "mean_acc", "std_acc"], rows))
    print(out)
    return EXIT_OK


def profile_rows(cfg: ExperimentConfig, datasets=None):
    """Train round 0 of trial ``base_seed`` and profile its Fisher mask over
    the still-unlabeled pool."""
    pool, _ = datasets if datasets is not None else load_datasets(cfg.dataset)
    model, labeled = initial_round(cfg, cfg.base_seed, pool)
    remaining = pool.take(np.setdiff1d(np.arange(len(pool)), labeled))
    mask = build_mask(fisher_diag_pool(model, remaining), cfg.sparsity)
    return layer_profile(mask), mask


def cmd_profile(args):
    cfg, _, out = load_config(args.config, args.overrides)
    shares, mask = profile_rows(cfg)
    rows = [(s.layer, s.selected, s.total, _fmt(s.fraction)) for s in shares]
    path = out / "profile.csv"
    atomic_write(path, _csv_text(["layer", "selected", "total", "fraction"], rows))
    last_names = ("W", "b") if cfg.model.kind == "softmax_linear" else ("W2", "b2")
    last = [s for s in shares if s.layer in last_names]
    selected, total = sum(s.selected for s in last), sum(s.total for s in last)
    log.info("k=%d; last layer: %d of %d parameters selected (%.4f)", mask.k, selected, total, selected / total)
    print(path)
    return EXIT_OK


# ----------------------------------------------------------------- plotting

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f")


def read_curve(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read curve {path}: {exc.strerror}") from None
    if not rows:
        raise FormatError(f"{path}: curve CSV has no data rows")
    try:
        data = np.array([[float(r["labels"]), float(r["mean_acc"]), float(r["std_acc"])] for r in rows])
    except (KeyError, TypeError, ValueError):
        raise FormatError(f"{path}: expected columns labels,mean_acc,std_acc with numeric values") from None
    return data


def render_svg(curves, width=640, height=400):
    """Deterministic SVG line chart of ``[(name, array(n, 3)), ...]``."""
    left, right, top, bottom = 60, 150, 20, 50
    pw, ph = width - left - right, height - top - bottom
    xs = np.concatenate([c[:, 0] for _, c in curves])
    x0, x1 = float(xs.min()), float(xs.max())
    if x1 == x0:
        x1 = x0 + 1.0

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + (1.0 - min(max(y, 0.0), 1.0)) * ph

    def pts(xv, yv):
        return " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(xv, yv))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>',
    ]
    for t in np.linspace(0.0, 1.0, 6):
        out.append(f'<text x="{left - 8}" y="{py(t) + 4:.2f}" font-size="11" text-anchor="end">{t:.1f}</text>')
    for t in np.linspace(x0, x1, 5):
        out.append(f'<text x="{px(t):.2f}" y="{top + ph + 16}" font-size="11" text-anchor="middle">{t:.0f}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{height - 10}" font-size="12" text-anchor="middle">labeled samples</text>')
    out.append(
        f'<text x="14" y="{top + ph / 2:.2f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {top + ph / 2:.2f})">accuracy</text>'
    )
    for i, (name, c) in enumerate(curves):
        color = _PALETTE[i % len(_PALETTE)]
        band = pts(c[:, 0], c[:, 1] + c[:, 2]) + " " + pts(c[::-1, 0], c[::-1, 1] - c[::-1, 2])
        out.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        out.append(f'<polyline points="{pts(c[:, 0], c[:, 1])}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = top + 14 + 18 * i
        out.append(f'<rect x="{left + pw + 12}" y="{ly - 9}" width="12" height="12" fill="{color}"/>')
        label = name.replace("&", "&amp;").replace("<", "&lt;")
        out.append(f'<text x="{left + pw + 30}" y="{ly + 1}" font-size="12">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def cmd_plot(args):
    curves = [(Path(p).stem, read_curve(p)) for p in args.curves]
    atomic_write(args.out, render_svg(curves))
    print(args.out)
    return EXIT_OK


# ----------------------------------------------------------------- main


def build_parser():
    parser = argparse.ArgumentParser(prog="fishermask", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, helptext in (
        ("run", cmd_run, "run one strategy for all trials"),
        ("compare", cmd_compare, "run every listed strategy with matched trial seeds"),
        ("profile", cmd_profile, "write the per-layer Fisher mask profile after round 0"),
    ):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="JSON experiment config")
        if name != "profile":
            p.add_argument("--jobs", type=int, default=1, help="trials to run in parallel")
        p.set_defaults(func=func, jobs=1)

    p = sub.add_parser("plot", help="render learning-curve CSVs to SVG")
    p.add_argument("curves", nargs="+", help="curve CSV files (labels,mean_acc,std_acc)")
    p.add_argument("--out", required=True, help="output SVG path")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s"
    )
    if args.command == "plot" and extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    args.overrides = extra
    try:
        return args.func(args)
    except (ConfigError, FormatError) as exc:
        print(f"fishermask: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FisherMaskError as exc:
        print(f"fishermask: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
