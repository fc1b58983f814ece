"""Command-line front end.

``protoreplay run`` executes a (strategy x seed) grid under one protocol and
writes, below the output directory::

    <label>/seed-<s>/aggregate.json   headline metrics for one run
    <label>/seed-<s>/trace.csv        per-batch trace (plot-ready)
    <label>/seed-<s>/manifest.json    run identity, config digest, seed, metric
    comparison.csv                    one row per (label, seed) plus mean rows
    summary.json                      mean and std per label

``protoreplay report`` renders every manifest below a directory as a text
table with one row per dataset/protocol and one column per strategy.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .datasets import KINDS, generate_synthetic_dataset
from .engine import EngineConfig, Strategy
from .errors import ParseError
from .evaluation import (
    ForgettingProtocol,
    make_forgetting_stream,
    run_clear_protocol,
    run_forgetting_seed,
    run_plain_stream,
)
from .stream import read_csv

log = logging.getLogger("protoreplay")

OUT_ENV = "PROTOREPLAY_OUT"
DEFAULT_OUT = "protoreplay-out"
PROTOCOLS = ("forgetting", "clear", "plain-stream")
HEADLINE = {"forgetting": "degradation_index", "clear": "forgetting_ratio", "plain-stream": "mse"}
TRACE_FIELDS = ("batch", "insertions", "retrained", "loss", "prototype_count",
                "real_count", "synthetic_count", "test_mse", "phase")

# run settings that a JSON config file may carry; flags override them
DEFAULTS = {
    "data": None, "target": "target", "protocol": "forgetting", "rho": [0.5],
    "strategy": ["prototype"], "seeds": [0], "out": None, "n": 3000, "dim": 4,
    "noise": 0.1, "data_seed": 0, "workers": 1, "hidden_dim": None, "engine": {},
}


class UsageError(Exception):
    """Bad input from the user; maps to exit code 2."""


@dataclass(frozen=True)
class RunSpec:
    data: str
    protocol: str
    variants: tuple  # (label, EngineConfig) pairs
    seeds: tuple
    out: Path
    target: str = "target"
    n: int = 3000
    dim: int = 4
    noise: float = 0.1
    data_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.variants:
            raise UsageError("at least one strategy is required")
        if not self.seeds:
            raise UsageError("at least one seed is required")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="protoreplay",
                                     description="Continual regression experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a strategy x seed grid")
    run.add_argument("--config", type=Path, help="JSON file with run settings; flags win")
    run.add_argument("--data", help="CSV path or synthetic:<kind> (" + ", ".join(KINDS) + ")")
    run.add_argument("--target", help="target column for CSV data (default 'target')")
    run.add_argument("--protocol", choices=PROTOCOLS)
    run.add_argument("--rho", type=_float_list, help="synthetic ratios, e.g. 0,0.5")
    run.add_argument("--strategy", type=_str_list,
                     help="comma list of " + ", ".join(s.value for s in Strategy))
    run.add_argument("--seeds", type=_int_list, help="comma list of seeds")
    run.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    run.add_argument("--n", type=int, help="rows for synthetic data")
    run.add_argument("--dim", type=int, help="features for synthetic data")
    run.add_argument("--noise", type=float, help="target noise for synthetic data")
    run.add_argument("--data-seed", type=int, dest="data_seed", help="seed for synthetic data")
    run.add_argument("--hidden-dim", type=int, dest="hidden_dim", help="override MDN hidden width")
    run.add_argument("--workers", type=int, help="parallel runs (threads)")

    rep = sub.add_parser("report", help="render tables from an output directory")
    rep.add_argument("--in", dest="input", type=Path, help=f"directory (default ${OUT_ENV})")
    return parser


def _merge_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if args.config is not None:
        if not args.config.is_file():
            raise UsageError(f"config file not found: {args.config}")
        try:
            loaded = json.loads(args.config.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"config file {args.config} must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {sorted(unknown)}")
        settings.update(loaded)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def _variants(settings: dict) -> tuple:
    try:
        base = EngineConfig.from_dict(settings.get("engine") or {})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid engine config: {exc}") from None
    if settings.get("hidden_dim"):
        base = replace(base, mdn=replace(base.mdn, hidden_dim=int(settings["hidden_dim"])))
    out = []
    for name in settings["strategy"]:
        try:
            strategy = Strategy(name)
        except ValueError:
            raise UsageError(f"unknown strategy {name!r}; choose from "
                             + ", ".join(s.value for s in Strategy)) from None
        cfg = replace(base, strategy=strategy)
        if strategy is Strategy.PROTOTYPE_REPLAY:
            for rho in settings["rho"]:
                try:
                    out.append((f"prototype-rho{rho:g}", cfg.with_rho(float(rho))))
                except ValueError as exc:
                    raise UsageError(f"invalid rho {rho}: {exc}") from None
        else:
            out.append((strategy.value, cfg))
    return tuple(out)


def spec_from_args(args: argparse.Namespace) -> RunSpec:
    s = _merge_settings(args)
    if not s["data"]:
        raise UsageError("--data is required (CSV path or synthetic:<kind>)")
    if s["protocol"] not in PROTOCOLS:
        raise UsageError(f"unknown protocol {s['protocol']!r}")
    out = s["out"] or os.environ.get(OUT_ENV) or DEFAULT_OUT
    if int(s["workers"]) < 1:
        raise UsageError("--workers must be >= 1")
    return RunSpec(
        data=str(s["data"]), protocol=s["protocol"], variants=_variants(s),
        seeds=tuple(int(x) for x in s["seeds"]), out=Path(out), target=s["target"],
        n=int(s["n"]), dim=int(s["dim"]), noise=float(s["noise"]),
        data_seed=int(s["data_seed"]), workers=int(s["workers"]),
    )


def load_data(spec: RunSpec) -> tuple[np.ndarray, np.ndarray]:
    if spec.data.startswith("synthetic:"):
        kind = spec.data.split(":", 1)[1]
        try:
            return generate_synthetic_dataset(kind, spec.n, spec.dim, spec.noise, spec.data_seed)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    path = Path(spec.data)
    if not path.is_file():
        raise UsageError(f"data file not found: {path}")
    try:
        X, y, _ = read_csv(path, spec.target)
    except ParseError as exc:
        raise UsageError(str(exc)) from None
    return X, y


def config_digest(cfg: EngineConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _run_one(spec: RunSpec, X, y, label: str, cfg: EngineConfig, seed: int) -> dict:
    steps = []
    if spec.protocol == "forgetting":
        protocol = ForgettingProtocol()
        report = run_forgetting_seed(cfg, X, y, protocol, seed, on_step=steps.append)
        stream = make_forgetting_stream(X, y, protocol, seed)
        test_mse = report.mse_trace
        phases = [stream.phase(i) for i in range(len(steps))]
        metrics = report.to_dict()
    elif spec.protocol == "clear":
        report = run_clear_protocol(replace(cfg, seed=seed), X, y, on_step=steps.append)
        test_mse, phases = [None] * len(steps), [None] * len(steps)
        metrics = asdict(report)
    else:
        report = run_plain_stream(cfg, X, y, seed, on_step=steps.append)
        test_mse, phases = [None] * len(steps), [None] * len(steps)
        metrics = asdict(report)

    run_dir = spec.out / label / f"seed-{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    with (run_dir / "trace.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for rep, m, ph in zip(steps, test_mse, phases):
            w.writerow(rep.csv_row() + [rep.real_count, rep.synthetic_count,
                                        "" if m is None else repr(m), "" if ph is None else ph])
    aggregate = {"label": label, "seed": seed, "protocol": spec.protocol,
                 "dataset": spec.data, "metrics": metrics}
    (run_dir / "aggregate.json").write_text(dump_json(aggregate), encoding="utf-8")
    manifest = {
        "dataset": spec.data, "protocol": spec.protocol, "label": label,
        "strategy": cfg.strategy.value, "rho": cfg.rehearsal.synthetic_ratio
        if cfg.strategy is Strategy.PROTOTYPE_REPLAY else None,
        "seed": seed, "config": cfg.to_dict(), "config_digest": config_digest(cfg),
        "metric": HEADLINE[spec.protocol], "value": metrics[HEADLINE[spec.protocol]],
        "files": ["aggregate.json", "trace.csv"],
    }
    (run_dir / "manifest.json").write_text(dump_json(manifest), encoding="utf-8")
    return manifest


def cmd_run(spec: RunSpec) -> int:
    X, y = load_data(spec)
    spec.out.mkdir(parents=True, exist_ok=True)
    jobs = [(label, cfg, seed) for label, cfg in spec.variants for seed in spec.seeds]
    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            manifests = list(pool.map(lambda j: _run_one(spec, X, y, *j), jobs))
    else:
        manifests = [_run_one(spec, X, y, *j) for j in jobs]

    metric = HEADLINE[spec.protocol]
    summary = {}
    with (spec.out / "comparison.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "seed", metric])
        for label, _ in spec.variants:
            vals = [m["value"] for m in manifests if m["label"] == label]
            for m in manifests:
                if m["label"] == label:
                    w.writerow([label, m["seed"], repr(m["value"])])
            arr = np.array(vals, dtype=np.float64)
            summary[label] = {"mean": float(arr.mean()), "std": float(arr.std()), "n": len(vals)}
            w.writerow([label, "mean", repr(summary[label]["mean"])])
    (spec.out / "summary.json").write_text(
        dump_json({"dataset": spec.data, "protocol": spec.protocol, "metric": metric,
                   "labels": summary}), encoding="utf-8")
    print(render_table(manifests))
    return 0


def _column_key(m: dict):
    # prototype columns by descending rho, then the baselines
    if m.get("rho") is not None:
        return (0, -float(m["rho"]), m["label"])
    return (1, 0.0, m["label"])


def render_table(manifests: list[dict]) -> str:
    if not manifests:
        return "no runs found"
    columns = sorted({(_column_key(m), m["label"]) for m in manifests})
    labels = [c[1] for c in columns]
    rows = sorted({(m["dataset"], m["protocol"], m["metric"]) for m in manifests})
    header = ["dataset", "protocol", "metric"] + labels
    body = []
    for ds, proto, metric in rows:
        line = [ds, proto, metric]
        for label in labels:
            vals = [float(m["value"]) for m in manifests
                    if (m["dataset"], m["protocol"], m["label"]) == (ds, proto, label)]
            if not vals:
                line.append("-")
            elif len(vals) == 1:
                line.append(f"{vals[0]:.4f}")
            else:
                line.append(f"{np.mean(vals):.4f} ± {np.std(vals):.4f} (n={len(vals)})")
        body.append(line)
    widths = [max(len(str(r[i])) for r in [header] + body) for i in range(len(header))]
    fmt = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(header), fmt(["-" * w for w in widths])] + [fmt(r) for r in body])


REQUIRED_KEYS = ("dataset", "protocol", "label", "seed", "metric", "value", "config_digest")


def collect_manifests(root: Path) -> list[dict]:
    found = []
    for path in sorted(root.rglob("manifest.json")):
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            if not isinstance(data, dict) or any(k not in data for k in REQUIRED_KEYS):
                raise ValueError("missing required keys")
            float(data["value"])
        except (OSError, ValueError, TypeError) as exc:
            log.warning("skipping malformed manifest %s: %s", path, exc)
            continue
        found.append(data)
    return found


def cmd_report(root: Path) -> int:
    if not root.is_dir():
        raise UsageError(f"report directory not found: {root}")
    manifests = collect_manifests(root)
    if not manifests:
        print(f"no run manifests found in {root}")
        return 0
    print(render_table(manifests))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(spec_from_args(args))
        root = args.input or Path(os.environ.get(OUT_ENV) or DEFAULT_OUT)
        return cmd_report(root)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is a runtime failure
        log.debug("run failed", exc_info=True)
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
