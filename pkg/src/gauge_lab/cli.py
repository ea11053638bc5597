"""``gauge-lab run``: seeded verification campaigns with JSON or CSV reports.

Exit status is 0 when every check passes, 1 when any check fails and 2 when
the configuration (or the output path) is unusable.  GAUGE_LAB_THREADS caps
how many trials run at once; results are always reported in trial order.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .errors import ConfigError, GaugeLabError
from .experiments import KINDS, run_trial

FORMATS = ("json", "csv")

_GENERIC = {
    "dim": 2,
    "n_steps": 1024,
    "seed": 0,
    "trials": 5,
    "gauge_amplitude": 0.15,
    "layers": 4,
    "tokens": 2,
    "magnitude": 1e-3,
    "iterations": 100,
    "strength": 1e-3,
    "train_steps": 32,
    "nonlinear_steps": 128,
}


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    dim: int
    n_steps: int
    seed: int
    trials: int
    gauge_amplitude: float
    layers: int
    tokens: int
    magnitude: float
    iterations: int
    strength: float
    train_steps: int
    nonlinear_steps: int
    tolerances: Dict[str, float] = field(default_factory=dict)
    out: Optional[str] = None
    format: str = "json"

    @classmethod
    def from_dict(cls, data) -> "ExperimentConfig":
        """Fill missing fields from the kind's defaults, then validate."""
        if not isinstance(data, dict):
            raise ConfigError("config", "must be a JSON object")
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown field")
        kind = data.get("kind")
        if kind not in KINDS:
            raise ConfigError("kind", f"unknown experiment kind {kind!r}; choose from {sorted(KINDS)}")
        merged = dict(_GENERIC)
        merged.update(KINDS[kind].defaults)
        merged.update({k: v for k, v in data.items() if v is not None})
        merged["tolerances"] = dict(merged.get("tolerances") or {})
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def validate(self):
        ints = ("dim", "n_steps", "seed", "trials", "layers", "tokens", "iterations", "train_steps", "nonlinear_steps")
        for name in ints:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(name, f"must be an integer, got {value!r}")
        for name in ("dim", "n_steps", "layers", "tokens", "train_steps", "nonlinear_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        for name in ("seed", "trials", "iterations"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        for name in ("gauge_amplitude", "magnitude", "strength"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value) or value < 0:
                raise ConfigError(name, f"must be a finite number >= 0, got {value!r}")
        if self.kind == "bridge-diagram" and self.n_steps % self.layers:
            raise ConfigError("layers", f"{self.layers} layers do not divide {self.n_steps} grid steps")
        if self.kind == "wilson-covariance" and self.n_steps % 8:
            raise ConfigError("n_steps", "must be a multiple of 8 for the refinement sweep")
        if self.kind == "attention-node" and self.n_steps % 4:
            raise ConfigError("n_steps", "must be a multiple of 4 so the kick time is a grid node")
        if self.kind in ("regularizer-train", "orbit-orthogonality") and self.n_steps < 2:
            raise ConfigError("n_steps", "must be >= 2")
        if self.kind == "regularizer-train" and self.train_steps < 2:
            raise ConfigError("train_steps", "must be >= 2")
        if not isinstance(self.tolerances, dict):
            raise ConfigError("tolerances", "must be an object mapping check names to numbers")
        allowed = KINDS[self.kind].tolerances
        for name, value in self.tolerances.items():
            if name not in allowed:
                raise ConfigError(f"tolerances.{name}", f"no such check for {self.kind}; choose from {sorted(allowed)}")
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0:
                raise ConfigError(f"tolerances.{name}", f"must be a positive number, got {value!r}")
        if self.format not in FORMATS:
            raise ConfigError("format", f"must be one of {FORMATS}")

    def resolved_tolerances(self):
        tol = dict(KINDS[self.kind].tolerances)
        tol.update(self.tolerances)
        return tol

    def echo(self):
        out = asdict(self)
        out.pop("out")
        out.pop("format")
        out["tolerances"] = self.resolved_tolerances()
        return out


@dataclass
class TrialRow:
    trial: int
    check: str
    residual: Optional[float]
    tolerance: float
    comparison: str
    verdict: str
    error: Optional[str] = None


@dataclass
class Report:
    experiment: dict
    trials: List[TrialRow]
    criteria: Dict[str, str]
    passed: bool
    seed: int
    version: str
    wall_time: float

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "trials": [asdict(r) for r in self.trials],
            "criteria": self.criteria,
            "passed": self.passed,
            "seed": self.seed,
            "version": self.version,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            data["experiment"],
            [TrialRow(**r) for r in data["trials"]],
            data["criteria"],
            data["passed"],
            data["seed"],
            data["version"],
            data["wall_time"],
        )


def thread_cap():
    raw = os.environ.get("GAUGE_LAB_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError("GAUGE_LAB_THREADS", f"must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("GAUGE_LAB_THREADS", f"must be a positive integer, got {raw!r}")
    return n


def _one_trial(cfg: ExperimentConfig, index, seq, tolerances):
    rng = np.random.default_rng(seq)
    try:
        checks = run_trial(cfg.kind, cfg, rng, tolerances)
    except (GaugeLabError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        return [TrialRow(index, "trial", None, 0.0, "le", "error", f"{type(exc).__name__}: {exc}")]
    # JSON has no inf/nan; a non-finite residual is reported as null and fails
    return [
        TrialRow(
            index,
            c.name,
            float(c.residual) if np.isfinite(c.residual) else None,
            float(c.tolerance),
            c.comparison,
            "pass" if c.passed else "fail",
        )
        for c in checks
    ]


def run(cfg: ExperimentConfig, threads=None) -> Report:
    """Run every trial of ``cfg``; trial i draws from child i of the seed sequence."""
    threads = thread_cap() if threads is None else threads
    start = time.perf_counter()
    tolerances = cfg.resolved_tolerances()
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.trials)
    work = lambda i: _one_trial(cfg, i, seqs[i], tolerances)
    if threads > 1 and cfg.trials > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_trial = list(pool.map(work, range(cfg.trials)))
    else:
        per_trial = [work(i) for i in range(cfg.trials)]
    rows = [row for rows in per_trial for row in rows]

    criteria = {}
    for row in rows:
        ok = row.verdict == "pass"
        criteria[row.check] = "pass" if ok and criteria.get(row.check, "pass") == "pass" else "fail"
    return Report(
        cfg.echo(),
        rows,
        dict(sorted(criteria.items())),
        all(v == "pass" for v in criteria.values()),
        cfg.seed,
        __version__,
        round(time.perf_counter() - start, 6),
    )


def render(report: Report, fmt="json") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["trial", "residual", "tolerance", "verdict", "check", "comparison"])
        for r in report.trials:
            residual = "" if r.residual is None else repr(r.residual)
            writer.writerow([r.trial, residual, repr(r.tolerance), r.verdict, r.check, r.comparison])
        return buf.getvalue()
    raise ConfigError("format", f"must be one of {FORMATS}")


def emit(report: Report, fmt="json", path=None):
    """Write the rendered report to ``path`` (UTF-8) or stdout."""
    text = render(report, fmt)
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def load_config(path, overrides):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError("config", "must be a JSON object")
    data = dict(data)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(data)


def build_parser():
    parser = argparse.ArgumentParser(prog="gauge-lab", description="Run gauge-symmetry verification experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a JSON config")
    r.add_argument("--config", required=True, help="JSON file with a single top-level object")
    r.add_argument("--kind", choices=sorted(KINDS), help="override the experiment kind")
    r.add_argument("--seed", type=int, help="override the seed")
    r.add_argument("--out", help="write the report here instead of stdout")
    r.add_argument("--format", choices=FORMATS, help="report format (default json)")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config, {"kind": args.kind, "seed": args.seed, "out": args.out, "format": args.format})
        report = run(cfg)
        emit(report, cfg.format, cfg.out)
    except ConfigError as exc:
        print(f"gauge-lab: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"gauge-lab: cannot write report: {exc}", file=sys.stderr)
        return 2
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
