"""Experiment reports and their JSON / CSV persistence."""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

__all__ = ["ExperimentReport", "sanitize", "summarize", "fit_slope"]


def sanitize(obj):
    """JSON-safe copy: numpy scalars become Python numbers, non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return sanitize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def summarize(values) -> dict:
    """Mean and standard error over the finite entries."""
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=float)
    n = v.size
    if n == 0:
        return {"mean": math.nan, "se": math.nan, "n": 0}
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    return {"mean": float(v.mean()), "se": se, "n": int(n)}


def fit_slope(x, samples: np.ndarray, n_boot: int = 1000, seed: int = 0) -> dict:
    """Least-squares slope of log(mean) against log(x).

    ``samples`` has shape (M, len(x)); the confidence interval resamples whole
    rows so the correlation induced by shared Wiener paths is respected.
    """
    x = np.asarray(x, dtype=float)
    samples = np.asarray(samples, dtype=float)
    means = samples.mean(axis=0)
    if samples.size == 0 or np.any(~np.isfinite(means)) or np.any(means <= 0):
        return {"slope": None, "intercept": None, "ci95": None, "degenerate": True}
    lx = np.log(x)

    def slope_of(m):
        return np.polyfit(lx, np.log(m), 1)

    s, c = slope_of(means)
    rng = np.random.default_rng(seed)
    M = samples.shape[0]
    boot = []
    for _ in range(n_boot):
        m = samples[rng.integers(0, M, M)].mean(axis=0)
        if np.all(m > 0):
            boot.append(slope_of(m)[0])
    lo, hi = (np.percentile(boot, [2.5, 97.5]) if boot else (math.nan, math.nan))
    return {"slope": float(s), "intercept": float(c), "ci95": [float(lo), float(hi)], "degenerate": False}


@dataclass
class ExperimentReport:
    """Outcome of one experiment.

    ``runtime`` is kept out of ``report.json`` (it goes to ``timing.json``) so
    that the report file depends only on (config, seed).
    """

    kind: str
    config: dict
    config_hash: str
    master_seed: int
    sample_seeds: list
    levels: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    diagnostics: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    runtime: float = 0.0

    @property
    def passed(self) -> bool:
        return all(bool(c.get("pass", True)) for c in self.checks.values())

    def to_dict(self) -> dict:
        return sanitize(
            {
                "kind": self.kind,
                "config": self.config,
                "config_hash": self.config_hash,
                "master_seed": self.master_seed,
                "sample_seeds": self.sample_seeds,
                "levels": self.levels,
                "fits": self.fits,
                "checks": self.checks,
                "diagnostics": self.diagnostics,
                "extra": self.extra,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_rows(self) -> tuple[list, list]:
        keys: list[str] = []
        for lvl in self.levels:
            for k, v in lvl.items():
                if k not in keys and not isinstance(v, (dict, list)):
                    keys.append(k)
        rows = [[sanitize(lvl.get(k, "")) for k in keys] for lvl in self.levels]
        return keys, rows

    def write(self, outdir) -> dict:
        os.makedirs(outdir, exist_ok=True)
        paths = {
            "report": os.path.join(outdir, "report.json"),
            "summary": os.path.join(outdir, "summary.csv"),
            "timing": os.path.join(outdir, "timing.json"),
        }
        with open(paths["report"], "w") as fh:
            fh.write(self.to_json())
        keys, rows = self.csv_rows()
        with open(paths["summary"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            w.writerows(rows)
        with open(paths["timing"], "w") as fh:
            json.dump({"kind": self.kind, "runtime_seconds": self.runtime}, fh, indent=2)
        return paths

    def table(self) -> str:
        keys, rows = self.csv_rows()
        if not keys:
            return ""

        def fmt(v):
            return f"{v:.4g}" if isinstance(v, float) else str(v)

        cells = [keys] + [[fmt(v) for v in r] for r in rows]
        widths = [max(len(r[i]) for r in cells) for i in range(len(keys))]
        return "\n".join("  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells)
