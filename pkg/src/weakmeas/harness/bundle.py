"""Experiment specification and result bundles (JSON summary + CSV tables)."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

EXPERIMENTS = ("rates", "simulate", "verify-theorem1", "verify-jump-rates", "verify-fdd",
               "verify-purification", "verify-bounds", "verify-properties")

# default knobs; every bundle records the values it used
DEFAULT_TOLERANCES = {
    "mc_hs_floor": 5e-3,
    "rate_rel": 0.25,
    "fdd_tv": 0.1,
    "purification_band": 2.0,
    "theorem1_ratio_lo": 0.25,
    "theorem1_ratio_hi": 0.85,
    "qeps_ratio_lo": 0.3,
    "qeps_ratio_hi": 0.7,
    "contraction": 1e-9,
    "dissipative": 1e-10,
    "rate_nonneg": 1e-12,
    "rate_rowsum": 1e-10,
    "trace": 1e-10,
    "psd": 1e-8,
}

_DEFAULTS = {
    # experiment: (eps list, horizon, trajectories, rho0)
    "rates": ((0.2, 0.1, 0.05, 0.025), 1.0, 1, "P0"),
    "simulate": ((0.05,), 1.0, 20, "plus"),
    "verify-theorem1": ((0.2, 0.1, 0.05), 1.0, 1, "P0"),
    "verify-jump-rates": ((0.05,), 1.0, 500, "plus"),
    "verify-fdd": ((0.05,), 1.0, 2000, "plus"),
    "verify-purification": ((0.1, 0.05, 0.025), 0.5, 1000, "plus"),
    "verify-bounds": ((0.01,), 1.0, 10000, "P0"),
    "verify-properties": ((0.1,), 2.0, 200000, "plus"),
}


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str
    model: str | None = None  # TOML path; None = reference qubit model
    eps: tuple | None = None
    alpha: float | None = None
    horizon: float | None = None  # in rescaled time s (raw time eps^-2 s)
    traj: int | None = None
    snapshots: tuple = ()
    seed: int = 0
    out: str | None = None
    mode: str = "physical"
    strict_alpha: bool = False
    rho0: str | None = None
    window: float | None = None  # raw window length override (needed at eps = 0)
    tolerances: dict = field(default_factory=dict)

    def resolved(self) -> "ExperimentSpec":
        if self.experiment not in EXPERIMENTS:
            raise SpecError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        eps, hor, traj, rho0 = _DEFAULTS[self.experiment]
        spec = replace(self,
                       eps=tuple(float(e) for e in (self.eps if self.eps is not None else eps)),
                       horizon=float(self.horizon if self.horizon is not None else hor),
                       traj=int(self.traj if self.traj is not None else traj),
                       rho0=self.rho0 or rho0,
                       snapshots=tuple(float(t) for t in self.snapshots),
                       tolerances={**DEFAULT_TOLERANCES, **self.tolerances})
        if spec.traj < 1:
            raise SpecError(f"trajectory count must be >= 1, got {spec.traj}")
        if not spec.horizon > 0:
            raise SpecError(f"horizon must be > 0, got {spec.horizon}")
        if any(e < 0 for e in spec.eps):
            raise SpecError("epsilon values must be >= 0")
        if spec.mode not in ("physical", "apriori"):
            raise SpecError(f"mode must be physical or apriori, got {spec.mode!r}")
        return spec

    def as_dict(self) -> dict:
        return asdict(self)


def _clean(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


COMPARISONS: dict[str, Callable] = {
    "<": lambda v, t: v < t,
    ">": lambda v, t: v > t,
    "<=": lambda v, t: v <= t,
    ">=": lambda v, t: v >= t,
    "in": lambda v, t: t[0] <= v <= t[1],
    "report": lambda v, t: True,
}


@dataclass
class ResultBundle:
    experiment: str
    parameters: dict
    metrics: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)  # name -> CSV text
    info: dict = field(default_factory=dict)

    def add(self, name: str, value, tolerance, comparison: str = "<=", gating: bool = True, **extra) -> bool:
        ok = bool(COMPARISONS[comparison](value, tolerance))
        self.metrics.append({"name": name, "value": value, "tolerance": tolerance, "comparison": comparison,
                             "pass": ok, "gating": gating and comparison != "report", **extra})
        return ok

    def report(self, name: str, value, **extra) -> None:
        self.add(name, value, None, "report", gating=False, **extra)

    @property
    def passed(self) -> bool:
        return all(m["pass"] for m in self.metrics if m["gating"])

    def failures(self) -> list:
        return [m for m in self.metrics if m["gating"] and not m["pass"]]

    def summary(self) -> dict:
        return _clean({"experiment": self.experiment, "parameters": self.parameters, "passed": self.passed,
                       "metrics": self.metrics, "info": self.info, "tables": sorted(self.tables)})

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    def write(self, out: str | os.PathLike) -> list[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{self.experiment}.json"]
        paths[0].write_text(self.to_json())
        for name, text in sorted(self.tables.items()):
            p = out / f"{self.experiment}-{name}.csv"
            p.write_text(text)
            paths.append(p)
        return paths


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("WEAKMEAS_THREADS", "1")))
    except ValueError:
        return 1


def pool_map(fn: Callable, items: Iterable) -> list:
    """Ordered map over a thread pool capped by WEAKMEAS_THREADS (serial by default)."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))
