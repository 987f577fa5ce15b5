"""Variance-driven OSR allocation across layers and linear modules.

Allocation runs in two stages. Layers first receive
``target * s_L / mean_p(s)`` where ``s = var ** -gamma`` and ``mean_p`` is
the parameter-count-weighted mean; each layer's budget is then split across
its modules with the same rule. After each stage, any OSR outside the bounds
is clamped and the common scale of the free entries is solved so the weighted
average matches again.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import FormatError, NumericError
from .tensor_io import load_float


@dataclass(frozen=True, order=True)
class ModuleStat:
    layer_index: int
    name: str
    param_count: int = field(compare=False)
    variance: float = field(compare=False)
    cols: int | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.param_count < 1:
            raise ValueError(f"{self.key}: param_count must be >= 1")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"{self.key}: variance must be finite and > 0 (got {self.variance})")

    @property
    def key(self) -> str:
        return f"{self.layer_index}.{self.name}"


@dataclass(frozen=True)
class OsrPlan:
    osr: dict[str, float]
    target: float
    achieved_average: float
    osr_min: float
    osr_max: float
    layer_osr: dict[int, float] = field(default_factory=dict)
    widths: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "target": self.target,
            "achieved_average": self.achieved_average,
            "osr_min": self.osr_min,
            "osr_max": self.osr_max,
            "layers": {str(k): v for k, v in self.layer_osr.items()},
            "modules": self.osr,
            "widths": self.widths,
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "OsrPlan":
        try:
            d = json.loads(text)
            return cls(osr={str(k): float(v) for k, v in d["modules"].items()}, target=float(d["target"]),
                       achieved_average=float(d["achieved_average"]), osr_min=float(d["osr_min"]),
                       osr_max=float(d["osr_max"]),
                       layer_osr={int(k): float(v) for k, v in d.get("layers", {}).items()},
                       widths={str(k): int(v) for k, v in d.get("widths", {}).items()})
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed plan: {exc}") from None


def proportional(sizes: np.ndarray, sens: np.ndarray, target: float) -> np.ndarray:
    """Unclamped ``target * s / weighted_mean(s)``."""
    return target * sens * sizes.sum() / np.dot(sizes, sens)


def water_fill(sizes: np.ndarray, raw: np.ndarray, target: float, lo: float, hi: float) -> np.ndarray:
    """Clamp ``raw`` into ``[lo, hi]`` while keeping the size-weighted mean at ``target``."""
    sizes = np.asarray(sizes, dtype=np.float64)
    total = sizes.sum()
    if not lo - 1e-12 <= target <= hi + 1e-12:
        raise NumericError(f"target OSR {target} is infeasible; feasible interval is [{lo}, {hi}]")
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw <= 0):
        raise ValueError("raw allocations must be positive")

    def excess(c: float) -> float:
        return np.dot(sizes, np.clip(c * raw, lo, hi)) / total - target

    # the clamped average is monotone in the common scale c
    c_lo, c_hi = lo / raw.max(), hi / raw.min()
    if excess(c_lo) >= 0:
        c = c_lo
    elif excess(c_hi) <= 0:
        c = c_hi
    else:
        c = brentq(excess, c_lo, c_hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    osr = np.clip(c * raw, lo, hi)
    free = (osr > lo) & (osr < hi)
    if free.any():
        # remove the residual left by the root finder
        budget = target * total - np.dot(sizes[~free], osr[~free])
        osr[free] = np.clip(osr[free] * budget / np.dot(sizes[free], osr[free]), lo, hi)
    achieved = np.dot(sizes, osr) / total
    if abs(achieved - target) > 1e-9 * max(1.0, target):
        raise NumericError(f"could not meet target OSR {target} within [{lo}, {hi}] (reached {achieved})")
    return osr


def plan(stats: Sequence[ModuleStat], target_osr: float, osr_min: float = 1.0, osr_max: float = 8.0,
         gamma: float = 1.0) -> OsrPlan:
    if not stats:
        raise ValueError("no modules to plan")
    if osr_min < 1 or osr_max < osr_min:
        raise ValueError(f"bad OSR bounds [{osr_min}, {osr_max}]")
    if not osr_min <= target_osr <= osr_max:
        raise NumericError(f"target OSR {target_osr} is infeasible; feasible interval is [{osr_min}, {osr_max}]")
    stats = sorted(stats)
    keys = [m.key for m in stats]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate (layer_index, name) entries")

    layers = sorted({m.layer_index for m in stats})
    members = {L: [m for m in stats if m.layer_index == L] for L in layers}
    layer_size = np.array([sum(m.param_count for m in members[L]) for L in layers], dtype=np.float64)
    layer_var = np.array([sum(m.param_count * m.variance for m in members[L]) for L in layers]) / layer_size
    layer_raw = proportional(layer_size, layer_var ** -gamma, target_osr)
    layer_osr = water_fill(layer_size, layer_raw, target_osr, osr_min, osr_max)

    osr: dict[str, float] = {}
    for L, budget in zip(layers, layer_osr):
        mods = members[L]
        sizes = np.array([m.param_count for m in mods], dtype=np.float64)
        sens = np.array([m.variance for m in mods]) ** -gamma
        alloc = water_fill(sizes, proportional(sizes, sens, budget), budget, osr_min, osr_max)
        osr.update({m.key: float(v) for m, v in zip(mods, alloc)})

    sizes = np.array([m.param_count for m in stats], dtype=np.float64)
    achieved = float(np.dot(sizes, [osr[k] for k in keys]) / sizes.sum())
    widths = {m.key: int(round(osr[m.key] * m.cols)) for m in stats if m.cols is not None}
    return OsrPlan(osr=osr, target=float(target_osr), achieved_average=achieved, osr_min=osr_min,
                   osr_max=osr_max, layer_osr={L: float(v) for L, v in zip(layers, layer_osr)}, widths=widths)


# ---------------------------------------------------------------------- manifests


@dataclass(frozen=True)
class ManifestEntry:
    layer_index: int
    name: str
    path: Path
    calib: str | None = None

    @property
    def key(self) -> str:
        return f"{self.layer_index}.{self.name}"


def load_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    """Read a JSON manifest ``{"modules": [{"layer", "name", "path", ["calib"]}, ...]}``.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    try:
        doc = json.loads(path.read_text())
        entries = []
        for item in doc["modules"]:
            p = Path(item["path"])
            calib = item.get("calib")
            if calib is not None and not str(calib).startswith("synthetic:") and not Path(calib).is_absolute():
                calib = str(base / calib)
            entries.append(ManifestEntry(int(item["layer"]), str(item["name"]),
                                         p if p.is_absolute() else base / p, calib))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed manifest {path}: {exc}") from None
    if not entries:
        raise FormatError(f"manifest {path} lists no modules")
    return entries


def module_stat(entry: ManifestEntry) -> ModuleStat:
    w = load_float(entry.path)
    var = float(np.var(w))
    if var == 0:
        raise ValueError(f"module {entry.key} has zero weight variance")
    return ModuleStat(entry.layer_index, entry.name, int(w.size), var, cols=w.shape[1])


def collect_stats(entries: Iterable[ManifestEntry], *, threads: int | None = None) -> list[ModuleStat]:
    entries = list(entries)
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(module_stat, entries))
    else:
        stats = [module_stat(e) for e in entries]
    return sorted(stats)
