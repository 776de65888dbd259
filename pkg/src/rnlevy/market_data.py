"""Price ingestion, mean-relative densities, partition ladders, discounting.

The CSV schema is ``path_id,time,price`` (exact header, UTF-8), one row per
observation, times in year fractions. Ensemble panels hold many paths on a
shared grid; single-path panels hold exactly one.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import (
    CoverageGap,
    DegenerateFit,
    GridMismatch,
    InsufficientGrid,
    MalformedInput,
    PositivityViolation,
)

__all__ = [
    "PricePath",
    "PricePanel",
    "MeanFunction",
    "DensityPanel",
    "PartitionLadder",
    "RateCurve",
    "ingest_panel",
    "write_panel_csv",
    "estimate_mean_function",
    "prices_densities",
    "build_ladder",
    "discount_factor",
]

CSV_HEADER = "path_id,time,price"


def _as_readonly(a, dtype=np.float64):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PricePath:
    """One observed path: strictly increasing times, strictly positive prices."""

    path_id: str
    times: np.ndarray = field(repr=False)
    prices: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "times", _as_readonly(self.times))
        object.__setattr__(self, "prices", _as_readonly(self.prices))
        if self.times.ndim != 1 or self.times.shape != self.prices.shape:
            raise MalformedInput(f"path {self.path_id}: times/prices shape mismatch")
        if self.times.size < 2:
            raise MalformedInput(f"path {self.path_id}: needs at least 2 observations")
        if not np.all(np.isfinite(self.times)) or not np.all(np.isfinite(self.prices)):
            raise MalformedInput(f"path {self.path_id}: non-finite values")
        if np.any(np.diff(self.times) <= 0):
            raise MalformedInput(f"path {self.path_id}: times not strictly increasing")
        if np.any(self.prices <= 0):
            raise PositivityViolation(f"path {self.path_id}: non-positive price")


@dataclass(frozen=True)
class PricePanel:
    """A set of paths plus the sampling mode ('ensemble' or 'single-path')."""

    paths: tuple[PricePath, ...]
    mode: str
    grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "grid", _as_readonly(self.grid))
        if self.mode not in ("ensemble", "single-path"):
            raise MalformedInput(f"unknown panel mode {self.mode!r}")
        if not self.paths:
            raise MalformedInput("panel has no paths")
        if self.mode == "single-path" and len(self.paths) != 1:
            raise MalformedInput("single-path mode requires exactly one path")
        for p in self.paths:
            if p.times.shape != self.grid.shape or not np.array_equal(p.times, self.grid):
                raise GridMismatch(f"path {p.path_id} is not on the panel grid")

    @classmethod
    def from_matrix(cls, grid, prices, mode="ensemble", ids=None):
        prices = np.asarray(prices, dtype=np.float64)
        if prices.ndim != 2:
            raise MalformedInput("prices matrix must be 2-d (paths x times)")
        if ids is None:
            ids = [f"p{i:05d}" for i in range(prices.shape[0])]
        paths = tuple(PricePath(str(pid), grid, row) for pid, row in zip(ids, prices))
        return cls(paths=paths, mode=mode, grid=np.asarray(grid, dtype=np.float64))

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def matrix(self) -> np.ndarray:
        return np.vstack([p.prices for p in self.paths])

    @property
    def horizon(self) -> float:
        return float(self.grid[-1] - self.grid[0])


@dataclass(frozen=True)
class MeanFunction:
    """Positive mean-price curve m(t) on the panel horizon.

    ``empirical-ensemble`` interpolates the cross-path arithmetic means;
    ``exponential-trend`` is exp(a + b t) fitted to log prices (a single-path
    heuristic, flagged downstream).
    """

    source: str
    times: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    coeffs: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", _as_readonly(self.times))
        object.__setattr__(self, "values", _as_readonly(self.values))
        if np.any(self.values <= 0):
            raise PositivityViolation("mean function not strictly positive")

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.source == "exponential-trend":
            a, b = self.coeffs
            out = np.exp(a + b * t)
        else:
            out = np.interp(t, self.times, self.values)
        return out if out.ndim else float(out)

    @property
    def horizon(self) -> tuple[float, float]:
        return float(self.times[0]), float(self.times[-1])


@dataclass(frozen=True)
class DensityPanel:
    """Per-path mean-relative prices p = S / m(t), all strictly positive."""

    grid: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    mean_fn: MeanFunction
    mode: str

    def __post_init__(self):
        object.__setattr__(self, "grid", _as_readonly(self.grid))
        object.__setattr__(self, "values", _as_readonly(self.values))
        if np.any(self.values <= 0):
            raise PositivityViolation("density panel has non-positive entries")

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.grid[-1] - self.grid[0])

    @property
    def ln_a(self) -> float:
        """log of mean-price growth over the horizon, ln(m(T)/m(t0))."""
        return float(np.log(self.mean_fn(self.grid[-1]) / self.mean_fn(self.grid[0])))


@dataclass(frozen=True)
class PartitionLadder:
    """Nested partition levels (grid indices), ordered coarse to fine."""

    grid: np.ndarray = field(repr=False)
    levels: tuple[np.ndarray, ...]
    scheme: str

    def __post_init__(self):
        object.__setattr__(self, "grid", _as_readonly(self.grid))
        levels = tuple(_as_readonly(lv, dtype=np.int64) for lv in self.levels)
        object.__setattr__(self, "levels", levels)
        n = self.grid.size
        prev_mesh = math.inf
        for lv in levels:
            if lv[0] != 0 or lv[-1] != n - 1:
                raise InsufficientGrid("level endpoints must be the grid endpoints")
            if np.any(np.diff(lv) <= 0):
                raise InsufficientGrid("level indices must be strictly increasing")
            mesh = self.mesh_of(lv)
            if mesh > prev_mesh + 1e-12:
                raise InsufficientGrid("levels must have non-increasing mesh")
            prev_mesh = mesh

    def mesh_of(self, level) -> float:
        return float(np.max(np.diff(self.grid[level])))

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def mesh(self, i: int) -> float:
        return self.mesh_of(self.levels[i])

    def k(self, i: int) -> int:
        return int(self.levels[i].size - 1)

    @classmethod
    def from_counts(cls, grid, counts, scheme="dyadic"):
        """Explicit interval counts, e.g. [64, 256, 1024]; each must divide
        the grid's interval count and the next count (nesting)."""
        grid = np.asarray(grid, dtype=np.float64)
        n_int = grid.size - 1
        counts = [int(c) for c in counts]
        levels = []
        prev = None
        for c in counts:
            if c < 1 or c > n_int or n_int % c:
                raise InsufficientGrid(f"grid with {n_int} intervals cannot host k={c}")
            if prev is not None and c % prev:
                raise InsufficientGrid(f"counts {prev} -> {c} are not nested")
            levels.append(np.arange(0, n_int + 1, n_int // c, dtype=np.int64))
            prev = c
        return cls(grid=grid, levels=tuple(levels), scheme=scheme)

    def thin(self, i: int, phase: int = 0) -> np.ndarray:
        """Drop alternate points of level i (endpoints kept); mesh doubles.

        phase 0 keeps even-position points, phase 1 keeps odd positions.
        """
        lv = self.levels[i]
        if phase == 0:
            keep = lv[::2]
        else:
            keep = lv[1::2]
            keep = np.concatenate(([lv[0]], keep))
        if keep[-1] != lv[-1]:
            keep = np.concatenate((keep, [lv[-1]]))
        return keep.astype(np.int64)


@dataclass(frozen=True)
class RateCurve:
    """Piecewise-constant short rate on [t0, T]; segments (lo, hi, r)."""

    segments: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        segs = tuple((float(a), float(b), float(r)) for a, b, r in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise MalformedInput("rate curve needs at least one segment")
        for a, b, r in segs:
            if not (math.isfinite(r) and b > a):
                raise MalformedInput("rate segment must be finite with hi > lo")
        for (a0, b0, _), (a1, _, _) in zip(segs, segs[1:]):
            if abs(b0 - a1) > 1e-12:
                raise CoverageGap("rate segments must partition the horizon")

    @classmethod
    def constant(cls, r, t0=0.0, T=1.0):
        return cls(segments=((t0, T, r),))

    @property
    def span(self) -> tuple[float, float]:
        return self.segments[0][0], self.segments[-1][1]


def discount_factor(rc: RateCurve, t: float, T: float) -> float:
    """Bond accumulation factor exp(integral of r over [t, T])."""
    if T < t:
        raise CoverageGap("need t <= T")
    lo, hi = rc.span
    if t < lo - 1e-12 or T > hi + 1e-12:
        raise CoverageGap(f"[{t}, {T}] outside rate coverage [{lo}, {hi}]")
    acc = 0.0
    for a, b, r in rc.segments:
        acc += r * max(0.0, min(T, b) - max(t, a))
    return math.exp(acc)


def ingest_panel(source, mode: str = "ensemble") -> PricePanel:
    """Parse the CSV schema into a validated panel.

    ``source`` may be a filesystem path, bytes, or a binary file object.
    """
    if isinstance(source, (bytes, bytearray)):
        buf = io.BytesIO(bytes(source))
    elif isinstance(source, (str, os.PathLike)):
        if not os.path.exists(source):
            raise MalformedInput(f"input file not found: {source}")
        buf = open(source, "rb")
    else:
        buf = source
    try:
        header = buf.readline().decode("utf-8").strip()
        if header != CSV_HEADER:
            raise MalformedInput(f"expected header {CSV_HEADER!r}, got {header!r}")
        try:
            df = pd.read_csv(
                buf,
                names=["path_id", "time", "price"],
                dtype={"path_id": str, "time": np.float64, "price": np.float64},
            )
        except (ValueError, pd.errors.ParserError) as exc:
            raise MalformedInput(f"cannot parse CSV body: {exc}") from None
    finally:
        if isinstance(source, (str, os.PathLike)):
            buf.close()
    if df.isna().any().any():
        raise MalformedInput("CSV contains missing values")
    if len(df) == 0:
        raise MalformedInput("CSV contains no observations")
    if (df["price"] <= 0).any():
        bad = df.loc[df["price"] <= 0].iloc[0]
        raise PositivityViolation(
            f"non-positive price {bad['price']} for path {bad['path_id']} at t={bad['time']}"
        )

    ids = df["path_id"].to_numpy()
    first_seen = pd.unique(ids)
    groups = {pid: g for pid, g in df.groupby("path_id", sort=False)}
    paths = []
    for pid in first_seen:
        g = groups[pid]
        paths.append(PricePath(str(pid), g["time"].to_numpy(), g["price"].to_numpy()))
    grid = paths[0].times
    if mode == "ensemble":
        for p in paths[1:]:
            if p.times.shape != grid.shape or not np.array_equal(p.times, grid):
                raise GridMismatch(f"path {p.path_id} not on the common grid")
    return PricePanel(paths=tuple(paths), mode=mode, grid=grid)


def write_panel_csv(panel: PricePanel, path) -> None:
    """Export a panel back to the ingestion schema (round-trip safe)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for p in panel.paths:
            for t, s in zip(p.times, p.prices):
                fh.write(f"{p.path_id},{t!r},{s!r}\n")


def estimate_mean_function(panel: PricePanel, method: str = "empirical-ensemble") -> MeanFunction:
    """Fit m(t): cross-path mean per grid time, or a log-linear trend."""
    if method == "empirical-ensemble":
        values = panel.matrix.mean(axis=0)
        return MeanFunction(source=method, times=panel.grid, values=values)
    if method == "exponential-trend":
        t = np.concatenate([p.times for p in panel.paths])
        ln_s = np.log(np.concatenate([p.prices for p in panel.paths]))
        if np.unique(t).size < 2:
            raise DegenerateFit("trend fit needs at least two distinct times")
        design = np.column_stack([np.ones_like(t), t])
        coef, _, rank, _ = np.linalg.lstsq(design, ln_s, rcond=None)
        if rank < 2:
            raise DegenerateFit("trend design matrix is singular")
        a, b = float(coef[0]), float(coef[1])
        values = np.exp(a + b * panel.grid)
        return MeanFunction(source=method, times=panel.grid, values=values, coeffs=(a, b))
    raise MalformedInput(f"unknown mean method {method!r}")


def prices_densities(panel: PricePanel, m: MeanFunction) -> DensityPanel:
    """Divide prices by m(t) pointwise; ensemble cross-means come out at 1."""
    mv = np.asarray(m(panel.grid), dtype=np.float64)
    if np.any(mv <= 0):
        raise PositivityViolation("mean function non-positive on the grid")
    values = panel.matrix / mv
    return DensityPanel(grid=panel.grid, values=values, mean_fn=m, mode=panel.mode)


def build_ladder(grid, n_levels: int, scheme: str = "dyadic") -> PartitionLadder:
    """Nested levels with halving mesh.

    ``dyadic`` doubles the interval count per level starting from a single
    interval; ``thin-odd`` / ``thin-even`` start from the full grid and
    repeatedly drop alternate points (the subsequences used for cluster
    detection), returned coarse to fine.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size < 2:
        raise InsufficientGrid("grid needs at least 2 points")
    n_int = grid.size - 1
    if n_levels < 1:
        raise InsufficientGrid("need at least one level")
    if scheme == "dyadic":
        counts = [2**j for j in range(n_levels)]
        if counts[-1] > n_int:
            raise InsufficientGrid(
                f"{n_levels} dyadic levels need >= {counts[-1]} grid intervals, have {n_int}"
            )
        for c in counts:
            if n_int % c:
                raise InsufficientGrid(f"grid interval count {n_int} not divisible by {c}")
        return PartitionLadder.from_counts(grid, counts, scheme=scheme)
    if scheme in ("thin-odd", "thin-even"):
        phase = 1 if scheme == "thin-odd" else 0
        lv = np.arange(n_int + 1, dtype=np.int64)
        fine_to_coarse = [lv]
        tmp = PartitionLadder(grid=grid, levels=(lv,), scheme=scheme)
        for _ in range(n_levels - 1):
            lv = tmp.thin(0, phase=phase)
            if lv.size < 2 or lv.size == fine_to_coarse[-1].size:
                raise InsufficientGrid("grid exhausted while thinning")
            fine_to_coarse.append(lv)
            tmp = PartitionLadder(grid=grid, levels=(lv,), scheme=scheme)
        return PartitionLadder(grid=grid, levels=tuple(reversed(fine_to_coarse)), scheme=scheme)
    raise MalformedInput(f"unknown ladder scheme {scheme!r}")
