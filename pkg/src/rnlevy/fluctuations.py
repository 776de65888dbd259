"""Fluctuation statistics per partition level, calm diagnostic, clustering.

The fluctuation of one interval is y = sqrt(p_right / p_left) - 1 with tilt
weight w = p_left; every level statistic is a sum over intervals of the
cross-path average of w * f(y). In single-path mode the same formulas run
on the one realized path (flagged, since nothing is being averaged).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import SinglePathTiltWarning
from .market_data import DensityPanel

__all__ = [
    "DEFAULT_EPS_GRID",
    "DEFAULT_TAU_GRID",
    "CORE_FACTOR",
    "FluctuationArray",
    "LevelStats",
    "CalmVerdict",
    "Cluster",
    "ClusterSet",
    "compute_fluctuations",
    "calm_diagnostic",
    "cluster_detect",
    "triple_distance",
]

DEFAULT_EPS_GRID = (0.005, 0.01, 0.02, 0.05)
DEFAULT_TAU_GRID = (0.01, 0.02, 0.05)
# The atom/diffuse split sits a bit outside the smallest truncation level so
# that finite-sample leakage of the diffuse part is absorbed, not atomised.
CORE_FACTOR = 1.5
DEFAULT_BIN_WIDTH = 0.0025
DEFAULT_BIN_RANGE = (-0.8, 0.8)


@dataclass(frozen=True)
class FluctuationArray:
    """Raw per-path, per-interval fluctuations and their tilt weights."""

    level_index: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    single_path: bool = False

    def __post_init__(self):
        assert np.all(self.y > -1.0), "fluctuations must stay above -1"


@dataclass(frozen=True)
class LevelStats:
    """Aggregated tilted statistics of one level.

    ``hist_mass`` holds the increments of the signed y**2-weighted histogram
    H(y) = sum_j E_tilt[Y^2 I(Y <= y)]; ``hist_ynum`` its y-weighted numerator
    (for bin centroids). ``rows`` carries per-path sums for the bootstrap.
    """

    k: int
    mesh: float
    n_paths: int
    s1: float
    s2: float
    max_term: float
    tau_grid: np.ndarray
    s2_trunc: np.ndarray
    eps_grid: np.ndarray
    tail: np.ndarray
    split: float
    s2_core: float
    hist_edges: np.ndarray = field(repr=False)
    hist_mass: np.ndarray = field(repr=False)
    hist_ynum: np.ndarray = field(repr=False)
    m1_per_interval: np.ndarray = field(repr=False)
    m2_per_interval: np.ndarray = field(repr=False)
    m2_sq_per_interval: np.ndarray = field(repr=False)
    rows: dict = field(repr=False)
    single_path: bool = False

    @property
    def b_check(self) -> float:
        """Finite upper bound witness for the summed squared fluctuations."""
        return self.s2

    def tail_at(self, eps: float) -> float:
        i = int(np.argmin(np.abs(self.eps_grid - eps)))
        if abs(float(self.eps_grid[i]) - eps) > 1e-12:
            raise KeyError(f"eps {eps} not in the evaluated grid")
        return float(self.tail[i])

    def trunc_at(self, tau: float) -> float:
        i = int(np.argmin(np.abs(self.tau_grid - tau)))
        if abs(float(self.tau_grid[i]) - tau) > 1e-12:
            raise KeyError(f"tau {tau} not in the evaluated grid")
        return float(self.s2_trunc[i])


def compute_fluctuations(
    dp: DensityPanel,
    level,
    tau_grid=DEFAULT_TAU_GRID,
    eps_grid=DEFAULT_EPS_GRID,
    *,
    bin_width: float = DEFAULT_BIN_WIDTH,
    bin_range=DEFAULT_BIN_RANGE,
    split: float | None = None,
    return_arrays: bool = True,
):
    """Evaluate one ladder level; returns (FluctuationArray | None, LevelStats).

    ``level`` is an index array into the density grid. The truncation grid is
    evaluated exactly (no interpolation) at the requested taus plus the
    atom/diffuse split point.
    """
    idx = np.asarray(level, dtype=np.int64)
    p = dp.values
    single = p.shape[0] == 1
    if single:
        warnings.warn(
            "single-path panel: tilted expectations are realized sums",
            SinglePathTiltWarning,
            stacklevel=2,
        )
    if split is None:
        split = CORE_FACTOR * float(min(tau_grid))
    taus = np.unique(np.concatenate([np.asarray(tau_grid, float), [split]]))
    eps = np.asarray(sorted(eps_grid), dtype=np.float64)
    lo, hi = bin_range
    edges = np.arange(lo, hi + bin_width / 2, bin_width, dtype=np.float64)

    m1, m2, m2_sq, trunc, tails, hist_mass, hist_ynum = _kernels.interval_stats(
        p, idx, taus, eps, edges
    )
    rows = _kernels.path_rows(p, idx, split)
    mesh = float(np.max(np.diff(dp.grid[idx])))
    split_pos = int(np.searchsorted(taus, split))
    stats = LevelStats(
        k=int(idx.size - 1),
        mesh=mesh,
        n_paths=p.shape[0],
        s1=float(m1.sum()),
        s2=float(m2.sum()),
        max_term=float(m2.max()),
        tau_grid=taus,
        s2_trunc=trunc.sum(axis=1),
        eps_grid=eps,
        tail=tails.sum(axis=1),
        split=float(split),
        s2_core=float(trunc.sum(axis=1)[split_pos]),
        hist_edges=edges,
        hist_mass=hist_mass,
        hist_ynum=hist_ynum,
        m1_per_interval=m1,
        m2_per_interval=m2,
        m2_sq_per_interval=m2_sq,
        rows={
            "s1": rows[0],
            "s2": rows[1],
            "s2_core": rows[2],
            "tail_mass": rows[3],
            "tail_y4": rows[4],
        },
        single_path=single,
    )
    arr = None
    if return_arrays:
        pl = p[:, idx[:-1]]
        y = np.sqrt(p[:, idx[1:]] / pl) - 1.0
        arr = FluctuationArray(level_index=idx, y=y, w=pl, single_path=single)
    return arr, stats


@dataclass(frozen=True)
class CalmVerdict:
    """Outcome of the vanishing-tail diagnostic across refinement levels."""

    verdict: str  # calm | not-calm | inconclusive
    threshold: float
    eps_used: tuple[float, ...]
    eps_unresolved: tuple[float, ...]
    trajectories: dict  # eps -> list of tail values, coarse to fine
    meshes: tuple[float, ...]


def calm_diagnostic(
    stats_by_level,
    eps_grid=None,
    threshold: float | None = None,
    *,
    threshold_frac: float = 0.02,
    resolution_factor: float = 3.2,
    stabilize_ratio: float = 0.5,
    monotone_slack: float = 0.25,
) -> CalmVerdict:
    """Classify the panel as calm / not-calm / inconclusive.

    calm: every resolvable epsilon has a (weakly) decreasing tail trajectory
    ending below the threshold at the finest level. not-calm: some tail has
    stabilized above the threshold. Anything else is inconclusive.

    An epsilon below ``resolution_factor * sqrt(S2/k)`` at the finest level
    cannot be separated from the diffuse part at this mesh and is excluded
    from the verdict (reported in ``eps_unresolved``).
    """
    stats = sorted(stats_by_level, key=lambda s: -s.mesh)
    if len(stats) < 2:
        raise ValueError("calm diagnostic needs at least 2 levels")
    finest = stats[-1]
    if eps_grid is None:
        eps_grid = [float(e) for e in finest.eps_grid]
    if threshold is None:
        threshold = max(threshold_frac * finest.s2, 1e-12)

    scale = np.sqrt(max(finest.s2, 0.0) / max(finest.k, 1))
    eps_used, eps_unresolved = [], []
    for e in eps_grid:
        (eps_used if e >= resolution_factor * scale else eps_unresolved).append(float(e))

    trajectories = {
        float(e): [s.tail_at(e) for s in stats] for e in eps_grid
    }
    all_below, any_stable, all_monotone = True, False, True
    for e in eps_used:
        traj = trajectories[e]
        final, prev = traj[-1], traj[-2]
        if final >= threshold:
            all_below = False
            if final > stabilize_ratio * prev:
                any_stable = True
        for a, b in zip(traj, traj[1:]):
            if b > a * (1.0 + monotone_slack) + 1e-12:
                all_monotone = False
    if not eps_used:
        verdict = "inconclusive"
    elif any_stable:
        verdict = "not-calm"
    elif all_below and all_monotone:
        verdict = "calm"
    else:
        verdict = "inconclusive"
    return CalmVerdict(
        verdict=verdict,
        threshold=float(threshold),
        eps_used=tuple(eps_used),
        eps_unresolved=tuple(eps_unresolved),
        trajectories=trajectories,
        meshes=tuple(s.mesh for s in stats),
    )


@dataclass(frozen=True)
class Cluster:
    triple: object  # LevyTripleEstimate of the first member
    weight: float
    members: tuple[int, ...]


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[Cluster, ...]
    tolerance: float

    def __post_init__(self):
        total = sum(c.weight for c in self.clusters)
        assert abs(total - 1.0) < 1e-9, "cluster weights must sum to 1"


def _atom_cdf_distance(atoms_a, atoms_b) -> float:
    """Kolmogorov distance between the normalized atom-mass distributions."""
    wa = sum(w for _, w in atoms_a)
    wb = sum(w for _, w in atoms_b)
    if wa == 0 and wb == 0:
        return 0.0
    if wa == 0 or wb == 0:
        return 1.0
    ys = np.array(sorted({y for y, _ in atoms_a} | {y for y, _ in atoms_b}))
    ca = np.array([sum(w for y, w in atoms_a if y <= yy) for yy in ys]) / wa
    cb = np.array([sum(w for y, w in atoms_b if y <= yy) for yy in ys]) / wb
    return float(np.max(np.abs(ca - cb)))


def triple_distance(a, b) -> float:
    """Scale-comparable metric: max of drift gap, variance gap, atom KS."""
    return max(
        abs(a.mu1 - b.mu1),
        abs(a.sigma1_sq - b.sigma1_sq),
        _atom_cdf_distance(a.atoms, b.atoms),
    )


def cluster_detect(triples, tol: float) -> ClusterSet:
    """Single-linkage grouping of per-subsequence triple estimates.

    Cluster weights default to equal (a documented provisional choice).
    """
    n = len(triples)
    if n == 0:
        raise ValueError("need at least one triple")
    groups = [[i] for i in range(n)]
    merged = True
    while merged and len(groups) > 1:
        merged = False
        for gi in range(len(groups)):
            for gj in range(gi + 1, len(groups)):
                d = min(
                    triple_distance(triples[i], triples[j])
                    for i in groups[gi]
                    for j in groups[gj]
                )
                if d <= tol:
                    groups[gi] += groups[gj]
                    del groups[gj]
                    merged = True
                    break
            if merged:
                break
    w = 1.0 / len(groups)
    clusters = tuple(
        Cluster(triple=triples[g[0]], weight=w, members=tuple(sorted(g))) for g in groups
    )
    return ClusterSet(clusters=clusters, tolerance=float(tol))
