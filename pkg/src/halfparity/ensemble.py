"""Ensemble-level analytics over Monte Carlo trajectories.

Experimental-style most likely paths are extracted by ranking trajectories by
their total trace distance to the rest of the ensemble and averaging the most
central ones; with several collapse destinations the ensemble is first split
by the dominant population at the final time and the extraction runs per
branch.  Trace distances between X-states use the closed-form eigenvalues of
X-shaped matrices, so the all-pairs scan stays cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .bayes import Trajectory, simulate_ensemble
from .concurrence import concurrence_path
from .mlp import BRANCH_NAMES
from .model import MeasConfig, XState

# the bundled TBB is too old for numba and triggers a probe warning; prefer OpenMP
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


class GridMismatchError(ValueError):
    """Trajectories do not share the same time grid."""


@dataclass
class Ensemble:
    """Stack of trajectories sharing one time grid and configuration."""

    times: np.ndarray
    states: np.ndarray            # (n_traj, n_points, 5)
    readouts: np.ndarray          # (n_traj, n_points - 1)
    concurrences: np.ndarray      # (n_traj, n_points)
    seed: int | None = None
    stream_offset: int = 0

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(times=self.times, readouts=self.readouts[i],
                          states=self.states[i], concurrences=self.concurrences[i])

    @classmethod
    def from_trajectories(cls, trajs, seed: int | None = None) -> "Ensemble":
        trajs = list(trajs)
        if not trajs:
            raise ValueError("cannot build an ensemble from zero trajectories")
        times = trajs[0].times
        for t in trajs[1:]:
            if t.times.shape != times.shape or not np.array_equal(t.times, times):
                raise GridMismatchError("trajectories use different time grids")
        return cls(times=times,
                   states=np.stack([t.states for t in trajs]),
                   readouts=np.stack([t.readouts for t in trajs]),
                   concurrences=np.stack([t.concurrences for t in trajs]),
                   seed=seed)


def generate_ensemble(x0: XState, cfg: MeasConfig, n_traj: int, seed: int,
                      workers: int = 1, stream_offset: int = 0) -> Ensemble:
    """Simulate n_traj trajectories with per-trajectory random streams."""
    raw = simulate_ensemble(x0, cfg, n_traj, seed, workers=workers,
                            stream_offset=stream_offset)
    return Ensemble(times=raw.times, states=raw.states, readouts=raw.readouts,
                    concurrences=concurrence_path(raw.states),
                    seed=seed, stream_offset=stream_offset)


# --- trace distance ----------------------------------------------------------

def _pack(states: np.ndarray) -> np.ndarray:
    """Recombination used by the closed-form trace norm of an X-matrix difference.

    Eigenvalues of the difference are d1, d4 and m +- r with m the mean odd
    population difference and r = sqrt(q^2 + e^2) from the odd 2x2 block, so
    |m + r| + |m - r| = 2 max(|m|, r).
    """
    out = np.empty(states.shape[:-1] + (5,))
    out[..., 0] = states[..., 0]
    out[..., 1] = states[..., 3]
    out[..., 2] = 0.5 * (states[..., 1] + states[..., 2])
    out[..., 3] = 0.5 * (states[..., 1] - states[..., 2])
    out[..., 4] = states[..., 4]
    return out


def _trace_norms(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    d1 = np.abs(pa[..., 0] - pb[..., 0])
    d4 = np.abs(pa[..., 1] - pb[..., 1])
    m = np.abs(pa[..., 2] - pb[..., 2])
    r = np.hypot(pa[..., 3] - pb[..., 3], pa[..., 4] - pb[..., 4])
    return d1 + d4 + 2.0 * np.maximum(m, r)


def _time_weights(times: np.ndarray) -> np.ndarray:
    """Trapezoid weights scaled by 1/(2T): constant orthogonal states give 1."""
    span = times[-1] - times[0]
    w = np.empty(times.size)
    w[1:-1] = 0.5 * (times[2:] - times[:-2])
    w[0] = 0.5 * (times[1] - times[0])
    w[-1] = 0.5 * (times[-1] - times[-2])
    return w / (2.0 * span)


def trace_distance(a: Trajectory, b: Trajectory) -> float:
    """Time-averaged trace distance between two trajectories, in [0, 1]."""
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise GridMismatchError("trajectories use different time grids")
    tn = _trace_norms(_pack(a.states), _pack(b.states))
    return float(_time_weights(a.times) @ tn)


@numba.njit(parallel=True, cache=True)
def _total_distance_rows(pack, w):  # pragma: no cover - exercised via wrapper
    m, nt = pack.shape[0], pack.shape[1]
    out = np.zeros(m)
    for i in numba.prange(m):
        acc = 0.0
        for j in range(m):
            if j == i:
                continue
            d = 0.0
            for k in range(nt):
                d1 = abs(pack[i, k, 0] - pack[j, k, 0])
                d4 = abs(pack[i, k, 1] - pack[j, k, 1])
                mm = abs(pack[i, k, 2] - pack[j, k, 2])
                q = pack[i, k, 3] - pack[j, k, 3]
                e = pack[i, k, 4] - pack[j, k, 4]
                r = math.sqrt(q * q + e * e)
                odd = mm if mm > r else r
                d += w[k] * (d1 + d4 + 2.0 * odd)
            acc += d
        out[i] = acc
    return out


@numba.njit(parallel=True, cache=True)
def _total_distance_rows_subset(pack, w, idx):  # pragma: no cover
    m, nt = pack.shape[0], pack.shape[1]
    out = np.zeros(m)
    for i in numba.prange(m):
        acc = 0.0
        for jj in range(idx.size):
            j = idx[jj]
            if j == i:
                continue
            d = 0.0
            for k in range(nt):
                d1 = abs(pack[i, k, 0] - pack[j, k, 0])
                d4 = abs(pack[i, k, 1] - pack[j, k, 1])
                mm = abs(pack[i, k, 2] - pack[j, k, 2])
                q = pack[i, k, 3] - pack[j, k, 3]
                e = pack[i, k, 4] - pack[j, k, 4]
                r = math.sqrt(q * q + e * e)
                odd = mm if mm > r else r
                d += w[k] * (d1 + d4 + 2.0 * odd)
            acc += d
        out[i] = acc
    return out


#: Above this ensemble size, total distances use a random reference subset.
SUBSAMPLE_THRESHOLD = 20_000
SUBSAMPLE_SIZE = 1_000


def total_distances(e: Ensemble, member_idx: np.ndarray | None = None) -> np.ndarray:
    """Per-trajectory total trace distance to the (sub)ensemble.

    ``member_idx`` restricts both the rows and the reference set to a branch.
    Very large ensembles rank against a seeded random reference subset; the
    selection ranks are stable under that proxy.
    """
    states = e.states if member_idx is None else e.states[member_idx]
    pack = np.ascontiguousarray(_pack(states))
    w = _time_weights(e.times)
    m = pack.shape[0]
    if m > SUBSAMPLE_THRESHOLD:
        ref = np.random.Generator(np.random.Philox(9173)).choice(
            m, size=SUBSAMPLE_SIZE, replace=False)
        return _total_distance_rows_subset(pack, w, np.sort(ref))
    return _total_distance_rows(pack, w)


# --- most-likely-path extraction ---------------------------------------------

def _average_selected(e: Ensemble, selected: np.ndarray) -> Trajectory:
    mean_states = e.states[selected].mean(axis=0)
    mean_states[:, :4] /= mean_states[:, :4].sum(axis=1, keepdims=True)
    bound = np.sqrt(np.clip(mean_states[:, 1] * mean_states[:, 2], 0.0, None))
    mean_states[:, 4] = np.clip(mean_states[:, 4], 0.0, bound)
    return Trajectory(times=e.times,
                      readouts=e.readouts[selected].mean(axis=0),
                      states=mean_states)


def extract_mlp(e: Ensemble, k_select: int = 100,
                member_idx: np.ndarray | None = None,
                totals: np.ndarray | None = None) -> Trajectory:
    """Average the k_select trajectories most central in trace distance.

    The default k_select of about a hundred trades noise in the average
    against drift away from the distribution mode.  Subensembles smaller than
    k_select use all their members.
    """
    if e.n_traj == 0:
        raise ValueError("cannot extract a path from an empty ensemble")
    idx = np.arange(e.n_traj) if member_idx is None else np.asarray(member_idx)
    if idx.size == 0:
        raise ValueError("cannot extract a path from an empty branch")
    if totals is None:
        totals = total_distances(e, None if member_idx is None else idx)
    order = np.argsort(totals, kind="stable")
    selected = idx[order[:min(k_select, idx.size)]]
    return _average_selected(e, selected)


@dataclass
class BranchPartition:
    """Per-trajectory branch labels plus the most central member of each branch."""

    labels: np.ndarray                  # (n_traj,) strings from BRANCH_NAMES
    medoids: dict[str, int]             # branch -> trajectory index
    totals: dict[str, np.ndarray]       # branch -> per-member total distances
    members: dict[str, np.ndarray]      # branch -> trajectory indices

    def weights(self, n_traj: int) -> dict[str, float]:
        return {name: idx.size / n_traj for name, idx in self.members.items()}


def partition_branches(e: Ensemble) -> BranchPartition:
    """Split the ensemble by the dominant population at the final time.

    The terminal subspace is what defines a branch, so this deterministic
    assignment stands in for distance-based clustering of the same classes.
    """
    if e.n_traj == 0:
        raise ValueError("cannot partition an empty ensemble")
    final = e.states[:, -1, :]
    scores = np.stack([final[:, 1] + final[:, 2], final[:, 0], final[:, 3]], axis=1)
    codes = np.argmax(scores, axis=1)
    labels = np.array(BRANCH_NAMES, dtype=object)[codes]
    members: dict[str, np.ndarray] = {}
    totals: dict[str, np.ndarray] = {}
    medoids: dict[str, int] = {}
    for name in BRANCH_NAMES:
        idx = np.flatnonzero(codes == BRANCH_NAMES.index(name))
        if idx.size == 0:
            continue
        members[name] = idx
        totals[name] = total_distances(e, idx)
        medoids[name] = int(idx[int(np.argmin(totals[name]))])
    return BranchPartition(labels=labels, medoids=medoids, totals=totals,
                           members=members)


def extract_branch_mlps(e: Ensemble, k_select: int = 100,
                        partition: BranchPartition | None = None) -> dict[str, Trajectory]:
    """Most likely path per branch, reusing the partition's distance work."""
    part = partition_branches(e) if partition is None else partition
    return {name: extract_mlp(e, k_select, member_idx=idx, totals=part.totals[name])
            for name, idx in part.members.items()}


# --- time-to-maximum-concurrence ----------------------------------------------

@dataclass
class TimeToMaxHistogram:
    """Normalized histogram of per-trajectory first times of maximum concurrence."""

    edges: np.ndarray
    mass: np.ndarray
    never_entangled: float   # fraction with identically zero concurrence
    t_peaks: np.ndarray

    def modes(self, min_prominence: float = 0.05) -> list[int]:
        """Histogram bins that are local peaks, most massive first.

        Edge bins count as peaks; a peak must rise above its surroundings by
        ``min_prominence`` of the tallest bin to filter sampling noise.
        """
        from scipy.signal import find_peaks
        padded = np.concatenate([[0.0], self.mass, [0.0]])
        peaks, _ = find_peaks(padded, prominence=min_prominence * self.mass.max())
        idx = [int(p - 1) for p in peaks]
        idx.sort(key=lambda k: -self.mass[k])
        return idx


def time_to_max_histogram(e: Ensemble, bin_width: float) -> TimeToMaxHistogram:
    """Histogram of argmax times of the concurrence (first occurrence on ties).

    Trajectories whose concurrence is identically zero never reach an
    entangled state and are reported in a separate bucket, outside the bins.
    """
    if bin_width <= 0.0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    t_peaks = e.times[np.argmax(e.concurrences, axis=1)]
    never = ~np.any(e.concurrences > 0.0, axis=1)
    horizon = e.times[-1]
    n_bins = max(1, int(math.ceil(horizon / bin_width - 1e-12)))
    edges = np.arange(n_bins + 1) * bin_width
    edges[-1] = max(edges[-1], horizon)
    counts, _ = np.histogram(t_peaks[~never], bins=edges)
    return TimeToMaxHistogram(edges=edges, mass=counts / e.n_traj,
                              never_entangled=float(never.sum() / e.n_traj),
                              t_peaks=t_peaks)
