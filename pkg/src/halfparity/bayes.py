"""Bayesian conditioning of the X-state on homodyne records.

A record averaged over a window t multiplies each population by its Gaussian
likelihood and the odd coherence by the geometric mean of the two odd-state
likelihoods times the dephasing factor e^{-gamma t}.  Because the likelihoods
depend on the record only through its mean, folding per-step updates over a
record is algebraically identical to one update with the time-averaged
readout, which is the central correctness property tested here.

All likelihood products are taken in log space with a single normalization
per step, so strong measurements and long records cannot underflow.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .concurrence import concurrence_path
from .model import MeasConfig, XState, time_grid
from .readout import RngStream, readout_sigma


@dataclass
class Trajectory:
    """One conditioned evolution: times, instantaneous readouts, states, concurrence.

    ``states`` has one row per grid point including t = 0; ``readouts`` holds
    the instantaneous record, one value per step, so it is one entry shorter.
    """

    times: np.ndarray
    readouts: np.ndarray
    states: np.ndarray        # shape (n_steps + 1, 5)
    concurrences: np.ndarray = field(default=None)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.readouts = np.asarray(self.readouts, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.concurrences is None:
            self.concurrences = concurrence_path(self.states)
        else:
            self.concurrences = np.asarray(self.concurrences, dtype=float)
        if self.states.shape != (self.times.size, 5):
            raise ValueError(f"states shape {self.states.shape} does not match "
                             f"{self.times.size} grid points")
        if self.readouts.size != self.times.size - 1:
            raise ValueError(f"{self.readouts.size} readouts for "
                             f"{self.times.size} grid points; expected one fewer")
        if self.concurrences.shape != (self.times.size,):
            raise ValueError("one concurrence value per grid point required")

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    def state(self, k: int) -> XState:
        return XState.from_array(self.states[k])

    def final_state(self) -> XState:
        return self.state(self.n_steps)

    def validate(self) -> None:
        """Recheck state invariants and recomputability of the concurrence."""
        for row in self.states:
            XState.from_array(row)
        if not np.array_equal(concurrence_path(self.states), self.concurrences):
            raise ValueError("stored concurrences are not recomputable from the states")


def _log_likelihoods(V, t: float, cfg: MeasConfig) -> np.ndarray:
    """Population log-likelihood exponents, common Gaussian prefactor dropped."""
    dv = cfg.dv_array()
    V = np.asarray(V, dtype=float)
    return -((V[..., None] - dv) ** 2) * (t / cfg.s)


def update(state0: XState, V: float, t: float, cfg: MeasConfig) -> XState:
    """Condition a state on a readout V averaged over a window of length t.

    Parameters
    ----------
    state0 : XState
        State at the start of the window.
    V : float
        Time-averaged readout over the window.
    t : float
        Window length (us); must be positive.
    cfg : MeasConfig
        Measurement model supplying signal levels, efficiency and gamma.

    Returns
    -------
    XState
        Posterior state: populations reweighted by their Gaussian
        likelihoods, coherence scaled by the geometric mean of the odd-state
        likelihoods times e^{-gamma t}, all renormalized.
    """
    if t <= 0.0:
        raise ValueError(f"window length must be positive, got {t}")
    if not math.isfinite(V):
        raise ValueError(f"readout must be finite, got {V}")
    ll = _log_likelihoods(float(V), t, cfg)
    pops = state0.populations()
    # shift by the largest exponent among populated components so the
    # normalization cannot underflow for any finite record
    occupied = pops > 0.0
    shift = ll[occupied].max()
    w = pops * np.exp(ll - shift)
    norm = w.sum()
    if not (norm > 0.0):
        raise FloatingPointError("readout likelihood vanished for every "
                                 "populated component")
    x5 = state0.x5 * math.exp(0.5 * (ll[1] + ll[2]) - shift - cfg.gamma * t) / norm
    pops_new = w / norm
    return XState(*pops_new, x5)


def step(state: XState, v: float, cfg: MeasConfig) -> XState:
    """Per-step update: one instantaneous readout over a window dt."""
    return update(state, v, cfg.dt, cfg)


def _traj_noise(seed: int, stream: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """The per-trajectory random inputs: n uniforms, then n standard normals."""
    gen = RngStream(seed, stream).generator()
    return gen.random(n), gen.standard_normal(n)


def _evolve_block(x0: np.ndarray, cfg: MeasConfig, us: np.ndarray, zs: np.ndarray,
                  keep_idx: np.ndarray | None):
    """Lockstep evolution of a block of trajectories from pre-drawn noise.

    Per step: pick the occupied component by inverse-cdf on the current
    populations, emit v = dv_k + sigma * z, then apply the per-step update in
    log space.  Returns (readouts, kept state history, final mean readout).
    Readouts are returned only when the full history is kept.
    """
    m, n = us.shape
    dv = cfg.dv_array()
    sig = readout_sigma(cfg.dt, cfg)
    scale = cfg.dt / cfg.s
    decay = math.exp(-cfg.gamma * cfg.dt)
    x = np.tile(np.asarray(x0, dtype=float), (m, 1))
    full = keep_idx is None
    if full:
        states = np.empty((m, n + 1, 5))
        states[:, 0] = x
        readouts = np.empty((m, n))
    else:
        keep = {int(k): i for i, k in enumerate(keep_idx)}
        states = np.empty((m, len(keep_idx), 5))
        if 0 in keep:
            states[:, keep[0]] = x
        readouts = None
    vsum = np.zeros(m)
    rows = np.arange(m)
    for k in range(n):
        cum = np.cumsum(x[:, :4], axis=1)
        comp = (us[:, k, None] * cum[:, 3, None] > cum).sum(axis=1)
        v = dv[comp] + sig * zs[:, k]
        vsum += v
        ll = -((v[:, None] - dv) ** 2) * scale
        shift = np.where(x[:, :4] > 0.0, ll, -np.inf).max(axis=1)
        w = x[:, :4] * np.exp(ll - shift[:, None])
        norm = w.sum(axis=1)
        x5 = x[:, 4] * np.exp(0.5 * (ll[:, 1] + ll[:, 2]) - shift) * decay / norm
        x[:, :4] = w / norm[:, None]
        x[:, 4] = x5
        if full:
            readouts[:, k] = v
            states[:, k + 1] = x
        elif (k + 1) in keep:
            states[rows, keep[k + 1]] = x
    return readouts, states, vsum / n


def _block_worker(args):
    x0, cfg, seed, start, stop, keep_idx = args
    n = cfg.n_steps
    m = stop - start
    us = np.empty((m, n))
    zs = np.empty((m, n))
    for r, i in enumerate(range(start, stop)):
        us[r], zs[r] = _traj_noise(seed, i, n)
    return _evolve_block(x0, cfg, us, zs, keep_idx)


def simulate(state0: XState, cfg: MeasConfig, rng: RngStream) -> Trajectory:
    """Generate one Monte Carlo trajectory over the configured grid.

    The record is drawn component-then-Gaussian per step from the stream
    (uniforms first, then normals, batched per trajectory), so a trajectory is
    a pure function of (state0, cfg, seed, stream).
    """
    n = cfg.n_steps
    us, zs = _traj_noise(rng.seed, rng.stream, n)
    readouts, states, _ = _evolve_block(state0.to_array(), cfg,
                                        us[None, :], zs[None, :], None)
    return Trajectory(times=cfg.times, readouts=readouts[0], states=states[0])


@dataclass
class EnsembleArrays:
    """Raw ensemble output: stacked trajectories sharing one grid and seed."""

    times: np.ndarray
    states: np.ndarray            # (n_traj, len(times), 5)
    readouts: np.ndarray | None   # (n_traj, n_steps) in full mode
    mean_readout: np.ndarray      # per-trajectory time-averaged record
    seed: int
    stream_offset: int


_BLOCK = 2048


def simulate_ensemble(state0: XState, cfg: MeasConfig, n_traj: int, seed: int,
                      workers: int = 1, snapshot_times=None,
                      stream_offset: int = 0) -> EnsembleArrays:
    """Generate n_traj trajectories; trajectory i uses stream stream_offset + i.

    With ``snapshot_times`` only the states at those grid times are kept,
    which makes very large ensembles cheap.  Work is split into fixed-size
    blocks of trajectory indices, so results are byte-identical for any
    worker count.
    """
    if n_traj <= 0:
        raise ValueError(f"need a positive trajectory count, got {n_traj}")
    times = cfg.times
    if snapshot_times is None:
        keep_idx = None
        out_times = times
    else:
        keep_idx = np.array([int(round(t / cfg.dt)) for t in np.atleast_1d(snapshot_times)])
        if np.any(keep_idx < 0) or np.any(keep_idx > cfg.n_steps):
            raise ValueError("snapshot times outside the record horizon")
        out_times = times[keep_idx]
    blocks = [(state0.to_array(), cfg, seed, stream_offset + a,
               stream_offset + min(a + _BLOCK, n_traj), keep_idx)
              for a in range(0, n_traj, _BLOCK)]
    if workers > 1 and len(blocks) > 1:
        with multiprocessing.get_context("fork").Pool(workers) as pool:
            parts = pool.map(_block_worker, blocks, chunksize=1)
    else:
        parts = [_block_worker(b) for b in blocks]
    states = np.concatenate([p[1] for p in parts], axis=0)
    vbar = np.concatenate([p[2] for p in parts], axis=0)
    readouts = None
    if keep_idx is None:
        readouts = np.concatenate([p[0] for p in parts], axis=0)
    return EnsembleArrays(times=out_times, states=states, readouts=readouts,
                          mean_readout=vbar, seed=seed, stream_offset=stream_offset)
