"""Statistics of the homodyne readout.

Conditioned on basis state i, a record averaged over a window of length t is
Gaussian with mean dv_i and variance s/(2t), s = 1/(2 eta_m).  A state with
mixed populations produces the corresponding Gaussian mixture.  Sampling draws
the basis component first and the Gaussian second, which reproduces the
mixture exactly without simulating the underlying photocurrent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .model import MeasConfig, XState


@dataclass(frozen=True)
class ReadoutSample:
    """One instantaneous readout value and the start time of its window."""

    v: float
    t: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.v):
            raise ValueError(f"readout must be finite, got {self.v}")


@dataclass(frozen=True)
class RngStream:
    """Keyed random stream: identical (seed, stream) reproduces identical draws.

    Streams are Philox counter-based generators keyed through seed-sequence
    spawn keys, so trajectory i can always use stream i regardless of how work
    is scheduled across processes.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))


def _weights(state) -> np.ndarray:
    if isinstance(state, XState):
        return state.populations()
    w = np.asarray(state, dtype=float).reshape(-1)
    if w.size == 5:
        w = w[:4]
    if w.size != 4:
        raise ValueError(f"expected an XState or 4 population weights, got shape {w.shape}")
    return w


def readout_sigma(duration: float, cfg: MeasConfig) -> float:
    """Standard deviation sqrt(s/(2t)) of a readout averaged over t."""
    if duration <= 0.0:
        raise ValueError(f"duration must be positive, got {duration}")
    return math.sqrt(cfg.s / (2.0 * duration))


def cond_density(v, i: int, duration: float, cfg: MeasConfig):
    """Gaussian density of the readout given basis state i (1..4).

    Normalized over the real line; peak value sqrt(duration/(pi s)).
    """
    if i not in (1, 2, 3, 4):
        raise ValueError(f"state index must be 1..4, got {i}")
    if duration <= 0.0:
        raise ValueError(f"duration must be positive, got {duration}")
    v = np.asarray(v, dtype=float)
    arg = -((v - cfg.dv[i - 1]) ** 2) * duration / cfg.s
    out = math.sqrt(duration / (math.pi * cfg.s)) * np.exp(arg)
    return out if out.ndim else float(out)


def mixture_density(v, state, duration: float, cfg: MeasConfig):
    """Population-weighted mixture of the four conditional densities."""
    w = _weights(state)
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v, dtype=float)
    for i in range(4):
        if w[i] != 0.0:
            out = out + w[i] * cond_density(v, i + 1, duration, cfg)
    return out if out.ndim else float(out)


def mixture_cdf(v, state, duration: float, cfg: MeasConfig):
    """Cumulative distribution of the readout mixture."""
    w = _weights(state)
    sigma = readout_sigma(duration, cfg)
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v, dtype=float)
    for i in range(4):
        if w[i] != 0.0:
            out = out + w[i] * ndtr((v - cfg.dv[i]) / sigma)
    return out if out.ndim else float(out)


def sample_readout(state: XState, rng, cfg: MeasConfig, t: float = 0.0) -> ReadoutSample:
    """Draw one instantaneous readout for the window starting at t.

    ``rng`` may be a live numpy Generator or an RngStream (which is opened at
    its start, so repeated calls with the same stream repeat the same draw).
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    w = state.populations()
    u = gen.random() * w.sum()
    k = int(np.searchsorted(np.cumsum(w), u, side="right"))
    k = min(k, 3)
    v = gen.normal(cfg.dv[k], readout_sigma(cfg.dt, cfg))
    return ReadoutSample(v=float(v), t=t)


def sample_readouts(state: XState, rng, cfg: MeasConfig, n: int) -> np.ndarray:
    """Vectorized batch of n instantaneous readouts for a fixed state."""
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    w = state.populations()
    u = gen.random(n) * w.sum()
    comp = np.searchsorted(np.cumsum(w), u, side="right")
    comp = np.minimum(comp, 3)
    z = gen.standard_normal(n)
    return cfg.dv_array()[comp] + readout_sigma(cfg.dt, cfg) * z
