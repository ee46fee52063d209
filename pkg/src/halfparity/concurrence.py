"""Concurrence of the X-state and its distribution under the measurement.

For an X-shaped density matrix the concurrence collapses to
C = 2 max{0, x5 - sqrt(x1 x4)}.  Because the conditioned state is a function
of the time-averaged readout alone, C at a fixed time is a deterministic
transform of one Gaussian-mixture random variable.  That gives a closed-form
distribution: an absolutely continuous part on (0, c_max(t)] obtained by the
two-branch change of variables through the bell-shaped readout-to-concurrence
map, plus a point mass at exactly zero whenever the map clamps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq, minimize_scalar

from .model import ATOL_ALGEBRAIC, ConfigError, MeasConfig, XState, derived_params
from .readout import mixture_cdf, mixture_density, readout_sigma


class NoSolutionError(ValueError):
    """Requested concurrence level exceeds the reachable bound at this time."""


def concurrence(state: XState) -> float:
    """Concurrence of an X-state: 0 for separable states, 1 for Bell states."""
    return 2.0 * max(0.0, state.x5 - math.sqrt(max(state.x1 * state.x4, 0.0)))


def concurrence_path(states: np.ndarray) -> np.ndarray:
    """Row-wise concurrence of an (..., 5) array of X-state vectors."""
    a = np.asarray(states, dtype=float)
    prod = np.clip(a[..., 0] * a[..., 3], 0.0, None)
    return 2.0 * np.clip(a[..., 4] - np.sqrt(prod), 0.0, None)


def _is_product_x(x0: XState) -> bool:
    return all(abs(v - 0.25) <= ATOL_ALGEBRAIC
               for v in (x0.x1, x0.x2, x0.x3, x0.x4, x0.x5))


def _log_or_ninf(x: float) -> float:
    return math.log(x) if x > 0.0 else -math.inf


def c_of_readout(V, t: float, x0: XState, cfg: MeasConfig):
    """Signed concurrence-readout relation c_t(V).

    Equals 2(x5(t) - sqrt(x1(t) x4(t))) of the state conditioned on a
    time-averaged readout V over window t; the concurrence is max{0, c_t}.
    Evaluated with a common log-space shift so that strong-measurement tails
    never underflow the normalization.
    """
    if t <= 0.0:
        raise ValueError(f"time must be positive, got {t}")
    d = derived_params(cfg)
    V = np.asarray(V, dtype=float)
    pops = x0.populations()
    log_pops = np.array([_log_or_ninf(p) for p in pops])
    # exponents of the four mixture terms and of the two numerator terms
    expo = log_pops + (2.0 * d.alpha * V[..., None] - 2.0 * d.beta) * t
    e5 = _log_or_ninf(x0.x5) + (d.alpha_23 * V - d.beta_23 - cfg.gamma) * t
    e14 = 0.5 * (log_pops[0] + log_pops[3]) + (d.alpha_14 * V - d.beta_14) * t
    shift = expo.max(axis=-1)
    denom = np.exp(expo - shift[..., None]).sum(axis=-1)
    num = np.exp(e5 - shift) - np.exp(e14 - shift)
    out = 2.0 * num / denom
    return out if out.ndim else float(out)


def _dc_dV(V, t: float, x0: XState, cfg: MeasConfig):
    """Analytic derivative of c_of_readout with respect to V."""
    d = derived_params(cfg)
    V = np.asarray(V, dtype=float)
    pops = x0.populations()
    log_pops = np.array([_log_or_ninf(p) for p in pops])
    expo = log_pops + (2.0 * d.alpha * V[..., None] - 2.0 * d.beta) * t
    e5 = _log_or_ninf(x0.x5) + (d.alpha_23 * V - d.beta_23 - cfg.gamma) * t
    e14 = 0.5 * (log_pops[0] + log_pops[3]) + (d.alpha_14 * V - d.beta_14) * t
    shift = expo.max(axis=-1)
    terms = np.exp(expo - shift[..., None])
    denom = terms.sum(axis=-1)
    denom_dv = 2.0 * t * (terms * d.alpha).sum(axis=-1)
    u5 = np.exp(e5 - shift)
    u14 = np.exp(e14 - shift)
    c = 2.0 * (u5 - u14) / denom
    num_dv = 2.0 * t * (d.alpha_23 * u5 - d.alpha_14 * u14)
    out = num_dv / denom - c * denom_dv / denom
    return out if out.ndim else float(out)


def nonneg_condition(x0: XState, cfg: MeasConfig, t: float, V: float) -> bool:
    """Whether c_t(V) >= 0 without clamping, for the x-product initial state.

    The sign of c_t is set by comparing the decay exponents of the coherence
    and of the even-population geometric mean; for this initial state the two
    prefactors are equal, leaving the linear-in-V inequality below.
    """
    if not _is_product_x(x0):
        raise ValueError("condition is derived only for the x-product initial state")
    if t <= 0.0:
        raise ValueError(f"time must be positive, got {t}")
    d = derived_params(cfg)
    return (cfg.gamma - d.alpha_23 * V + d.beta_23) < (d.beta_14 - d.alpha_14 * V)


def _symmetric_terms(t: float, cfg: MeasConfig) -> tuple[float, float]:
    """(e^{-gamma t}, measurement exponent b = dv^2/s * t) for symmetric setups."""
    d = derived_params(cfg)
    return math.exp(-cfg.gamma * t), d.beta_14 * t


def c_readout_symmetric(V, t: float, cfg: MeasConfig):
    """Closed form of c_of_readout for symmetric signals and the x-product start.

    (e^{-gamma t} - e^{-b t}) / (1 + cosh(2 V dv t / s) e^{-b t}) with
    b = dv^2/s; the cosh is evaluated through logs to survive large records.
    """
    if not cfg.is_symmetric:
        raise ConfigError("closed form requires a perfectly symmetric configuration")
    if t <= 0.0:
        raise ValueError(f"time must be positive, got {t}")
    eg, bt = _symmetric_terms(t, cfg)
    V = np.asarray(V, dtype=float)
    u = 2.0 * V * cfg.delta_v * t / cfg.s
    log_cosh = np.abs(u) + np.log1p(np.exp(-2.0 * np.abs(u))) - math.log(2.0)
    out = (eg - math.exp(-bt)) / (1.0 + np.exp(log_cosh - bt))
    return out if out.ndim else float(out)


def c_max(t, cfg: MeasConfig):
    """Upper cutoff of the concurrence at time t for the symmetric x-product case.

    (e^{-gamma t} - e^{-b t}) / (1 + e^{-b t}), the value of the readout map at
    its peak V = 0.  Rejects asymmetric configurations; use c_max_numeric there.
    """
    if not cfg.is_symmetric:
        raise ConfigError("closed-form bound requires a symmetric configuration; "
                          "use c_max_numeric")
    t = np.asarray(t, dtype=float)
    b = derived_params(cfg).beta_14
    out = (np.exp(-cfg.gamma * t) - np.exp(-b * t)) / (1.0 + np.exp(-b * t))
    return out if out.ndim else float(out)


def _peak(t: float, x0: XState, cfg: MeasConfig) -> tuple[float, float]:
    """Locate the maximum of c_t(V).

    The two-root inversion presumes the clamped map max{0, c_t} rises once
    and falls once (flat zero tails allowed), which is asserted on a scan
    grid before trusting the bracketing.
    """
    sigma = readout_sigma(t, cfg)
    lo = cfg.dv[0] - 6.0 * sigma
    hi = cfg.dv[3] + 6.0 * sigma
    grid = np.linspace(lo, hi, 241)
    vals = np.clip(c_of_readout(grid, t, x0, cfg), 0.0, None)
    k = int(np.argmax(vals))
    diffs = np.diff(vals)
    eps = 1e-15 * max(1.0, float(np.abs(vals).max()))
    if np.any(diffs[:k] < -eps) or np.any(diffs[k:] > eps):
        raise ValueError("concurrence-readout map is not unimodal on the scan grid")
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, grid.size - 1)]
    res = minimize_scalar(lambda v: -c_of_readout(v, t, x0, cfg),
                          bounds=(a, b), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x), float(-res.fun)


def c_max_numeric(t: float, x0: XState, cfg: MeasConfig) -> float:
    """Concurrence cutoff by direct maximization over the readout."""
    return max(_peak(t, x0, cfg)[1], 0.0)


def _invert_symmetric(c: float, t: float, cfg: MeasConfig) -> tuple[float, float]:
    """Closed-form roots of the symmetric x-product readout map at level c."""
    eg, bt = _symmetric_terms(t, cfg)
    amp = eg - math.exp(-bt)
    ratio = amp / c - 1.0
    if ratio <= 0.0:
        raise NoSolutionError(f"level {c} above the cutoff at t={t}")
    log_g = math.log(ratio) + bt
    if log_g < 0.0:
        raise NoSolutionError(f"level {c} above the cutoff at t={t}")
    if log_g > 30.0:
        # acosh(g) = log(2g) up to e^{-2 log g} relative error
        acosh_g = math.log(2.0) + log_g
    else:
        acosh_g = math.acosh(math.exp(log_g))
    vp = cfg.s / (2.0 * cfg.delta_v * t) * acosh_g
    return -vp, vp


def invert_readout(c: float, t: float, x0: XState, cfg: MeasConfig) -> tuple[float, float]:
    """The two readouts (V-, V+) with c_t(V±) = c, for 0 < c < c_max(t).

    Symmetric x-product setups use the closed-form inversion; anything else
    falls back to bracketed root finding on each side of the (runtime-checked)
    unimodal peak.  Raises NoSolutionError above the cutoff.
    """
    if t <= 0.0:
        raise ValueError(f"time must be positive, got {t}")
    if c <= 0.0:
        raise ValueError(f"level must be positive, got {c}")
    if cfg.is_symmetric and _is_product_x(x0):
        return _invert_symmetric(c, t, cfg)
    v_peak, peak = _peak(t, x0, cfg)
    if c >= peak:
        raise NoSolutionError(f"level {c} above the cutoff {peak} at t={t}")
    sigma = readout_sigma(t, cfg)

    def f(v):
        return c_of_readout(v, t, x0, cfg) - c

    span = sigma
    lo = v_peak - span
    while f(lo) > 0.0:
        span *= 2.0
        lo = v_peak - span
        if span > 1e6 * sigma:
            raise NoSolutionError(f"no left root below level {c} at t={t}")
    v_minus = brentq(f, lo, v_peak, xtol=1e-14, rtol=8.9e-16, maxiter=200)
    span = sigma
    hi = v_peak + span
    while f(hi) > 0.0:
        span *= 2.0
        hi = v_peak + span
        if span > 1e6 * sigma:
            raise NoSolutionError(f"no right root below level {c} at t={t}")
    v_plus = brentq(f, v_peak, hi, xtol=1e-14, rtol=8.9e-16, maxiter=200)
    return float(v_minus), float(v_plus)


def prob_zero(t: float, x0: XState, cfg: MeasConfig) -> float:
    """Probability of exactly zero concurrence at time t.

    The sign of c_t switches where the coherence and even-mean exponents cross,
    which is linear in V, so the zero atom is a Gaussian-mixture tail mass (or
    0 or 1 when the sign is uniform in V).
    """
    if t <= 0.0:
        raise ValueError(f"time must be positive, got {t}")
    if x0.x5 <= 0.0:
        return 1.0
    prod = x0.x1 * x0.x4
    if prod <= 0.0:
        return 0.0
    d = derived_params(cfg)
    level = math.log(x0.x5) - 0.5 * math.log(prod) + (d.beta_14 - d.beta_23 - cfg.gamma) * t
    slope = (d.alpha_23 - d.alpha_14) * t
    if slope == 0.0:
        return 0.0 if level > 0.0 else 1.0
    v0 = -level / slope
    mass_below = float(mixture_cdf(v0, x0, t, cfg))
    return mass_below if slope > 0.0 else 1.0 - mass_below


def cdf(c: float, t: float, x0: XState, cfg: MeasConfig) -> float:
    """P(C(t) <= c), including the atom at zero."""
    if c < 0.0:
        return 0.0
    p0 = prob_zero(t, x0, cfg)
    if c == 0.0:
        return p0
    if p0 >= 1.0:
        return 1.0
    try:
        v_minus, v_plus = invert_readout(c, t, x0, cfg)
    except NoSolutionError:
        return 1.0
    lo = float(mixture_cdf(v_minus, x0, t, cfg))
    hi = float(mixture_cdf(v_plus, x0, t, cfg))
    return min(1.0, lo + (1.0 - hi))


def pdf(c, t: float, x0: XState, cfg: MeasConfig):
    """Density of the absolutely continuous part of the concurrence at time t.

    p(V-) |dV-/dc| + p(V+) |dV+/dc| with the mixture density of the
    time-averaged readout and Jacobians from the analytic derivative of the
    readout map (the inverse-square-root blowup at the cutoff is integrable).
    Zero outside (0, c_max); the zero atom is reported by prob_zero.
    """
    cs = np.atleast_1d(np.asarray(c, dtype=float))
    out = np.zeros_like(cs)
    for idx, ci in enumerate(cs):
        if ci <= 0.0:
            continue
        try:
            roots = invert_readout(ci, t, x0, cfg)
        except NoSolutionError:
            continue
        val = 0.0
        for v in roots:
            slope = _dc_dV(v, t, x0, cfg)
            dens = float(mixture_density(v, x0, t, cfg))
            val += dens / abs(slope) if slope != 0.0 else math.inf
        out[idx] = val
    return out if np.ndim(c) else float(out[0])


def pdf_mass(t: float, x0: XState, cfg: MeasConfig,
             lo: float = 0.0, hi: float | None = None) -> float:
    """Integral of the density over (lo, hi) by cutoff-aware quadrature.

    Substitutes c = cutoff - u^2 near the upper end, where the Jacobian
    diverges like an inverse square root; plain adaptive quadrature on the
    original variable misses that mass.
    """
    cmax = c_max(t, cfg) if cfg.is_symmetric and _is_product_x(x0) \
        else c_max_numeric(t, x0, cfg)
    if cmax <= 0.0:
        return 0.0
    hi = cmax if hi is None else min(hi, cmax)
    if hi <= lo:
        return 0.0
    mid = min(hi, max(lo, 0.5 * cmax))
    total = 0.0
    if mid > lo:
        total += quad(lambda c: pdf(c, t, x0, cfg), lo, mid,
                      limit=200, epsabs=1e-10, epsrel=1e-10)[0]
    if hi > mid:
        u_hi = math.sqrt(cmax - mid)
        u_lo = math.sqrt(max(cmax - hi, 0.0))
        total += quad(lambda u: 2.0 * u * pdf(cmax - u * u, t, x0, cfg),
                      u_lo, u_hi, limit=200, epsabs=1e-10, epsrel=1e-10)[0]
    return total


@dataclass
class ConcurrencePdf:
    """Evaluable concurrence distribution at one time: density, cdf and atom."""

    t: float
    cfg: MeasConfig
    x0: XState
    c_max: float = field(init=False)
    zero_atom: float = field(init=False)

    def __post_init__(self):
        if self.t <= 0.0:
            raise ValueError(f"time must be positive, got {self.t}")
        if self.cfg.is_symmetric and _is_product_x(self.x0):
            self.c_max = float(c_max(self.t, self.cfg))
        else:
            self.c_max = c_max_numeric(self.t, self.x0, self.cfg)
        self.zero_atom = prob_zero(self.t, self.x0, self.cfg)

    def density(self, c):
        return pdf(c, self.t, self.x0, self.cfg)

    __call__ = density

    def cdf(self, c):
        cs = np.atleast_1d(np.asarray(c, dtype=float))
        out = np.array([cdf(ci, self.t, self.x0, self.cfg) for ci in cs])
        return out if np.ndim(c) else float(out[0])

    def bin_masses(self, edges: np.ndarray) -> np.ndarray:
        """Exact probability per bin; the first bin absorbs the zero atom."""
        edges = np.asarray(edges, dtype=float)
        vals = self.cdf(edges)
        masses = np.diff(vals)
        if edges[0] <= 0.0:
            masses[0] += self.zero_atom
        return masses


@dataclass
class HistogramGrid:
    """Coarse-grained concurrence mass on a (time, concurrence-bin) grid."""

    times: np.ndarray
    edges: np.ndarray
    mass: np.ndarray  # shape (len(times), len(edges) - 1)

    def normalized_per_time(self) -> np.ndarray:
        """Each time slice scaled by its maximum element (presentation mode)."""
        peak = self.mass.max(axis=1, keepdims=True)
        peak[peak == 0.0] = 1.0
        return self.mass / peak


def histogram_grid(x0: XState, cfg: MeasConfig, t_grid, bin_width: float,
                   normalize: bool = False) -> HistogramGrid:
    """Bin the concurrence distribution over a time grid.

    Bin masses are exact differences of the analytic cdf (plus the zero atom
    in the first bin).  t = 0 rows are the degenerate distribution at the
    initial state's concurrence.
    """
    if bin_width <= 0.0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    t_grid = np.asarray(t_grid, dtype=float)
    top = concurrence(x0)
    for t in t_grid:
        if t > 0.0:
            cm = c_max(t, cfg) if cfg.is_symmetric and _is_product_x(x0) \
                else c_max_numeric(t, x0, cfg)
            top = max(top, cm)
    n_bins = max(1, int(math.ceil(top / bin_width - 1e-12)))
    edges = np.arange(n_bins + 1) * bin_width
    mass = np.zeros((t_grid.size, n_bins))
    for row, t in enumerate(t_grid):
        if t <= 0.0:
            k = min(int(concurrence(x0) / bin_width), n_bins - 1)
            mass[row, k] = 1.0
            continue
        dist = ConcurrencePdf(t, cfg, x0)
        mass[row] = dist.bin_masses(edges)
    grid = HistogramGrid(times=t_grid, edges=edges, mass=mass)
    if normalize:
        grid.mass = grid.normalized_per_time()
    return grid
