"""Most-likely-path machinery.

Extremizing the record log-likelihood under the per-step update constraints
gives ten coupled ODEs: five for the state, five for conjugate multipliers,
closed by an optimal readout that is an explicit function of both.  Along
those flows the optimal readout is constant, so branch finding reduces to a
one-dimensional scan of the log-likelihood over constant readouts; the
Hamiltonian integrator exists to verify the constancy claim, not to locate
branches.

The conjugate equations implemented here are the exact gradient of the
action Hamiltonian (numerically checked against finite differences), with
the readout chosen so the Hamiltonian is stationary in v.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .concurrence import concurrence_path
from .model import ATOL_ODE, ConfigError, MeasConfig, XState, derived_params, time_grid
from .readout import readout_sigma

BRANCH_NAMES = ("high", "low-00", "low-11")


class StepFailureError(RuntimeError):
    """The adaptive integrator could not meet its tolerances."""


@dataclass(frozen=True)
class HamiltonianState:
    """State plus its five conjugate multipliers."""

    x: XState
    p: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(5))
        if not np.all(np.isfinite(self.p)):
            raise ValueError(f"conjugate variables must be finite, got {self.p}")

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.x.to_array(), self.p])


def _as_state_array(x) -> np.ndarray:
    if isinstance(x, XState):
        return x.to_array()
    return np.asarray(x, dtype=float).reshape(5)


def _coupling_matrix(v: float, dv: np.ndarray) -> np.ndarray:
    """G_ik = 2 v (dv_i - dv_k) - dv_i^2 + dv_k^2; antisymmetric."""
    return 2.0 * v * (dv[:, None] - dv[None, :]) - dv[:, None] ** 2 + dv[None, :] ** 2


def state_rhs(x, v: float, cfg: MeasConfig) -> np.ndarray:
    """Time derivatives of the five state elements at readout v.

    The population part conserves the trace identically (antisymmetric
    coupling); the coherence decays at gamma on top of the measurement terms.
    """
    xa = _as_state_array(x)
    dv = cfg.dv_array()
    s = cfg.s
    pops = xa[:4]
    G = _coupling_matrix(v, dv)
    out = np.empty(5)
    out[:4] = pops / s * (G @ pops)
    g = dv ** 2 - 2.0 * v * dv
    out[4] = -cfg.gamma * xa[4] + xa[4] / s * (
        v * (dv[1] + dv[2]) - 0.5 * (dv[1] ** 2 + dv[2] ** 2) + pops @ g)
    return out


def conjugate_rhs(h, v: float, cfg: MeasConfig, x=None) -> np.ndarray:
    """Time derivatives of the conjugate variables: minus the Hamiltonian gradient.

    Accepts a HamiltonianState, or a bare conjugate array together with ``x``.
    The p5 = 0 plane is invariant, and with all conjugates zero the population
    rows reduce to the pure likelihood cost (v - dv_i)^2 / s.
    """
    if isinstance(h, HamiltonianState):
        xa, pa = h.x.to_array(), h.p
    else:
        pa = np.asarray(h, dtype=float).reshape(5)
        xa = _as_state_array(x)
    dv = cfg.dv_array()
    s = cfg.s
    pops, x5 = xa[:4], xa[4]
    pp, p5 = pa[:4], pa[4]
    G = _coupling_matrix(v, dv)
    g = dv ** 2 - 2.0 * v * dv
    out = np.empty(5)
    out[:4] = -(pp * (G @ pops) - G @ (pops * pp)) / s \
        - x5 * p5 * g / s + (v - dv) ** 2 / s
    out[4] = cfg.gamma * p5 - p5 / s * (pops @ g - 0.5 * (g[1] + g[2]))
    return out


def hamiltonian(x, p, v: float, cfg: MeasConfig) -> float:
    """Action Hamiltonian: conjugates dotted into the flow minus the readout cost."""
    xa = _as_state_array(x)
    pa = np.asarray(p, dtype=float).reshape(5)
    cost = ((v - cfg.dv_array()) ** 2 @ xa[:4]) / cfg.s
    return float(pa @ state_rhs(xa, v, cfg) - cost)


def optimal_readout(h, cfg: MeasConfig, x=None) -> float:
    """Readout making the Hamiltonian stationary (it is quadratic in v)."""
    if isinstance(h, HamiltonianState):
        xa, pa = h.x.to_array(), h.p
    else:
        pa = np.asarray(h, dtype=float).reshape(5)
        xa = _as_state_array(x)
    dv = cfg.dv_array()
    pops, x5 = xa[:4], xa[4]
    pp, p5 = pa[:4], pa[4]
    total = pops.sum()
    xdv = pops @ dv
    term_p = (pp * pops) @ dv * total - (pp * pops).sum() * xdv
    term_5 = 0.5 * p5 * x5 * ((dv[1] + dv[2]) - 2.0 * xdv)
    return float((term_p + xdv + term_5) / total)


def _solve(rhs, y0: np.ndarray, times: np.ndarray,
           rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    sol = solve_ivp(rhs, (times[0], times[-1]), y0, method="DOP853",
                    t_eval=times, rtol=rtol, atol=atol)
    if not sol.success:
        raise StepFailureError(sol.message)
    return sol.y.T


def _clean_states(states: np.ndarray) -> np.ndarray:
    """Renormalize integrator output back onto the state manifold.

    Raises if the drift exceeds the ODE error budget instead of papering over
    a genuinely broken path.
    """
    drift = np.abs(states[:, :4].sum(axis=1) - 1.0).max()
    if drift > ATOL_ODE:
        raise StepFailureError(f"trace drifted by {drift:.3e} during integration")
    if states[:, :4].min() < -ATOL_ODE:
        raise StepFailureError("populations went negative during integration")
    out = states.copy()
    out[:, :4] = np.clip(out[:, :4], 0.0, None)
    out[:, :4] /= out[:, :4].sum(axis=1, keepdims=True)
    bound = np.sqrt(out[:, 1] * out[:, 2])
    out[:, 4] = np.clip(out[:, 4], 0.0, bound)
    return out


def integrate_state(x0: XState, v: float, cfg: MeasConfig, T: float | None = None,
                    t0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Integrate the state equations at a fixed readout over the uniform grid.

    Returns (times, states) with one row per grid point starting at t0.
    """
    T = cfg.T if T is None else T
    times = t0 + time_grid(T - t0, cfg.dt)
    states = _solve(lambda t, y: state_rhs(y, v, cfg), x0.to_array(), times)
    return times, _clean_states(states)


@dataclass
class HamiltonianPath:
    """Solution of the full ten-equation system with the readout recorded."""

    times: np.ndarray
    x: np.ndarray   # (n, 5)
    p: np.ndarray   # (n, 5)
    v: np.ndarray   # (n,)

    def state(self, k: int) -> HamiltonianState:
        return HamiltonianState(XState.from_array(self.x[k], renormalize=True), self.p[k])

    def hamiltonian_values(self, cfg: MeasConfig) -> np.ndarray:
        return np.array([hamiltonian(self.x[k], self.p[k], self.v[k], cfg)
                         for k in range(self.times.size)])


def integrate_hamiltonian(h0: HamiltonianState, cfg: MeasConfig,
                          T: float | None = None) -> HamiltonianPath:
    """Integrate states and conjugates with the readout eliminated on the fly."""
    T = cfg.T if T is None else T
    times = time_grid(T, cfg.dt)

    def rhs(t, y):
        xa, pa = y[:5], y[5:]
        v = optimal_readout(pa, cfg, x=xa)
        return np.concatenate([state_rhs(xa, v, cfg), conjugate_rhs(pa, v, cfg, x=xa)])

    ys = _solve(rhs, h0.to_array(), times)
    vs = np.array([optimal_readout(ys[k, 5:], cfg, x=ys[k, :5])
                   for k in range(times.size)])
    return HamiltonianPath(times=times, x=ys[:, :5], p=ys[:, 5:], v=vs)


def log_likelihood(x0: XState, v: float, cfg: MeasConfig, T: float | None = None,
                   t0: float = 0.0) -> float:
    """Record log-likelihood of holding the readout constant at v.

    The state-independent offset is dropped; what remains is the accumulated
    quadratic readout cost along the state path integrated at that v, so only
    differences between candidate readouts are meaningful.
    """
    T = cfg.T if T is None else T
    times = t0 + time_grid(T - t0, cfg.dt)
    dv = cfg.dv_array()

    def rhs(t, y):
        out = np.empty(6)
        out[:5] = state_rhs(y[:5], v, cfg)
        out[5] = -((v - dv) ** 2 @ y[:4]) / cfg.s
        return out

    ys = _solve(rhs, np.concatenate([x0.to_array(), [0.0]]), times)
    return float(ys[-1, 5])


def default_scan_grid(cfg: MeasConfig, T: float | None = None, n: int = 161) -> np.ndarray:
    """Scan range [dv1 - 2 sigma, dv4 + 2 sigma] with sigma of the full-record average."""
    T = cfg.T if T is None else T
    sigma = readout_sigma(T, cfg)
    return np.linspace(cfg.dv[0] - 2.0 * sigma, cfg.dv[3] + 2.0 * sigma, n)


def likelihood_scan(x0: XState, cfg: MeasConfig, T: float | None = None,
                    v_grid: np.ndarray | None = None, t0: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Log-likelihood evaluated over a grid of constant readouts."""
    vs = default_scan_grid(cfg, T) if v_grid is None else np.asarray(v_grid, dtype=float)
    vals = np.array([log_likelihood(x0, v, cfg, T, t0=t0) for v in vs])
    return vs, vals


def _local_max_indices(vals: np.ndarray, grid: np.ndarray) -> list[int]:
    """Strict three-point maxima; plateaus resolve toward the smallest |v|.

    Grid endpoints count when they dominate their single neighbor, so a
    compact scan always yields at least one maximum.
    """
    idxs: list[int] = []
    n = vals.size
    i = 0
    while i < n:
        j = i
        while j + 1 < n and vals[j + 1] == vals[i]:
            j += 1
        left = vals[i - 1] if i > 0 else -math.inf
        right = vals[j + 1] if j + 1 < n else -math.inf
        if vals[i] > left and vals[i] > right:
            idxs.append(min(range(i, j + 1), key=lambda q: abs(grid[q])))
        i = j + 1
    return idxs


@dataclass
class MlpSolution:
    """One most-likely-path branch at a constant optimal readout."""

    v_opt: float
    log_like: float
    times: np.ndarray
    path: np.ndarray        # (n, 5)
    conc_path: np.ndarray = field(default=None)
    t_peak: float = field(default=None)
    branch: str = field(default=None)

    def __post_init__(self):
        if self.conc_path is None:
            self.conc_path = concurrence_path(self.path)
        if self.t_peak is None:
            self.t_peak = float(self.times[int(np.argmax(self.conc_path))])
        if self.branch is None:
            self.branch = _branch_label(self.path[-1])

    def as_trajectory(self):
        from .bayes import Trajectory
        return Trajectory(times=self.times,
                          readouts=np.full(self.times.size - 1, self.v_opt),
                          states=self.path, concurrences=self.conc_path)


def _branch_label(final_row: np.ndarray) -> str:
    scores = (final_row[1] + final_row[2], final_row[0], final_row[3])
    return BRANCH_NAMES[int(np.argmax(scores))]


def find_mlp_branches(x0: XState, cfg: MeasConfig, T: float | None = None,
                      v_grid: np.ndarray | None = None, t0: float = 0.0,
                      state_t0: XState | None = None) -> list[MlpSolution]:
    """Locate every local likelihood maximum over constant readouts.

    Each grid maximum is refined by bounded golden-style search, the state
    path is integrated at the refined readout, and branches are labelled by
    the dominant population at the final time.  ``state_t0``/``t0`` allow
    restarting from a re-initialized state after a transient.
    """
    T = cfg.T if T is None else T
    start = x0 if state_t0 is None else state_t0
    vs = default_scan_grid(cfg, T) if v_grid is None else np.asarray(v_grid, dtype=float)
    vals = np.array([log_likelihood(start, v, cfg, T, t0=t0) for v in vs])
    branches: list[MlpSolution] = []
    for k in _local_max_indices(vals, vs):
        lo = vs[max(k - 1, 0)]
        hi = vs[min(k + 1, vs.size - 1)]
        if lo == hi:
            v_opt, ll = float(vs[k]), float(vals[k])
        else:
            res = minimize_scalar(lambda v: -log_likelihood(start, v, cfg, T, t0=t0),
                                  bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-10})
            v_opt, ll = float(res.x), float(-res.fun)
        if any(abs(v_opt - b.v_opt) < 1e-6 for b in branches):
            continue
        times, path = integrate_state(start, v_opt, cfg, T, t0=t0)
        branches.append(MlpSolution(v_opt=v_opt, log_like=ll, times=times, path=path))
    branches.sort(key=lambda b: b.v_opt)
    return branches


def symmetric_high_branch_path(x0: XState, cfg: MeasConfig, times) -> np.ndarray:
    """Closed-form zero-readout path for perfectly symmetric signals.

    The even populations decay at the measurement rate dv^2/s relative to the
    frozen odd ones and the coherence at gamma, all behind one normalization;
    the concurrence of this path traces exactly the upper concurrence bound.
    """
    if not cfg.is_symmetric:
        raise ConfigError("closed form requires a perfectly symmetric configuration")
    times = np.asarray(times, dtype=float)
    b = derived_params(cfg).beta_14
    decay = np.exp(-b * times)
    x_even = x0.x1 + x0.x4
    norm = (1.0 - x_even) + x_even * decay
    out = np.empty((times.size, 5))
    out[:, 0] = x0.x1 * decay / norm
    out[:, 1] = x0.x2 / norm
    out[:, 2] = x0.x3 / norm
    out[:, 3] = x0.x4 * decay / norm
    out[:, 4] = x0.x5 * np.exp(-cfg.gamma * times) / norm
    return out


# --- parity meter (same output for |00> and |11>) ----------------------------

def full_parity_rhs(x, lam: float, gamma: float) -> np.ndarray:
    """Equations of motion for a parity meter at a constant collapse rate lam."""
    xa = _as_state_array(x)
    x_even = xa[0] + xa[3]
    x_odd = xa[1] + xa[2]
    return np.array([
        lam * xa[0] * x_odd,
        -lam * xa[1] * x_even,
        -lam * xa[2] * x_even,
        lam * xa[3] * x_odd,
        -gamma * xa[4] - lam * xa[4] * x_even,
    ])


def full_parity_path(x0: XState, lam: float, gamma: float, T: float,
                     dt: float = 0.01) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form most likely path of the parity meter.

    Populations keep their shape inside each parity sector while the odd
    sector is reweighted by e^{-lam t} behind a shared normalization; the
    trace is one identically.
    """
    times = time_grid(T, dt)
    u = np.exp(-lam * times)
    denom = 1.0 - (x0.x2 + x0.x3) * (1.0 - u)
    out = np.empty((times.size, 5))
    out[:, 0] = x0.x1 / denom
    out[:, 1] = x0.x2 * u / denom
    out[:, 2] = x0.x3 * u / denom
    out[:, 3] = x0.x4 / denom
    out[:, 4] = x0.x5 * np.exp(-(gamma + lam) * times) / denom
    return times, out


def full_parity_lambda(x_o0: float, x_of: float, t: float) -> float:
    """Collapse rate fixed by the boundary odd-parity probabilities.

    Negative when the odd probability grows (collapse toward the odd sector),
    zero when it is unchanged; round-trips exactly through the closed-form
    odd-probability solution.
    """
    if not (0.0 < x_o0 < 1.0) or not (0.0 < x_of < 1.0):
        raise ValueError(f"parity probabilities must lie strictly in (0, 1), "
                         f"got {x_o0}, {x_of}")
    if t <= 0.0:
        raise ValueError(f"time must be positive, got {t}")
    return -math.log(x_of * (1.0 - x_o0) / (x_o0 * (1.0 - x_of))) / t


def full_parity_concurrence(x0: XState, lam: float, gamma: float, t):
    """Concurrence along the closed-form parity-meter path.

    Crosses zero exactly when (gamma + lam) t = ln(x5 / sqrt(x1 x4)).
    """
    t = np.asarray(t, dtype=float)
    denom = np.abs(1.0 - (x0.x2 + x0.x3) * (1.0 - np.exp(-lam * t)))
    num = x0.x5 * np.exp(-(gamma + lam) * t) - math.sqrt(max(x0.x1 * x0.x4, 0.0))
    out = 2.0 * np.clip(num / denom, 0.0, None)
    return out if out.ndim else float(out)
