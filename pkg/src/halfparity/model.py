"""Domain model for a pair of qubits under a joint dispersive measurement.

The measurement distinguishes |00>, |11> and the odd two-qubit subspace but is
blind within the odd subspace, so the conditioned density matrix keeps an X
shape throughout: four populations plus the magnitude of the single surviving
coherence between |01> and |10>.  Everything downstream (trajectory
generation, concurrence statistics, path optimization) works on these five
real numbers.

Unit convention: times in microseconds, rates in inverse microseconds,
readouts dimensionless, so the signal centers carry units of us^(-1/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

#: Absolute tolerance for exact algebraic identities (trace, positivity).
ATOL_ALGEBRAIC = 1e-12
#: Absolute tolerance for quantities that passed through ODE integration.
ATOL_ODE = 1e-9

STATE_LABELS = ("00", "01", "10", "11")


class ConfigError(ValueError):
    """Malformed measurement configuration or config file."""


class InvalidStateError(ValueError):
    """A five-element state vector violates the X-state constraints."""


@dataclass(frozen=True)
class XState:
    """X-shaped two-qubit state: populations of |00>,|01>,|10>,|11> plus |rho_23|.

    The deterministic phase of the odd-subspace coherence does not change the
    degree of entanglement, so only its magnitude ``x5`` is tracked and the
    full matrix is reconstructed with a real off-diagonal entry.
    """

    x1: float
    x2: float
    x3: float
    x4: float
    x5: float

    def __post_init__(self):
        self.validate()

    def validate(self, atol: float = ATOL_ALGEBRAIC) -> None:
        """Check trace, population bounds and positivity of the X matrix."""
        vals = (self.x1, self.x2, self.x3, self.x4, self.x5)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidStateError(f"non-finite state entries: {vals}")
        if any(v < -atol or v > 1.0 + atol for v in vals[:4]):
            raise InvalidStateError(f"populations outside [0, 1]: {vals[:4]}")
        total = math.fsum(vals[:4])
        if abs(total - 1.0) > atol:
            raise InvalidStateError(f"populations sum to {total!r}, not 1")
        if self.x5 < -atol:
            raise InvalidStateError(f"negative coherence magnitude {self.x5!r}")
        bound = math.sqrt(max(self.x2, 0.0) * max(self.x3, 0.0))
        if self.x5 > bound + atol:
            raise InvalidStateError(
                f"coherence {self.x5!r} exceeds sqrt(x2*x3)={bound!r}; "
                "matrix not positive semidefinite")

    @classmethod
    def product_x(cls) -> "XState":
        """Product of single-qubit x-eigenstates: all five elements 1/4."""
        return cls(0.25, 0.25, 0.25, 0.25, 0.25)

    @classmethod
    def pure(cls, i: int) -> "XState":
        """Basis state |00>, |01>, |10> or |11> for i = 1..4."""
        if i not in (1, 2, 3, 4):
            raise ValueError(f"basis index must be 1..4, got {i}")
        pops = [0.0] * 4
        pops[i - 1] = 1.0
        return cls(*pops, 0.0)

    @classmethod
    def from_array(cls, arr, renormalize: bool = False) -> "XState":
        """Build from a length-5 array.

        With ``renormalize`` the populations are clipped to [0, 1] and rescaled
        to unit sum and the coherence is clipped into [0, sqrt(x2*x3)].  Meant
        for cleaning up output of numerical integrators, whose drift budget is
        ``ATOL_ODE``, not for hiding genuinely invalid states.
        """
        a = np.asarray(arr, dtype=float).reshape(5).copy()
        if renormalize:
            a[:4] = np.clip(a[:4], 0.0, None)
            a[:4] /= a[:4].sum()
            a[4] = min(max(a[4], 0.0), math.sqrt(a[1] * a[2]))
        return cls(*a)

    def to_array(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4, self.x5])

    def populations(self) -> np.ndarray:
        return np.array([self.x1, self.x2, self.x3, self.x4])


@dataclass(frozen=True)
class MeasConfig:
    """Measurement model parameters.

    ``dv``    centered signal levels for |00>,|01>,|10>,|11> (us^(-1/2))
    ``eta_m`` homodyne quantum efficiency, 0 < eta_m <= 1
    ``gamma`` extra dephasing rate of the odd-subspace coherence (us^-1)
    ``dt``    integration step of the record (us)
    ``T``     total measurement time (us)
    """

    dv: tuple[float, float, float, float]
    eta_m: float
    gamma: float
    dt: float
    T: float

    def __post_init__(self):
        object.__setattr__(self, "dv", tuple(float(v) for v in self.dv))
        if len(self.dv) != 4 or not all(math.isfinite(v) for v in self.dv):
            raise ConfigError(f"dv must be four finite signal levels, got {self.dv}")
        if not (0.0 < self.eta_m <= 1.0):
            raise ConfigError(f"eta_m must be in (0, 1], got {self.eta_m}")
        if self.gamma < 0.0:
            raise ConfigError(f"gamma must be nonnegative, got {self.gamma}")
        if self.dt <= 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.T < self.dt:
            raise ConfigError(f"T must be at least one step dt, got T={self.T}, dt={self.dt}")
        if self.dv[3] <= self.dv[0]:
            raise ConfigError(
                f"dv4 must exceed dv1 for a resolvable measurement, got {self.dv}")

    @property
    def s(self) -> float:
        """Gaussian readout scale 1/(2 eta_m); variance over a window t is s/(2t)."""
        return 1.0 / (2.0 * self.eta_m)

    @property
    def delta_v(self) -> float:
        """Half separation of the outer signal levels, (dv4 - dv1)/2."""
        return 0.5 * (self.dv[3] - self.dv[0])

    @property
    def tau_m(self) -> float:
        """Characteristic measurement time 1/(delta_v^2 eta_m)."""
        return 1.0 / (self.delta_v ** 2 * self.eta_m)

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def times(self) -> np.ndarray:
        return time_grid(self.T, self.dt)

    @property
    def is_symmetric(self) -> bool:
        """True when dv2 = dv3 = 0 and -dv1 = dv4 exactly."""
        return self.dv[1] == 0.0 and self.dv[2] == 0.0 and self.dv[0] == -self.dv[3]

    def dv_array(self) -> np.ndarray:
        return np.asarray(self.dv)


@dataclass(frozen=True)
class SymmetricConfig:
    """Shorthand for the perfectly symmetric setup dv = (-dv_mag, 0, 0, +dv_mag)."""

    dv_mag: float
    eta_m: float
    gamma: float
    dt: float
    T: float

    @classmethod
    def from_tau_m(cls, tau_m: float, eta_m: float, gamma: float,
                   dt: float, T: float) -> "SymmetricConfig":
        if tau_m <= 0.0:
            raise ConfigError(f"tau_m must be positive, got {tau_m}")
        return cls(math.sqrt(1.0 / (tau_m * eta_m)), eta_m, gamma, dt, T)

    def to_meas_config(self) -> MeasConfig:
        d = float(self.dv_mag)
        if d <= 0.0:
            raise ConfigError(f"dv_mag must be positive, got {d}")
        return MeasConfig((-d, 0.0, 0.0, d), self.eta_m, self.gamma, self.dt, self.T)


def symmetric_config(*, dv_mag: float | None = None, tau_m: float | None = None,
                     eta_m: float, gamma: float, dt: float, T: float) -> MeasConfig:
    """Build a perfectly symmetric MeasConfig from either dv_mag or tau_m."""
    if (dv_mag is None) == (tau_m is None):
        raise ConfigError("specify exactly one of dv_mag and tau_m")
    if tau_m is not None:
        return SymmetricConfig.from_tau_m(tau_m, eta_m, gamma, dt, T).to_meas_config()
    return SymmetricConfig(dv_mag, eta_m, gamma, dt, T).to_meas_config()


@dataclass(frozen=True)
class DerivedParams:
    """Exponent coefficients of the readout likelihoods for one configuration."""

    s: float
    tau_m: float
    alpha: np.ndarray       # dv_i / s
    beta: np.ndarray        # dv_i^2 / (2 s)
    alpha_23: float
    alpha_14: float
    beta_23: float
    beta_14: float


def derived_params(cfg: MeasConfig) -> DerivedParams:
    """Scalars derived from the signal levels and efficiency."""
    if not (0.0 < cfg.eta_m <= 1.0):
        raise ConfigError(f"eta_m must be in (0, 1], got {cfg.eta_m}")
    dv = cfg.dv_array()
    s = cfg.s
    alpha = dv / s
    beta = dv ** 2 / (2.0 * s)
    return DerivedParams(
        s=s,
        tau_m=cfg.tau_m,
        alpha=alpha,
        beta=beta,
        alpha_23=float(alpha[1] + alpha[2]),
        alpha_14=float(alpha[0] + alpha[3]),
        beta_23=float(beta[1] + beta[2]),
        beta_14=float(beta[0] + beta[3]),
    )


def dephasing_rate(cfg: MeasConfig, i: int, j: int) -> float:
    """Decay rate of the (i, j) coherence under the measurement.

    Coherences between states with distinguishable signals decay at
    (1/eta_m - 1)(dv_i - dv_j)^2 / (4 s).  The odd-subspace pair (2, 3) is
    protected by the measurement; its residual decay is the configured gamma.
    """
    if i not in (1, 2, 3, 4) or j not in (1, 2, 3, 4):
        raise ValueError(f"state indices must be in 1..4, got ({i}, {j})")
    if i == j:
        return 0.0
    if {i, j} == {2, 3}:
        return cfg.gamma
    diff = cfg.dv[i - 1] - cfg.dv[j - 1]
    return (1.0 / cfg.eta_m - 1.0) * diff ** 2 / (4.0 * cfg.s)


def full_matrix(state: XState) -> np.ndarray:
    """The 4x4 real symmetric density matrix of an X-state.

    Eigenvalues are x1, x4 and (x2+x3)/2 +- sqrt(((x2-x3)/2)^2 + x5^2), all
    nonnegative whenever x5 <= sqrt(x2 x3).
    """
    state.validate()
    rho = np.zeros((4, 4))
    rho[0, 0] = state.x1
    rho[1, 1] = state.x2
    rho[2, 2] = state.x3
    rho[3, 3] = state.x4
    rho[1, 2] = rho[2, 1] = state.x5
    return rho


def time_grid(T: float, dt: float) -> np.ndarray:
    """Uniform grid 0, dt, ..., n*dt with n = round(T/dt)."""
    n = int(round(T / dt))
    return np.arange(n + 1) * dt


def random_xstate(gen: np.random.Generator) -> XState:
    """Draw a valid X-state: Dirichlet populations, coherence below its bound."""
    pops = gen.dirichlet(np.ones(4))
    x5 = gen.uniform() * math.sqrt(pops[1] * pops[2])
    return XState(*pops, x5)


# --- flat key-value configuration files -------------------------------------

_FLOAT_KEYS = ("dv1", "dv2", "dv3", "dv4", "eta_m", "gamma", "dt", "T", "tau_m")
_INT_KEYS = ("seed", "n_traj")
CONFIG_KEYS = frozenset(_FLOAT_KEYS + _INT_KEYS)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, value = line.partition("=")
        elif ":" in line:
            key, _, value = line.partition(":")
        else:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key = key.strip()
        value = value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        try:
            out[key] = int(value) if key in _INT_KEYS else float(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    return out


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


def build_meas_config(mapping: dict) -> tuple[MeasConfig, dict]:
    """Assemble a MeasConfig from flat config keys.

    When ``tau_m`` is present the signal levels are the perfectly symmetric
    set with dv_mag = sqrt(1/(tau_m eta_m)); explicit dv1..dv4 keys are then
    rejected.  Returns the config plus the unconsumed extras (seed, n_traj).
    """
    unknown = set(mapping) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = [k for k in ("eta_m", "gamma", "dt", "T") if k not in mapping]
    if missing:
        raise ConfigError(f"missing config keys: {missing}")
    dv_keys = [k for k in ("dv1", "dv2", "dv3", "dv4") if k in mapping]
    if "tau_m" in mapping:
        if dv_keys:
            raise ConfigError(f"tau_m given together with {dv_keys}; use one convention")
        cfg = symmetric_config(tau_m=mapping["tau_m"], eta_m=mapping["eta_m"],
                               gamma=mapping["gamma"], dt=mapping["dt"], T=mapping["T"])
    else:
        if len(dv_keys) != 4:
            raise ConfigError("need all of dv1..dv4 (or tau_m for the symmetric mode)")
        cfg = MeasConfig((mapping["dv1"], mapping["dv2"], mapping["dv3"], mapping["dv4"]),
                         mapping["eta_m"], mapping["gamma"], mapping["dt"], mapping["T"])
    extras = {k: mapping[k] for k in _INT_KEYS if k in mapping}
    return cfg, extras
