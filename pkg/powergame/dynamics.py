"""Battery drain and Ornstein-Uhlenbeck channel dynamics of a generic player.

    dE = -p dt                      (absorbing at E = 0)
    dh = 1/2 (mu - h) dt + eta dW   (h = (x, y), W a 2-D Brownian motion)
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.stats import norm

from .utils import DomainError, counter_rng, keyed_stream, map_concurrently

logger = logging.getLogger(__name__)

# (t, E[K], h[K, 2], I[K]) -> p[K]
PowerRule = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]

STEPPERS = ("euler", "exact")


@dataclass(frozen=True)
class OUParams:
    mu: Tuple[float, float] = (1.0, 0.0)
    eta: float = 0.5

    def __post_init__(self) -> None:
        mu = tuple(float(c) for c in np.asarray(self.mu, dtype=float).reshape(-1))
        if len(mu) != 2 or not all(np.isfinite(mu)):
            raise DomainError(f"OUParams: mu must be a finite 2-vector, got {self.mu}")
        if not np.isfinite(self.eta) or self.eta < 0:
            raise DomainError(f"OUParams: eta must be finite and >= 0, got {self.eta}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "eta", float(self.eta))

    @property
    def mu_vec(self) -> np.ndarray:
        return np.array(self.mu)

    @property
    def mean_channel_power(self) -> float:
        """Stationary E|h|^2 = |mu|^2 + 2 eta^2."""
        return float(self.mu[0] ** 2 + self.mu[1] ** 2 + 2 * self.eta**2)


@dataclass(frozen=True)
class GenericState:
    E: float
    h: np.ndarray

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=float).reshape(2)
        object.__setattr__(self, "h", h)
        if self.E < 0:
            raise DomainError(f"GenericState: E must be >= 0, got {self.E}")


class Path(NamedTuple):
    t: np.ndarray
    E: np.ndarray
    h: np.ndarray
    p: np.ndarray


def euler_update(
    E: np.ndarray,
    h: np.ndarray,
    p: np.ndarray,
    dt: float,
    noise: np.ndarray,
    ou: OUParams,
) -> Tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama step on arrays; E has shape (n,), h and noise (n, 2)."""
    E_next = np.maximum(0.0, E - p * dt)
    h_next = h + 0.5 * (ou.mu_vec - h) * dt + ou.eta * np.sqrt(dt) * noise
    return E_next, h_next


def exact_update(
    E: np.ndarray,
    h: np.ndarray,
    p: np.ndarray,
    dt: float,
    noise: np.ndarray,
    ou: OUParams,
) -> Tuple[np.ndarray, np.ndarray]:
    """Exact OU transition: mean decay exp(-dt/2), variance eta^2 (1 - exp(-dt))."""
    decay = np.exp(-0.5 * dt)
    E_next = np.maximum(0.0, E - p * dt)
    h_next = ou.mu_vec + (h - ou.mu_vec) * decay
    h_next = h_next + ou.eta * np.sqrt(-np.expm1(-dt)) * noise
    return E_next, h_next


def _check_step(power: float, dt: float) -> None:
    if dt <= 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if power < 0:
        raise DomainError(f"power must be >= 0, got {power}")


def step_state(
    state: GenericState, power: float, dt: float, noise: Sequence[float], ou: OUParams
) -> GenericState:
    _check_step(power, dt)
    E, h = euler_update(
        np.array([state.E]), state.h[None, :], np.array([power]), dt,
        np.asarray(noise, dtype=float).reshape(1, 2), ou,
    )
    return GenericState(float(E[0]), h[0])


def exact_step(
    state: GenericState, power: float, dt: float, noise: Sequence[float], ou: OUParams
) -> GenericState:
    _check_step(power, dt)
    E, h = exact_update(
        np.array([state.E]), state.h[None, :], np.array([power]), dt,
        np.asarray(noise, dtype=float).reshape(1, 2), ou,
    )
    return GenericState(float(E[0]), h[0])


def transient_moments(
    h0: Sequence[float], ou: OUParams, t: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and per-component second moment of h(t) started from h0.

    E[x^2](t) = x0^2 e^-t + (mu^2 + eta^2)(1 - e^-t) + 2 mu (x0 - mu)(e^-t/2 - e^-t)
    """
    if t < 0:
        raise DomainError(f"transient_moments: t must be >= 0, got {t}")
    h0 = np.asarray(h0, dtype=float).reshape(2)
    mu = ou.mu_vec
    half = np.exp(-0.5 * t)
    full = np.exp(-t)
    mean = mu * (1 - half) + h0 * half
    second = (
        h0**2 * full
        + (mu**2 + ou.eta**2) * (1 - full)
        + 2 * mu * (h0 - mu) * (half - full)
    )
    return mean, second


def stationary_density(ou: OUParams, h: np.ndarray) -> Union[float, np.ndarray]:
    """Product of the two N(mu_c, eta^2) marginals at points ``h[..., 2]``."""
    if ou.eta <= 0:
        raise DomainError("stationary_density: eta = 0 gives a degenerate (Dirac) law")
    h = np.asarray(h, dtype=float)
    vals = norm.pdf(h[..., 0], ou.mu[0], ou.eta) * norm.pdf(h[..., 1], ou.mu[1], ou.eta)
    return float(vals) if vals.ndim == 0 else vals


def stationary_residual(ou: OUParams, h: np.ndarray) -> np.ndarray:
    """Residual of -div(b m) + eta^2/2 Lap m = 0 for the Gaussian density.

    Uses the closed-form derivatives of the density; b = (mu - h)/2.
    """
    h = np.asarray(h, dtype=float)
    m = stationary_density(ou, h)
    s2 = ou.eta**2
    out = np.zeros(np.shape(m))
    for c in range(2):
        u = h[..., c] - ou.mu[c]
        dm = -u / s2 * m
        d2m = (u**2 / s2**2 - 1 / s2) * m
        # b_c = -u/2, db_c/dh_c = -1/2
        div = -0.5 * m + (-0.5 * u) * dm
        out = out - div + 0.5 * s2 * d2m
    return out


def sample_stationary(ou: OUParams, n: int, rng: np.random.Generator) -> np.ndarray:
    return ou.mu_vec + ou.eta * rng.standard_normal((n, 2))


def draw_noise(rng: np.random.Generator, n_steps: int) -> np.ndarray:
    """One path's noise block, shape (n_steps, 2)."""
    return rng.standard_normal((n_steps, 2))


def simulate_path(
    e0: float,
    h0: Optional[Sequence[float]],
    ou: OUParams,
    dt: float,
    n_steps: int,
    rng: np.random.Generator,
    policy: Optional[PowerRule] = None,
    t0: float = 0.0,
    stepper: str = "euler",
) -> Path:
    """Single path driven by one stream.

    ``h0=None`` draws the starting channel from the stationary law first, then
    the noise block is drawn; the simulator uses the same order.
    """
    if stepper not in STEPPERS:
        raise DomainError(f"simulate_path: unknown stepper {stepper!r}")
    if dt <= 0 or n_steps < 0:
        raise DomainError("simulate_path: need dt > 0 and n_steps >= 0")
    update = euler_update if stepper == "euler" else exact_update
    if h0 is None:
        h = sample_stationary(ou, 1, rng)
    else:
        h = np.asarray(h0, dtype=float).reshape(1, 2)
    noise = draw_noise(rng, n_steps)
    E = np.array([float(e0)])
    zero = np.zeros(1)

    ts = t0 + dt * np.arange(n_steps + 1)
    Es = np.empty(n_steps + 1)
    hs = np.empty((n_steps + 1, 2))
    ps = np.zeros(n_steps + 1)
    for n in range(n_steps + 1):
        Es[n] = E[0]
        hs[n] = h[0]
        p = np.zeros(1) if policy is None else np.asarray(policy(ts[n], E, h, zero))
        p = np.where(E > 0, p, 0.0)
        ps[n] = p[0]
        if n < n_steps:
            E, h = update(E, h, p, dt, noise[n : n + 1], ou)
    return Path(ts, Es, hs, ps)


def _batch(args: Tuple) -> np.ndarray:
    seed, b, n, e0, h0, ou, dt, n_steps, stepper = args
    rng = counter_rng(keyed_stream(seed, b))
    update = euler_update if stepper == "euler" else exact_update
    if h0 is None:
        h = sample_stationary(ou, n, rng)
    else:
        h = np.tile(np.asarray(h0, dtype=float), (n, 1))
    E = np.full(n, float(e0))
    p = np.zeros(n)
    out = np.empty((n_steps + 1, n, 3))
    out[0, :, 0], out[0, :, 1:] = E, h
    for k in range(n_steps):
        E, h = update(E, h, p, dt, rng.standard_normal((n, 2)), ou)
        out[k + 1, :, 0], out[k + 1, :, 1:] = E, h
    return out


def simulate_paths(
    n_paths: int,
    ou: OUParams,
    dt: float,
    n_steps: int,
    seed: int,
    h0: Optional[Sequence[float]] = None,
    e0: float = 0.0,
    batch_size: int = 10_000,
    threads: int = 1,
    stepper: str = "euler",
) -> np.ndarray:
    """Batched zero-power Monte Carlo; returns (n_steps + 1, n_paths, 3) of (E, x, y).

    Batch ``b`` draws from its own keyed stream, so the result does not depend
    on ``threads``.
    """
    if stepper not in STEPPERS:
        raise DomainError(f"simulate_paths: unknown stepper {stepper!r}")
    sizes: List[int] = []
    left = n_paths
    while left > 0:
        sizes.append(min(batch_size, left))
        left -= sizes[-1]
    jobs = [
        (seed, b, n, e0, h0, ou, dt, n_steps, stepper) for b, n in enumerate(sizes)
    ]
    logger.debug("simulate_paths: %d paths in %d batches", n_paths, len(jobs))
    parts = map_concurrently(_batch, jobs, threads=threads)
    return np.concatenate(parts, axis=1)
