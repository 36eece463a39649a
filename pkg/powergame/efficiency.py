"""Efficiency functions and the scalar problems derived from them.

An efficiency function ``f`` maps SINR to packet success rate. Everything the
solvers need from it is computed here: the static operating point beta*, the
shadow-price thresholds, the optimal SINR gamma*(theta) and the pointwise
Hamiltonian of the power-control problem.
"""

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .utils import ConfigError, DomainError, NumericalError

ArrayLike = Union[float, np.ndarray]

ROOT_TOL = 1e-10
EXISTENCE_FLAG = 1e-8
_EPS = np.finfo(float).eps
_TABLE_SIZE = 4097


class Family(str, Enum):
    EXPONENTIAL = "exponential"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class EfficiencySpec:
    """Sigmoidal packet-success-rate function.

    ``exponential``: f(x) = exp(-a/x), a > 0.
    ``sigmoid``: f(x) = (1 - exp(-x))**m, integer m >= 2.
    """

    family: Family = Family.EXPONENTIAL
    a: float = 1.0
    m: int = 10

    def __post_init__(self) -> None:
        try:
            object.__setattr__(self, "family", Family(self.family))
        except ValueError:
            raise ConfigError(
                f"efficiency.family: unknown family {self.family!r} "
                f"(expected one of {[f.value for f in Family]})"
            )
        if self.family is Family.EXPONENTIAL:
            if not np.isfinite(self.a) or self.a <= 0:
                raise ConfigError(f"efficiency.a: must be positive, got {self.a}")
        else:
            if int(self.m) != self.m or self.m < 1:
                raise ConfigError(
                    f"efficiency.m: must be a positive integer, got {self.m}"
                )
            object.__setattr__(self, "m", int(self.m))
            if self.m == 1:
                raise ConfigError(
                    "efficiency.m: m = 1 gives f'(0) = 1 > 0, which is not sigmoidal"
                )
        _check_single_crossing(self)

    @property
    def label(self) -> str:
        if self.family is Family.EXPONENTIAL:
            return f"exponential(a={self.a:g})"
        return f"sigmoid(m={self.m})"


class ThresholdPoint(NamedTuple):
    value: float
    at: float
    # False when the sup is only approached as gamma -> 0+
    attained: bool = True


class ExistenceReport(NamedTuple):
    theta: np.ndarray
    gamma: np.ndarray
    margin: np.ndarray
    closed_form_margin: np.ndarray
    min_margin: float
    flagged: Tuple[float, ...]


def _f_all(spec: EfficiencySpec, x: np.ndarray) -> Tuple[np.ndarray, ...]:
    """f, f', f'' on a nonnegative array."""
    x = np.asarray(x, dtype=float)
    if spec.family is Family.EXPONENTIAL:
        a = spec.a
        pos = x > 0
        with np.errstate(all="ignore"):
            inv = np.divide(1.0, x, out=np.zeros_like(x), where=pos)
            e = np.where(pos, np.exp(-a * inv), 0.0)
            d1 = a * inv**2 * e
            d2 = (a**2 * inv**4 - 2 * a * inv**3) * e
        # x -> 0+ limits are 0 for all three; inf * 0 shows up as nan
        d1 = np.where(pos & np.isfinite(d1), d1, 0.0)
        d2 = np.where(pos & np.isfinite(d2), d2, 0.0)
        return e, d1, d2
    m = spec.m
    with np.errstate(under="ignore"):
        e = np.exp(-x)
        s = -np.expm1(-x)
        f = s**m
        d1 = m * s ** (m - 1) * e
        d2 = m * e * s ** (m - 2) * (m * e - 1)
    return f, d1, d2


def _check_single_crossing(spec: EfficiencySpec) -> None:
    x = np.geomspace(1e-3, 1e3, 2000) * _scale(spec)
    f, d1, _ = _f_all(spec, x)
    gap = x * d1 - f
    signs = np.sign(gap[np.abs(gap) > 1e-300])
    changes = np.count_nonzero(np.diff(signs))
    if changes != 1:
        raise ConfigError(
            f"efficiency: x f'(x) - f(x) changes sign {changes} times for "
            f"{spec.label}; exactly one sign change is required"
        )


def _scale(spec: EfficiencySpec) -> float:
    return spec.a if spec.family is Family.EXPONENTIAL else max(np.log(spec.m), 1.0)


def eval_f(spec: EfficiencySpec, gamma: ArrayLike, derivative: int = 0) -> ArrayLike:
    """Evaluate f (or f', f'') at SINR values ``gamma >= 0``."""
    arr = np.asarray(gamma, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError(f"eval_f: SINR must be nonnegative, got {gamma!r}")
    if derivative not in (0, 1, 2):
        raise DomainError(f"eval_f: derivative must be 0, 1 or 2, got {derivative}")
    out = _f_all(spec, arr)[derivative]
    return float(out) if np.ndim(gamma) == 0 else out


def inflection_point(spec: EfficiencySpec) -> float:
    if spec.family is Family.EXPONENTIAL:
        return spec.a / 2.0
    return float(np.log(spec.m))


def _gap(spec: EfficiencySpec, x: ArrayLike) -> ArrayLike:
    f, d1, _ = _f_all(spec, np.asarray(x, dtype=float))
    return x * d1 - f


def stationarity_gap(spec: EfficiencySpec, gamma: ArrayLike) -> ArrayLike:
    """g(gamma) = (f'(gamma) gamma - f(gamma)) / gamma**2, for gamma > 0."""
    x = np.asarray(gamma, dtype=float)
    f, d1, _ = _f_all(spec, x)
    out = (d1 * x - f) / x**2
    return float(out) if np.ndim(gamma) == 0 else out


def _gap_slope(spec: EfficiencySpec, x: np.ndarray) -> np.ndarray:
    f, d1, d2 = _f_all(spec, x)
    return d2 / x - 2 * (d1 * x - f) / x**3


@lru_cache(maxsize=None)
def beta_star(spec: EfficiencySpec) -> float:
    """Root of x f'(x) - f(x) = 0 above the inflection point."""
    lo = inflection_point(spec)
    if _gap(spec, lo) <= 0:
        raise NumericalError(
            f"beta_star: x f' - f is not positive at the inflection point "
            f"x_I = {lo:g} for {spec.label}"
        )
    hi = 2 * lo
    for _ in range(200):
        if _gap(spec, hi) < 0:
            break
        lo, hi = hi, 2 * hi
    else:
        raise NumericalError(f"beta_star: no sign change found for {spec.label}")
    root = brentq(
        lambda x: float(_gap(spec, x)), lo, hi, xtol=1e-14, rtol=4 * _EPS
    )
    # Newton polish: d/dx (x f' - f) = x f''
    for _ in range(3):
        _, _, d2 = _f_all(spec, np.array(root))
        slope = root * float(d2)
        if slope == 0:
            break
        step = float(_gap(spec, root)) / slope
        if not np.isfinite(step) or abs(step) > 1e-6 * root:
            break
        root -= step
    residual = abs(float(_gap(spec, root)))
    if residual >= ROOT_TOL:
        raise NumericalError(
            f"beta_star: residual {residual:.3e} above {ROOT_TOL:g} for {spec.label}"
        )
    return float(root)


def _grid_argmax(
    func, lo: float, hi: float, limit_at_zero: float, n: int = 2001
) -> ThresholdPoint:
    """Global max on (0, hi]: dense scan, then bounded Brent on the best cell.

    A scan maximum on the first node means the function is still rising
    towards gamma -> 0+; the analytic limit is returned, marked not attained.
    """
    grid = np.geomspace(lo, hi, n)
    vals = func(grid)
    k = int(np.nanargmax(vals))
    if k == 0:
        return ThresholdPoint(float(limit_at_zero), 0.0, attained=False)
    a = grid[max(k - 1, 0)]
    b = grid[min(k + 1, n - 1)]
    res = minimize_scalar(
        lambda x: -float(func(np.array(x))),
        bounds=(a, b),
        method="bounded",
        options={"xatol": 1e-13 * max(b, 1.0)},
    )
    best_x, best_v = float(res.x), -float(res.fun)
    if vals[k] > best_v:
        best_x, best_v = float(grid[k]), float(vals[k])
    return ThresholdPoint(best_v, best_x)


def _lower_limit(spec: EfficiencySpec) -> float:
    return beta_star(spec) * 1e-6


def _curvature_at_zero(spec: EfficiencySpec) -> float:
    """f''(0); nonzero only for the sigmoid with m = 2."""
    return float(_f_all(spec, np.array(0.0))[2])


@lru_cache(maxsize=None)
def theta_max(spec: EfficiencySpec) -> ThresholdPoint:
    """sup over gamma > 0 of g(gamma), with its maximizer."""
    return _grid_argmax(
        lambda x: stationarity_gap(spec, x),
        _lower_limit(spec),
        beta_star(spec),
        _curvature_at_zero(spec) / 2,
    )


@lru_cache(maxsize=None)
def shutdown_threshold(spec: EfficiencySpec) -> ThresholdPoint:
    """theta_off = sup f(gamma)/gamma**2 and its maximizer gamma_c.

    For theta >= theta_off no positive SINR beats switching off.
    """

    def ratio(x: np.ndarray) -> np.ndarray:
        return _f_all(spec, x)[0] / x**2

    return _grid_argmax(
        ratio, _lower_limit(spec), beta_star(spec), _curvature_at_zero(spec) / 2
    )


@lru_cache(maxsize=None)
def max_curvature(spec: EfficiencySpec) -> ThresholdPoint:
    """max of f'' and where it is attained (below the inflection point)."""
    return _grid_argmax(
        lambda x: _f_all(spec, x)[2],
        _lower_limit(spec),
        inflection_point(spec),
        _curvature_at_zero(spec),
    )


def _branch_start(spec: EfficiencySpec, point: ThresholdPoint) -> float:
    # a sup reached only at 0+ leaves the scan's first node as the bracket end
    return point.at if point.attained else _lower_limit(spec)


def _root_on_decreasing_branch(
    spec: EfficiencySpec, theta: float, lo: float
) -> float:
    hi = beta_star(spec)
    if theta <= 0:
        return hi
    if stationarity_gap(spec, lo) - theta <= 0:
        # theta within round-off of the branch top
        return lo
    return float(
        brentq(
            lambda x: float(stationarity_gap(spec, x)) - theta,
            lo,
            hi,
            xtol=1e-14,
            rtol=4 * _EPS,
        )
    )


def gamma_star(spec: EfficiencySpec, theta: float) -> float:
    """Optimal SINR for the normalized shadow price ``theta``.

    Returns the largest root of g(gamma) = theta while that stationary point
    beats switching off, and 0 otherwise. ``theta = 0`` gives beta*.
    The map is continuous and decreasing on [0, theta_off) and jumps from
    gamma_c to 0 at theta_off = shutdown_threshold(spec). theta_max >= theta_off
    only bounds the stationary branch.
    """
    if theta < 0 or np.isnan(theta):
        raise DomainError(f"gamma_star: theta must be nonnegative, got {theta}")
    off = shutdown_threshold(spec)
    if theta >= off.value:
        return 0.0
    return _root_on_decreasing_branch(spec, theta, _branch_start(spec, off))


def stationary_gamma(spec: EfficiencySpec, theta: float) -> float:
    """Largest root of g(gamma) = theta, defined for 0 <= theta < theta_max."""
    top = theta_max(spec)
    if theta < 0 or theta >= top.value:
        raise DomainError(
            f"stationary_gamma: theta must lie in [0, {top.value:.6g}), got {theta}"
        )
    return _root_on_decreasing_branch(spec, theta, _branch_start(spec, top))


@lru_cache(maxsize=None)
def _gamma_table(spec: EfficiencySpec) -> Tuple[np.ndarray, np.ndarray]:
    off = shutdown_threshold(spec)
    lo, hi = _branch_start(spec, off), beta_star(spec)
    u = 0.5 - 0.5 * np.cos(np.linspace(0.0, np.pi, _TABLE_SIZE))
    gam = lo + (hi - lo) * u
    th = stationarity_gap(spec, gam)
    th[-1] = 0.0
    # increasing theta for np.interp
    return th[::-1].copy(), gam[::-1].copy()


def gamma_star_array(spec: EfficiencySpec, theta: ArrayLike) -> np.ndarray:
    """Vectorized gamma_star (tabulated inverse plus Newton polish)."""
    th = np.asarray(theta, dtype=float)
    shape = th.shape
    th = th.reshape(-1)
    off = shutdown_threshold(spec)
    b = beta_star(spec)
    lo = _branch_start(spec, off)
    table_th, table_g = _gamma_table(spec)
    active = (th < off.value) & (th > 0)
    out = np.where(th >= off.value, 0.0, b)
    if np.any(active):
        t = th[active]
        g = np.interp(t, table_th, table_g)
        for _ in range(3):
            slope = _gap_slope(spec, g)
            step = np.divide(
                stationarity_gap(spec, g) - t,
                slope,
                out=np.zeros_like(g),
                where=slope < 0,
            )
            g = np.clip(g - step, lo, b)
        out[active] = g
    return out.reshape(shape)


def reward_rate(
    spec: EfficiencySpec, rate: float, c: ArrayLike, p: ArrayLike
) -> np.ndarray:
    """Instantaneous utility R f(c p) / p, extended by 0 at p = 0."""
    c = np.asarray(c, dtype=float)
    p = np.asarray(p, dtype=float)
    c, p = np.broadcast_arrays(c, p)
    gamma = c * p
    f = _f_all(spec, np.maximum(gamma, 0.0))[0]
    return np.divide(rate * f, p, out=np.zeros(p.shape), where=p > 0)


def hamiltonian_array(
    spec: EfficiencySpec,
    c: ArrayLike,
    v_e: ArrayLike,
    rate: float,
    p_max: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Pointwise sup over p in [0, p_max] of R f(c p)/p - p v_E.

    Returns ``(H, p_star)``. Negative shadow prices are clamped to 0.
    """
    objective, p, on = _on_branch(spec, c, v_e, rate, p_max)
    return np.where(on, objective, 0.0), np.where(on, p, 0.0)


def _on_branch(
    spec: EfficiencySpec,
    c: ArrayLike,
    v_e: ArrayLike,
    rate: float,
    p_max: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best positive power, its objective, and whether it beats p = 0.

    Above theta_off the candidate stays at gamma_c / c (capped), so the
    objective is continuous in (c, v_E) and changes sign at the switch-off.
    """
    c, v_e = np.broadcast_arrays(
        np.asarray(c, dtype=float), np.asarray(v_e, dtype=float)
    )
    v_e = np.maximum(v_e, 0.0)
    valid = (c > 0) & (rate > 0)
    if not np.any(valid):
        zeros = np.zeros(c.shape)
        return zeros, zeros.copy(), np.zeros(c.shape, dtype=bool)
    off = shutdown_threshold(spec)
    c_safe = np.where(valid, c, 1.0)
    theta = np.where(valid, v_e / (max(rate, 1e-300) * c_safe**2), np.inf)
    gam = np.where(
        theta >= off.value, _branch_start(spec, off), gamma_star_array(spec, theta)
    )
    p = np.where(valid, gam / c_safe, 0.0)
    capped = p > p_max
    p = np.minimum(p, p_max)
    objective = np.where(valid, reward_rate(spec, rate, c_safe, p) - p * v_e, 0.0)
    # with the cap active the interior optimum is gone; compare against p = 0
    on = valid & (theta < off.value) & ~(capped & (objective < 0))
    return objective, p, on


def switch_objective(
    spec: EfficiencySpec,
    c: ArrayLike,
    v_e: ArrayLike,
    rate: float,
    p_max: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """``(J_on, p_on)``: the best positive power and its signed objective.

    H = max(J_on, 0); the transmitter is off where J_on < 0.
    """
    objective, p, _ = _on_branch(spec, c, v_e, rate, p_max)
    return objective, p


def hamiltonian(
    spec: EfficiencySpec, c: float, v_e: float, rate: float, p_max: float
) -> Tuple[float, float]:
    """Scalar Hamiltonian: ``(H value, optimal power)``."""
    if c <= 0 or rate < 0 or p_max <= 0:
        raise DomainError(
            f"hamiltonian: need c > 0, R >= 0, p_max > 0 (got c={c}, R={rate}, "
            f"p_max={p_max})"
        )
    h, p = hamiltonian_array(spec, c, v_e, rate, p_max)
    return float(h), float(p)


def shutdown_curve(
    spec: EfficiencySpec, c: float, rate: float, p_max: float, v_e: np.ndarray
) -> np.ndarray:
    """Optimal power along a sweep of shadow prices at a fixed gain ratio."""
    _, p = hamiltonian_array(spec, np.full(len(v_e), c), v_e, rate, p_max)
    return p


def existence_check(spec: EfficiencySpec, theta_grid: Sequence[float]) -> ExistenceReport:
    """Margins |2 theta0 - f''(gamma0)| along the stationary branch."""
    thetas = np.asarray(theta_grid, dtype=float)
    gammas = np.array([stationary_gamma(spec, float(t)) for t in thetas])
    d2 = _f_all(spec, gammas)[2]
    margin = np.abs(2 * thetas - d2)
    closed = np.full_like(thetas, np.nan)
    if spec.family is Family.EXPONENTIAL:
        a = spec.a
        pos = (thetas > 0) & (np.abs(a - gammas) > 0)
        g = gammas[pos]
        t = thetas[pos]
        closed[pos] = np.abs(2 * t - (a / g - 2) * a * t / (a - g))
    flagged = tuple(float(t) for t, m in zip(thetas, margin) if m < EXISTENCE_FLAG)
    return ExistenceReport(
        theta=thetas,
        gamma=gammas,
        margin=margin,
        closed_form_margin=closed,
        min_margin=float(margin.min()) if len(margin) else float("nan"),
        flagged=flagged,
    )
