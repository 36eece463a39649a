"""Shared (t, E, x, y) discretization for the value and density solvers.

The channel part is a Markov-chain approximation of the OU generator: every
node jumps to its four neighbours with nonnegative rates. The value solver
applies the generator, the density solver its exact transpose, so both see
the same chain.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
import pandas as pd
from scipy.interpolate import RegularGridInterpolator
from scipy.special import exprel

from .dynamics import OUParams
from .utils import ConfigError

STABILITY_LIMIT = 0.9
MIN_POINTS = 8


@dataclass(frozen=True)
class GridSpec:
    e_max: float = 2.0
    n_e: int = 20
    n_x: int = 16
    n_y: int = 16
    n_t: int = 50
    width: float = 4.0
    min_halfwidth: float = 1.0

    def validate(self) -> "GridSpec":
        for key in ("n_e", "n_x", "n_y"):
            if getattr(self, key) < MIN_POINTS:
                raise ConfigError(
                    f"grid.{key}: need at least {MIN_POINTS} points, "
                    f"got {getattr(self, key)}"
                )
        if self.n_t < 2:
            raise ConfigError(f"grid.n_t: need at least 2 time nodes, got {self.n_t}")
        if self.e_max <= 0:
            raise ConfigError(f"grid.e_max: must be positive, got {self.e_max}")
        if self.width <= 0:
            raise ConfigError(f"grid.width: must be positive, got {self.width}")
        if self.min_halfwidth <= 0:
            raise ConfigError(
                f"grid.min_halfwidth: must be positive, got {self.min_halfwidth}"
            )
        return self


@dataclass(frozen=True)
class GridAxes:
    t: np.ndarray
    E: np.ndarray
    x: np.ndarray
    y: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def dE(self) -> float:
        return float(self.E[1] - self.E[0])

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    @property
    def cell_volume(self) -> float:
        return self.dE * self.dx * self.dy

    @property
    def shape(self) -> Tuple[int, int, int]:
        """Shape of one time slice (n_E, n_x, n_y)."""
        return (len(self.E), len(self.x), len(self.y))

    @property
    def h2(self) -> np.ndarray:
        """|h|^2 over the channel plane, shape (n_x, n_y)."""
        return self.x[:, None] ** 2 + self.y[None, :] ** 2


def build_axes(
    grid: GridSpec, ou: OUParams, t_start: float, t_end: float
) -> GridAxes:
    grid.validate()
    if not t_end > t_start:
        raise ConfigError(f"game.t_end: must exceed t_start ({t_end} <= {t_start})")
    half = grid.width * ou.eta if ou.eta > 0 else grid.min_halfwidth
    return GridAxes(
        t=np.linspace(t_start, t_end, grid.n_t),
        E=np.linspace(0.0, grid.e_max, grid.n_e),
        x=np.linspace(ou.mu[0] - half, ou.mu[0] + half, grid.n_x),
        y=np.linspace(ou.mu[1] - half, ou.mu[1] + half, grid.n_y),
    )


@dataclass
class GridField:
    """Values over (t, E, x, y) with multilinear lookup."""

    axes: GridAxes
    values: np.ndarray
    name: str = "value"
    _interp: Optional[RegularGridInterpolator] = field(
        default=None, init=False, repr=False
    )

    def __post_init__(self) -> None:
        expected = (len(self.axes.t),) + self.axes.shape
        if self.values.shape != expected:
            raise ValueError(
                f"GridField {self.name}: shape {self.values.shape}, expected {expected}"
            )

    def slice(self, k: int) -> np.ndarray:
        return self.values[k]

    def __call__(
        self, t: float, E: np.ndarray, h: np.ndarray
    ) -> np.ndarray:
        """Interpolate at time ``t`` for points E[n], h[n, 2]; clipped to the box."""
        if self._interp is None:
            ax = self.axes
            self._interp = RegularGridInterpolator(
                (ax.t, ax.E, ax.x, ax.y), self.values, method="linear"
            )
        ax = self.axes
        E = np.asarray(E, dtype=float).reshape(-1)
        h = np.asarray(h, dtype=float).reshape(-1, 2)
        pts = np.column_stack(
            [
                np.full(len(E), np.clip(t, ax.t[0], ax.t[-1])),
                np.clip(E, ax.E[0], ax.E[-1]),
                np.clip(h[:, 0], ax.x[0], ax.x[-1]),
                np.clip(h[:, 1], ax.y[0], ax.y[-1]),
            ]
        )
        return self._interp(pts)

    def to_frame(self, every: int = 1) -> pd.DataFrame:
        """Long table (t, E, h_x, h_y, <name>) of every ``every``-th time slice."""
        ax = self.axes
        ks = np.arange(0, len(ax.t), max(every, 1))
        T, E, X, Y = np.meshgrid(ax.t[ks], ax.E, ax.x, ax.y, indexing="ij")
        return pd.DataFrame(
            {
                "t": T.ravel(),
                "E": E.ravel(),
                "h_x": X.ravel(),
                "h_y": Y.ravel(),
                self.name: self.values[ks].ravel(),
            }
        )


def _face_rates(
    nodes: np.ndarray, mu: float, eta: float
) -> Tuple[np.ndarray, np.ndarray]:
    """Rates across each face (i -> i+1 and i+1 -> i) for one OU component.

    Exponentially fitted (Scharfetter-Gummel) fluxes when eta > 0: the sampled
    Gaussian satisfies detailed balance on the chain. Plain upwind when eta = 0.
    """
    step = nodes[1] - nodes[0]
    drift = 0.5 * (mu - 0.5 * (nodes[:-1] + nodes[1:]))
    if eta == 0:
        return np.maximum(drift, 0.0) / step, np.maximum(-drift, 0.0) / step
    diff = 0.5 * eta**2
    peclet = drift * step / diff
    scale = diff / step**2
    return scale / exprel(-peclet), scale / exprel(peclet)


class ChannelOperator:
    """Markov-chain channel generator on the (x, y) plane with no-flux edges."""

    def __init__(self, axes: GridAxes, ou: OUParams):
        self.up_x, self.down_x = _face_rates(axes.x, ou.mu[0], ou.eta)
        self.up_y, self.down_y = _face_rates(axes.y, ou.mu[1], ou.eta)

    @staticmethod
    def _gen_last(v: np.ndarray, up: np.ndarray, down: np.ndarray) -> np.ndarray:
        out = np.zeros_like(v)
        d = np.diff(v, axis=-1)
        out[..., :-1] += up * d
        out[..., 1:] -= down * d
        return out

    @staticmethod
    def _trans_last(M: np.ndarray, up: np.ndarray, down: np.ndarray) -> np.ndarray:
        flux = up * M[..., :-1] - down * M[..., 1:]
        out = np.zeros_like(M)
        out[..., :-1] -= flux
        out[..., 1:] += flux
        return out

    def generator(self, v: np.ndarray) -> np.ndarray:
        """(L v) on arrays whose last two axes are (x, y)."""
        gx = np.swapaxes(
            self._gen_last(np.swapaxes(v, -1, -2), self.up_x, self.down_x), -1, -2
        )
        return gx + self._gen_last(v, self.up_y, self.down_y)

    def transport(self, M: np.ndarray) -> np.ndarray:
        """(L^T M) for cell masses; sums to zero over the plane."""
        tx = np.swapaxes(
            self._trans_last(np.swapaxes(M, -1, -2), self.up_x, self.down_x), -1, -2
        )
        return tx + self._trans_last(M, self.up_y, self.down_y)

    @staticmethod
    def _out_rate(up: np.ndarray, down: np.ndarray) -> np.ndarray:
        out = np.zeros(len(up) + 1)
        out[:-1] += up
        out[1:] += down
        return out

    def max_out_rate(self) -> float:
        return float(
            self._out_rate(self.up_x, self.down_x).max()
            + self._out_rate(self.up_y, self.down_y).max()
        )


def energy_generator(v: np.ndarray, power: np.ndarray, dE: float) -> np.ndarray:
    """Battery drain -p dv/dE as a jump E_i -> E_{i-1} at rate p/dE (axis 0)."""
    out = np.zeros_like(v)
    out[1:] = power[1:] / dE * (v[:-1] - v[1:])
    return out


def energy_transport(M: np.ndarray, power: np.ndarray, dE: float) -> np.ndarray:
    flow = power[1:] / dE * M[1:]
    out = np.zeros_like(M)
    out[1:] -= flow
    out[:-1] += flow
    return out


def backward_difference(v: np.ndarray, dE: float) -> np.ndarray:
    """(v_i - v_{i-1}) / dE along axis 0; row 0 copies row 1."""
    d = np.empty_like(v)
    d[1:] = (v[1:] - v[:-1]) / dE
    d[0] = d[1]
    return d


def check_stability(axes: GridAxes, operator: ChannelOperator, p_max: float) -> float:
    """Raise ConfigError unless dt (p_max/dE + max channel out-rate) <= 0.9."""
    number = axes.dt * (p_max / axes.dE + operator.max_out_rate())
    if number > STABILITY_LIMIT:
        raise ConfigError(
            f"grid.n_t: explicit step unstable, dt*(p_max/dE + channel rate) = "
            f"{number:.4g} > {STABILITY_LIMIT} (dt={axes.dt:.4g}, dE={axes.dE:.4g}); "
            "increase grid.n_t or decrease grid.n_e"
        )
    return number
