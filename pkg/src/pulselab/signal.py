"""Sampled pulse streams: grids, spike trains, measurements and noise.

A measurement is ``y[k] = sum_m c_m g_sigma[k - k_m] + n[k]`` on a finite
window of grid indices ``k_min..k_max``, where ``g_sigma[k] = g(k / (N sigma))``
and the noise obeys ``sum |n[k]| <= delta``.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz

__all__ = [
    "BoundarySpikeWarning",
    "GridConfig",
    "Measurement",
    "NoiseKind",
    "ResourceLimitError",
    "SeparationResult",
    "SpikeTrain",
    "add_noise",
    "check_separation",
    "convolution_matrix",
    "rayleigh_number",
    "sampled_kernel",
    "synthesize",
]

MAX_WINDOW = 100_000
_REL_TOL = 1e-12


class ResourceLimitError(ValueError):
    """The requested operator would exceed the supported window size."""


class BoundarySpikeWarning(UserWarning):
    """A spike sits close enough to the window edge to lose observable mass."""


class NoiseKind(str, enum.Enum):
    UNIFORM_SIGN = "uniform_sign"
    GAUSSIAN_SHAPE = "gaussian_shape"


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GridConfig:
    """Sampling grid: ``N`` samples per unit time, pulse scale ``sigma``.

    The observation window holds the indices ``k_min..k_max`` inclusive.
    """

    N: int
    sigma: float
    k_min: int
    k_max: int

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N or self.N <= 0:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        if int(self.k_min) != self.k_min or int(self.k_max) != self.k_max:
            raise ValueError("k_min and k_max must be integers")
        if self.k_max - self.k_min < 10:
            raise ValueError("window must span at least 10 indices (k_max - k_min >= 10)")
        if self.N * self.sigma < 1:
            raise ValueError("N * sigma must be at least 1")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "k_min", int(self.k_min))
        object.__setattr__(self, "k_max", int(self.k_max))

    @property
    def width(self):
        """Number of samples ``W`` in the window."""
        return self.k_max - self.k_min + 1

    @property
    def n_sigma(self):
        """Samples per pulse width, ``N * sigma``."""
        return self.N * self.sigma

    @property
    def indices(self):
        return np.arange(self.k_min, self.k_max + 1)

    def to_dict(self):
        return {"N": self.N, "sigma": self.sigma, "k_min": self.k_min, "k_max": self.k_max}


@dataclass(frozen=True)
class SpikeTrain:
    """Spikes at strictly increasing integer grid indices with nonzero amplitudes."""

    k: np.ndarray = field(default_factory=lambda: _frozen([], int))
    c: np.ndarray = field(default_factory=lambda: _frozen([]))

    def __post_init__(self):
        k = np.asarray(self.k)
        c = np.asarray(self.c, dtype=float)
        if k.ndim != 1 or c.shape != k.shape:
            raise ValueError("spike indices and amplitudes must be 1-D arrays of equal length")
        if k.size and not np.all(np.asarray(k, dtype=float) == np.round(k)):
            raise ValueError("spike indices must be integers")
        k = k.astype(np.int64)
        if np.any(np.diff(k) <= 0):
            raise ValueError("spike indices must be strictly increasing")
        if np.any(c == 0) or not np.all(np.isfinite(c)):
            raise ValueError("spike amplitudes must be finite and nonzero")
        object.__setattr__(self, "k", _frozen(k, np.int64))
        object.__setattr__(self, "c", _frozen(c))

    @classmethod
    def from_pairs(cls, pairs):
        """Build from ``(k, c)`` pairs in any order."""
        pairs = sorted((int(k), float(c)) for k, c in pairs)
        if not pairs:
            return cls()
        k, c = zip(*pairs)
        return cls(np.array(k), np.array(c))

    @classmethod
    def from_vector(cls, x, grid, threshold=0.0):
        """Read the entries of a window vector with ``|x[k]| > threshold``."""
        x = np.asarray(x, dtype=float)
        idx = np.flatnonzero(np.abs(x) > threshold)
        return cls(idx + grid.k_min, x[idx])

    def __len__(self):
        return int(self.k.size)

    def __eq__(self, other):
        if not isinstance(other, SpikeTrain):
            return NotImplemented
        return np.array_equal(self.k, other.k) and np.array_equal(self.c, other.c)

    __hash__ = None

    def to_vector(self, grid):
        """Dense window vector with the amplitudes placed at their indices."""
        self.check_window(grid)
        x = np.zeros(grid.width)
        x[self.k - grid.k_min] = self.c
        return x

    def check_window(self, grid):
        if len(self) and (self.k[0] < grid.k_min or self.k[-1] > grid.k_max):
            raise ValueError(
                f"spikes must lie in the window [{grid.k_min}, {grid.k_max}], "
                f"got indices {self.k[0]}..{self.k[-1]}"
            )


@dataclass(frozen=True)
class Measurement:
    """Samples ``y`` over the grid window and the noise budget ``delta``.

    ``noise`` holds the injected noise vector when the measurement was
    produced by :func:`add_noise`; it is not part of equality.
    """

    y: np.ndarray
    delta: float
    grid: GridConfig
    noise: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        if y.shape != (self.grid.width,):
            raise ValueError(f"expected {self.grid.width} samples, got shape {y.shape}")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ValueError("delta must be a nonnegative real")
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "delta", float(self.delta))
        if self.noise is not None:
            object.__setattr__(self, "noise", _frozen(self.noise))

    def __eq__(self, other):
        if not isinstance(other, Measurement):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.delta == other.delta
            and np.array_equal(self.y, other.y)
        )

    __hash__ = None


def sampled_kernel(kernel, grid, k):
    """``g_sigma[k] = g(k / (N sigma))``; ``k`` may be an array."""
    return kernel.eval(np.divide(k, grid.n_sigma), 0)


def synthesize(spikes, kernel, grid):
    """Clean samples ``sum_m c_m g_sigma[k - k_m]`` at every window index."""
    spikes.check_window(grid)
    y = np.zeros(grid.width)
    if not len(spikes):
        return y
    margin = 3.0 * grid.n_sigma
    near = (spikes.k - grid.k_min < margin) | (grid.k_max - spikes.k < margin)
    if np.any(near):
        warnings.warn(
            f"spikes at {spikes.k[near].tolist()} lie within {margin:g} samples of the "
            "window boundary; part of their pulse is not observed",
            BoundarySpikeWarning,
            stacklevel=2,
        )
    k = grid.indices
    for km, cm in zip(spikes.k, spikes.c):
        y += cm * kernel.eval((k - km) / grid.n_sigma, 0)
    return y


def add_noise(y_clean, grid, delta, kind=NoiseKind.UNIFORM_SIGN, seed=0):
    """Add noise of the requested shape, rescaled to ``sum |n| = delta`` exactly.

    ``uniform_sign`` draws independent random signs; ``gaussian_shape`` draws
    standard normal entries.  The generator is ``numpy.random.default_rng(seed)``.
    """
    if not (math.isfinite(delta) and delta >= 0):
        raise ValueError("delta must be a nonnegative real")
    y_clean = np.asarray(y_clean, dtype=float)
    kind = NoiseKind(kind)
    if delta == 0:
        return Measurement(y_clean.copy(), 0.0, grid, np.zeros_like(y_clean))
    rng = np.random.default_rng(seed)
    if kind is NoiseKind.UNIFORM_SIGN:
        n = rng.choice([-1.0, 1.0], size=y_clean.shape)
    else:
        n = rng.standard_normal(y_clean.shape)
    n *= delta / np.abs(n).sum()
    return Measurement(y_clean + n, delta, grid, n)


def convolution_matrix(kernel, grid):
    """Dense ``W x W`` operator with ``G[k, j] = g_sigma[k - j]`` over the window."""
    W = grid.width
    if W > MAX_WINDOW:
        raise ResourceLimitError(f"window of {W} samples exceeds the limit of {MAX_WINDOW}")
    column = kernel.eval(np.arange(W) / grid.n_sigma, 0)
    return toeplitz(column)


@dataclass(frozen=True)
class SeparationResult:
    satisfied: bool
    min_gap: float


def check_separation(spikes, nu, grid):
    """Test the minimum index distance against ``nu * sigma * N``.

    Trains with fewer than two spikes are separated with ``min_gap = inf``.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    if len(spikes) < 2:
        return SeparationResult(True, math.inf)
    gap = int(np.diff(spikes.k).min())
    required = nu * grid.n_sigma
    return SeparationResult(gap >= required * (1.0 - _REL_TOL), gap)


def rayleigh_number(spikes, d, grid):
    """Largest number of spike positions ``k_m / N`` inside any open interval of length ``d``.

    An open interval of length ``d`` can hold the points ``p_i..p_j`` exactly
    when ``p_j - p_i < d``; coincidences within a relative ``1e-12`` count as
    touching an endpoint and are excluded.
    """
    if not d > 0:
        raise ValueError("d must be positive")
    if not len(spikes):
        return 0
    p = spikes.k.astype(float) / grid.N
    limit = d * (1.0 - _REL_TOL)
    # for each left point i, count points with p_j < p_i + d
    j = np.searchsorted(p, p + limit, side="left")
    return int(np.max(j - np.arange(p.size)))
