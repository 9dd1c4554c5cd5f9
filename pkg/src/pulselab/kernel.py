"""Pulse kernels and the admissibility machinery.

A kernel is an even, real pulse shape ``g`` together with its first three
derivatives.  Gaussian and Cauchy kernels use closed-form derivatives;
tabulated kernels are built from samples of ``g`` on a uniform grid.

Admissibility requires

1. ``g`` even;
2. ``|g^(l)(t)| <= C_l / (1 + t^2)`` for ``l = 0..3`` (global decay);
3. a peak of half-width ``epsilon``: ``g > 0`` on ``|t| <= epsilon``,
   ``g(t) < g(epsilon)`` outside it (3a), and ``g'' < -beta`` inside it (3b).

The constants are estimated numerically by dense grid scans; nothing is
hardcoded, so tabulated kernels go through the same path as the analytic
ones.
"""
from __future__ import annotations

import enum
import functools
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline

__all__ = [
    "AdmissibilityConstants",
    "CauchyKernel",
    "Family",
    "GaussianKernel",
    "Kernel",
    "NotAdmissible",
    "TabulatedKernel",
    "UnverifiedTailWarning",
    "cauchy",
    "check_admissible",
    "estimate_global_constants",
    "estimate_local_constants",
    "from_spec",
    "gaussian",
    "tabulated",
]

DEFAULT_T_MAX = 100.0
DEFAULT_STEP = 1e-4


class Family(str, enum.Enum):
    GAUSSIAN = "gaussian"
    CAUCHY = "cauchy"
    TABULATED = "tabulated"


class NotAdmissible(ValueError):
    """A clause of the admissibility definition is violated.

    Attributes
    ----------
    clause : str
        One of ``"1"``, ``"2"``, ``"3a"``, ``"3b"``.
    witness : float or None
        A kernel argument ``t`` at which the violation was observed.
    """

    def __init__(self, clause, witness=None, detail=""):
        self.clause = clause
        self.witness = witness
        self.detail = detail
        msg = f"kernel violates admissibility clause {clause}"
        if witness is not None:
            msg += f" at t={witness:.6g}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class UnverifiedTailWarning(UserWarning):
    """Global decay could only be checked on a finite tabulated range."""


def _check_order(order):
    if isinstance(order, bool) or not isinstance(order, (int, np.integer)) or not 0 <= order <= 3:
        raise ValueError(f"derivative order must be an integer in 0..3, got {order!r}")
    return int(order)


class Kernel:
    """Base class: an even pulse shape evaluable with derivatives up to order 3."""

    family: Family
    default_epsilon: float | None = None

    def eval(self, t, order=0):
        """Return ``g^(order)(t)``; ``t`` may be a scalar or an array."""
        order = _check_order(order)
        arr = np.asarray(t, dtype=float)
        out = self._eval(arr, order)
        if np.ndim(t) == 0:
            return float(out)
        return out

    __call__ = eval

    def _eval(self, t, order):
        raise NotImplementedError

    @property
    def g0(self):
        return self.eval(0.0, 0)

    @property
    def g2_0(self):
        return self.eval(0.0, 2)

    @functools.cached_property
    def global_constants(self):
        """``(C0, C1, C2, C3)`` with the default scan settings, cached."""
        return estimate_global_constants(self)

    def __repr__(self):
        return f"{type(self).__name__}()"


class GaussianKernel(Kernel):
    """``g(t) = exp(-t^2 / 2)``."""

    family = Family.GAUSSIAN
    default_epsilon = 0.7

    def _eval(self, t, order):
        g = np.exp(-0.5 * t * t)
        if order == 0:
            return g
        if order == 1:
            return -t * g
        if order == 2:
            return (t * t - 1.0) * g
        return (3.0 * t - t**3) * g


class CauchyKernel(Kernel):
    """``g(t) = 1 / (1 + t^2)``."""

    family = Family.CAUCHY
    default_epsilon = 0.5

    def _eval(self, t, order):
        u = 1.0 + t * t
        if order == 0:
            return 1.0 / u
        if order == 1:
            return -2.0 * t / u**2
        if order == 2:
            return (6.0 * t * t - 2.0) / u**3
        return 24.0 * t * (1.0 - t * t) / u**4


def _five_point_derivatives(g, h):
    """First three derivatives at the nodes of an even, uniformly sampled ``g``.

    The left end is extended by evenness; the two rightmost nodes lack a full
    stencil and are dropped from the returned arrays.
    """
    ext = np.concatenate([g[2:0:-1], g])
    fm2, fm1, f0, fp1, fp2 = (ext[i : len(ext) - 4 + i] for i in range(5))
    d1 = (fm2 - 8.0 * fm1 + 8.0 * fp1 - fp2) / (12.0 * h)
    d2 = (-fm2 + 16.0 * fm1 - 30.0 * f0 + 16.0 * fp1 - fp2) / (12.0 * h * h)
    d3 = (-fm2 + 2.0 * fm1 - 2.0 * fp1 + fp2) / (2.0 * h**3)
    return f0, d1, d2, d3


class TabulatedKernel(Kernel):
    """Kernel given by samples of ``g`` on a uniform grid.

    Samples may cover ``[0, T]`` or a symmetric range ``[-T, T]``; in the
    latter case the asymmetry of the data is recorded and reported by
    :func:`check_admissible`.  Derivatives come from 5-point stencils at the
    nodes and are interpolated with cubic Hermite splines between them.
    Beyond the tabulated range every derivative evaluates to zero.
    """

    family = Family.TABULATED

    def __init__(self, t, g, epsilon=None):
        t = np.asarray(t, dtype=float)
        g = np.asarray(g, dtype=float)
        if t.ndim != 1 or t.shape != g.shape or t.size < 8:
            raise ValueError("tabulated kernel needs matching 1-D arrays with at least 8 samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(g))):
            raise ValueError("tabulated kernel samples must be finite")
        h = t[1] - t[0]
        if h <= 0 or not np.allclose(np.diff(t), h, rtol=1e-8, atol=0.0):
            raise ValueError("tabulated kernel samples must lie on an increasing uniform grid")
        self.asymmetry = 0.0
        self.asymmetry_at = None
        if t[0] < -0.5 * h:
            i0 = int(np.argmin(np.abs(t)))
            if abs(t[i0]) > 1e-9 * h or not np.isclose(-t[0], t[-1], rtol=1e-9):
                raise ValueError("a two-sided table must be symmetric about t=0")
            left = g[i0::-1]
            right = g[i0:]
            n = min(left.size, right.size)
            diff = np.abs(left[:n] - right[:n])
            self.asymmetry = float(diff.max())
            self.asymmetry_at = float(t[i0 + int(np.argmax(diff))])
            t, g = t[i0:] - t[i0], right
        elif abs(t[0]) > 1e-9 * h:
            raise ValueError("tabulated kernel samples must include t=0")
        self.step = float(h)
        self.default_epsilon = epsilon
        f0, d1, d2, d3 = _five_point_derivatives(g, h)
        nodes = t[: f0.size]
        self.t_limit = float(nodes[-1])
        self._nodes = nodes
        self._splines = (
            CubicHermiteSpline(nodes, f0, d1),
            CubicHermiteSpline(nodes, d1, d2),
            CubicHermiteSpline(nodes, d2, d3),
        )
        self._d3 = d3
        for arr in (self._nodes, self._d3):
            arr.setflags(write=False)

    def _eval(self, t, order):
        a = np.abs(t)
        inside = a <= self.t_limit
        out = np.zeros_like(a)
        ai = a[inside]
        if order < 3:
            out[inside] = self._splines[order](ai)
        else:
            out[inside] = np.interp(ai, self._nodes, self._d3)
        if order % 2:
            out = np.where(t < 0, -out, out)
        return out

    def __repr__(self):
        return f"TabulatedKernel(step={self.step:g}, t_limit={self.t_limit:g})"


def gaussian():
    return GaussianKernel()


def cauchy():
    return CauchyKernel()


def tabulated(t, g, epsilon=None):
    return TabulatedKernel(t, g, epsilon=epsilon)


def from_spec(spec, base_dir=None):
    """Build a kernel from a config mapping.

    ``{"family": "gaussian"|"cauchy"|"tabulated", "epsilon": float,
    "samples_path": "g.csv"}``; the CSV holds ``t,g`` rows under a header.
    Returns ``(kernel, epsilon)``.
    """
    family = Family(spec["family"])
    if family is Family.GAUSSIAN:
        kernel = GaussianKernel()
    elif family is Family.CAUCHY:
        kernel = CauchyKernel()
    else:
        path = spec.get("samples_path")
        if not path:
            raise ValueError("tabulated kernel requires 'samples_path'")
        path = Path(path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        kernel = TabulatedKernel(data[:, 0], data[:, 1], epsilon=spec.get("epsilon"))
    epsilon = spec.get("epsilon", kernel.default_epsilon)
    if epsilon is None:
        raise ValueError("kernel spec needs 'epsilon'")
    return kernel, float(epsilon)


@dataclass(frozen=True)
class AdmissibilityConstants:
    """Constants certifying admissibility of a kernel."""

    C: tuple
    epsilon: float
    beta: float
    g0: float
    g2_0: float

    @property
    def C0(self):
        return self.C[0]

    @property
    def C1(self):
        return self.C[1]

    @property
    def C2(self):
        return self.C[2]

    @property
    def C3(self):
        return self.C[3]

    def to_dict(self):
        return {
            "C": list(self.C),
            "epsilon": self.epsilon,
            "beta": self.beta,
            "g0": self.g0,
            "g2_0": self.g2_0,
        }


def _local_lipschitz(values, i, step, half_width=8):
    lo = max(i - half_width, 0)
    hi = min(i + half_width + 1, values.size)
    if hi - lo < 2:
        return 0.0
    return float(np.max(np.abs(np.diff(values[lo:hi])))) / step


def _scan_limit(kernel, t_max):
    if isinstance(kernel, TabulatedKernel) and kernel.t_limit < t_max:
        warnings.warn(
            f"tabulated kernel only covers |t| <= {kernel.t_limit:g}; "
            "the global decay bound is unverified beyond that range",
            UnverifiedTailWarning,
            stacklevel=3,
        )
        return kernel.t_limit
    return t_max


def estimate_global_constants(kernel, t_max=DEFAULT_T_MAX, step=DEFAULT_STEP):
    """Estimate ``C_l = sup |g^(l)(t)| (1 + t^2)`` for ``l = 0..3``.

    The supremum is taken over a uniform grid of ``[0, t_max]`` (evenness
    covers negative ``t``) and padded by ``step`` times a local Lipschitz
    estimate of the scanned function around the maximiser.

    Raises
    ------
    NotAdmissible
        Clause 2, when the weighted derivative still grows near ``t_max``.
    """
    if t_max < 50:
        raise ValueError("t_max must be at least 50")
    if not 0 < step <= 1e-3:
        raise ValueError("step must lie in (0, 1e-3]")
    limit = _scan_limit(kernel, t_max)
    t = np.arange(0.0, limit + 0.5 * step, step)
    weight = 1.0 + t * t
    split = int(0.75 * t.size)
    constants = []
    for order in range(4):
        h = np.abs(kernel.eval(t, order)) * weight
        i = int(np.argmax(h))
        head = float(h[:split].max())
        tail = float(h[split:].max())
        if tail > head * (1.0 + 1e-6):
            j = split + int(np.argmax(h[split:]))
            raise NotAdmissible(
                "2",
                float(t[j]),
                f"|g^({order})(t)|(1+t^2) still grows near t_max ({tail:.4g} > {head:.4g})",
            )
        constants.append(float(h[i]) + step * _local_lipschitz(h, i, step))
    return tuple(constants)


def estimate_local_constants(kernel, epsilon, step=None):
    """Return ``beta``: the minimum of ``-g''`` on ``[0, epsilon]`` less a margin.

    Raises
    ------
    NotAdmissible
        Clause 3b, with the first ``t`` where ``g'' >= 0``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if step is None:
        step = min(1e-5, epsilon / 1000.0)
    t = np.linspace(0.0, epsilon, int(math.ceil(epsilon / step)) + 1)
    step = t[1] - t[0]
    neg_g2 = -kernel.eval(t, 2)
    bad = np.flatnonzero(neg_g2 <= 0)
    if bad.size:
        raise NotAdmissible("3b", float(t[bad[0]]), "g'' is not negative on [0, epsilon]")
    i = int(np.argmin(neg_g2))
    beta = float(neg_g2[i]) - step * _local_lipschitz(neg_g2, i, step)
    if beta <= 0:
        raise NotAdmissible("3b", float(t[i]), "no positive beta after the grid margin")
    return float(beta)


def check_admissible(kernel, epsilon=None, t_max=DEFAULT_T_MAX, step=DEFAULT_STEP):
    """Run every admissibility clause and return the full constant set.

    The first violated clause is raised as :class:`NotAdmissible`.
    """
    if epsilon is None:
        epsilon = kernel.default_epsilon
    if epsilon is None or not epsilon > 0:
        raise ValueError("epsilon must be positive")

    # clause 1: evenness
    if isinstance(kernel, TabulatedKernel):
        scale = max(1.0, abs(kernel.g0))
        if kernel.asymmetry > 1e-12 * scale:
            raise NotAdmissible("1", kernel.asymmetry_at, "tabulated samples are not even")
    ts = np.linspace(0.0, 20.0, 20001)
    gp, gm = kernel.eval(ts, 0), kernel.eval(-ts, 0)
    diff = np.abs(gp - gm)
    if np.any(diff > 1e-12 * np.maximum(1.0, np.abs(gp))):
        raise NotAdmissible("1", float(ts[np.argmax(diff)]), "g(t) != g(-t)")

    C = estimate_global_constants(kernel, t_max=t_max, step=step)

    # clause 3a: positive peak, strictly dominating the outside
    inner = np.linspace(0.0, epsilon, 10001)
    g_inner = kernel.eval(inner, 0)
    if np.any(g_inner <= 0):
        raise NotAdmissible("3a", float(inner[np.argmax(g_inner <= 0)]), "g <= 0 inside the peak")
    g_eps = kernel.eval(epsilon, 0)
    outer = np.arange(epsilon + step, _scan_limit(kernel, t_max) + 0.5 * step, step)
    g_outer = kernel.eval(outer, 0)
    if np.any(g_outer >= g_eps):
        raise NotAdmissible(
            "3a", float(outer[np.argmax(g_outer >= g_eps)]), "g(t) >= g(epsilon) outside the peak"
        )

    beta = estimate_local_constants(kernel, epsilon)
    return AdmissibilityConstants(
        C=C, epsilon=float(epsilon), beta=beta, g0=float(kernel.g0), g2_0=float(kernel.g2_0)
    )
