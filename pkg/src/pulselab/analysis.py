"""Theoretical recovery bounds and empirical recovery metrics.

Every bound takes freshly estimated :class:`~pulselab.kernel.AdmissibilityConstants`;
nothing here hardcodes kernel-specific values.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .signal import SpikeTrain
from .solver import support_threshold

__all__ = [
    "BoundsReport",
    "DConstants",
    "Localization",
    "NonnegBound",
    "RecoveryMetrics",
    "amplitude_threshold",
    "bounds_report",
    "compare",
    "d_constants",
    "epsilon_tilde",
    "error_bound_general",
    "error_bound_nonneg",
    "gamma",
    "localization_radius",
    "min_nu_for_d2",
    "spurious_mass_bound",
]

PI2 = math.pi**2

# Rayleigh interval length in units of sigma.  The nonnegative-case bound only
# asserts that some spacing works; the empirical separation of the Gaussian
# kernel is used as the interval scale.
RAYLEIGH_NU = 1.1


def gamma(N, sigma, epsilon):
    """``max(N sigma, 1 / epsilon)``."""
    if not (N > 0 and sigma > 0 and epsilon > 0):
        raise ValueError("N, sigma and epsilon must be positive")
    return max(N * sigma, 1.0 / epsilon)


def epsilon_tilde(consts):
    """``sqrt(g(0) / (C2 + beta / 4))``: the smallest peak half-width allowing localization."""
    denom = consts.C2 + consts.beta / 4.0
    if not denom > 0:
        raise ValueError("C2 + beta/4 must be positive")
    return math.sqrt(consts.g0 / denom)


@dataclass(frozen=True)
class DConstants:
    D1: float
    D2: float
    applicable: bool
    reason: str = ""


def min_nu_for_d2(consts):
    """Smallest spacing for which both denominator factors of ``D2`` are positive."""
    return max(
        math.sqrt(PI2 * consts.C2 / (3.0 * abs(consts.g2_0))),
        math.sqrt(2.0 * PI2 * consts.C0 / (3.0 * consts.g0)),
    )


def d_constants(consts, nu, gamma):
    """``D1 = beta / (4 g(0))`` and, for large enough ``nu``, ``D2``.

    ``D2`` is only meaningful when ``3|g''(0)| nu^2 > pi^2 C2`` and
    ``3 g(0) nu^2 > 2 pi^2 C0``; otherwise it is NaN and ``reason`` names the
    failing factor.
    """
    if not (nu > 0 and gamma > 0):
        raise ValueError("nu and gamma must be positive")
    D1 = consts.beta / (4.0 * consts.g0)
    f1 = 3.0 * abs(consts.g2_0) * nu**2 - PI2 * consts.C2
    f2 = 3.0 * consts.g0 * nu**2 - 2.0 * PI2 * consts.C0
    if f1 <= 0:
        return DConstants(
            D1, math.nan, False,
            f"D2 denominator nonpositive: 3|g''(0)|nu^2 = {3 * abs(consts.g2_0) * nu**2:.6g}"
            f" <= pi^2 C2 = {PI2 * consts.C2:.6g}",
        )
    if f2 <= 0:
        return DConstants(
            D1, math.nan, False,
            f"D2 denominator nonpositive: 3 g(0) nu^2 = {3 * consts.g0 * nu**2:.6g}"
            f" <= 2 pi^2 C0 = {2 * PI2 * consts.C0:.6g}",
        )
    num = 3.0 * nu**2 * f1 + 16.0 * consts.C1**2 * gamma**2 * PI2 / consts.beta * (
        1.0 + PI2 / (6.0 * nu**2)
    )
    return DConstants(D1, num / (f1 * f2), True)


def error_bound_general(consts, gamma, delta):
    """``16 gamma^2 delta / beta``: l1 error bound for separated spikes."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return 16.0 * gamma**2 * delta / consts.beta


def _inner_max(consts, D1, eps, n_sigma):
    return max(1.0 / (D1 * eps**2), 4.0 * consts.C2 / (n_sigma**2 * consts.beta))


def amplitude_threshold(delta, consts, D1, D2, N, sigma):
    """Smallest amplitude for which a spike is guaranteed a nearby recovered spike."""
    return 2.0 * delta * D2 * (1.0 + _inner_max(consts, D1, consts.epsilon, N * sigma))


@dataclass(frozen=True)
class Localization:
    radius: float
    applicable: bool
    reason: str = ""
    threshold: float = math.nan


def localization_radius(c_m, delta, consts, D1, D2, N, sigma, eps_tilde, nu=None):
    """Index radius around a true spike that must contain a recovered spike.

    The amplitude condition uses ``epsilon`` while the radius uses
    ``eps_tilde``; both exactly as the bound is stated.  ``nu`` enters only
    through ``D2`` and is accepted for signature symmetry.
    """
    if D2 is None or not math.isfinite(D2):
        return Localization(math.nan, False, "D2 not applicable")
    if consts.epsilon < eps_tilde:
        return Localization(
            math.nan, False,
            f"hypothesis not met: epsilon = {consts.epsilon:.6g} < eps_tilde = {eps_tilde:.6g}",
        )
    threshold = amplitude_threshold(delta, consts, D1, D2, N, sigma)
    c = abs(c_m)
    if c < threshold or c == 0:
        return Localization(math.nan, False, f"amplitude {c:.6g} below threshold {threshold:.6g}", threshold)
    if delta == 0:
        return Localization(0.0, True, "", threshold)
    denom = D1 * (c - 2.0 * delta * D2 * (1.0 + _inner_max(consts, D1, eps_tilde, N * sigma)))
    if denom <= 0:
        return Localization(math.nan, False, "radius denominator nonpositive", threshold)
    return Localization(N * sigma * math.sqrt(2.0 * D2 * delta / denom), True, "", threshold)


def spurious_mass_bound(D1, D2, epsilon, delta):
    """``2 D2 delta / (D1 epsilon^2)``: mass allowed far from every true spike."""
    return 2.0 * D2 * delta / (D1 * epsilon**2)


@dataclass(frozen=True)
class NonnegBound:
    bound: float
    hypothesis_ok: bool


def error_bound_nonneg(consts, gamma, r, delta, N, sigma):
    """l1 error bound for nonnegative spikes that are Rayleigh regular with parameter ``r``.

    Also reports whether ``N sigma > (1/2)^(1/(2r) + 1) sqrt(beta / g(0))`` holds.
    """
    if int(r) != r or r < 1:
        raise ValueError("r must be a positive integer")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    r = int(r)
    C0 = consts.C0
    bound = 2.0 * (2**r - 1) / C0 * (32.0 * C0 / consts.beta) ** r * gamma ** (2 * r) * delta
    limit = 0.5 ** (1.0 / (2 * r) + 1.0) * math.sqrt(consts.beta / consts.g0)
    return NonnegBound(bound, N * sigma > limit)


@dataclass(frozen=True)
class RecoveryMetrics:
    """Empirical comparison of a recovered spike train with the truth.

    ``matched`` holds ``(k_true, k_hat, distance)`` triples; ``missed`` the
    true indices with no recovered spike within ``N epsilon sigma``.
    """

    l1_error: float
    matched: list = field(default_factory=list)
    missed: list = field(default_factory=list)
    spurious_mass: float = 0.0

    @property
    def max_match_dist(self):
        return max((d for _, _, d in self.matched), default=0)

    def to_dict(self):
        out = asdict(self)
        out["matched"] = [list(m) for m in self.matched]
        out["max_match_dist"] = self.max_match_dist
        return out


def compare(x_hat, x_true, grid, epsilon):
    """Match recovered to true spikes greedily by distance within ``N epsilon sigma``.

    Parameters
    ----------
    x_hat : array_like or SpikeTrain
        Recovered window vector (thresholded as in spike extraction) or train.
    x_true : SpikeTrain
    grid : GridConfig
    epsilon : float
    """
    if isinstance(x_hat, SpikeTrain):
        x_vec = x_hat.to_vector(grid)
        rec = x_hat
    else:
        x_vec = np.asarray(x_hat, dtype=float)
        if x_vec.shape != (grid.width,):
            raise ValueError(f"x_hat has shape {x_vec.shape}, grid window has {grid.width} samples")
        rec = SpikeTrain.from_vector(x_vec, grid, support_threshold(x_vec))
    truth = x_true.to_vector(grid)
    l1 = float(np.abs(x_vec - truth).sum())
    radius = grid.N * epsilon * grid.sigma
    dist = np.abs(x_true.k[:, None] - rec.k[None, :])
    pairs = sorted(
        (int(dist[i, j]), int(x_true.k[i]), int(rec.k[j]), i, j)
        for i, j in zip(*np.nonzero(dist <= radius))
    )
    used_true, used_rec, matched = set(), set(), []
    for d, _, _, i, j in pairs:
        if i in used_true or j in used_rec:
            continue
        used_true.add(i)
        used_rec.add(j)
        matched.append((int(x_true.k[i]), int(rec.k[j]), d))
    matched.sort()
    missed = [int(k) for i, k in enumerate(x_true.k) if i not in used_true]
    far = np.all(dist > radius, axis=0) if len(x_true) else np.ones(len(rec), dtype=bool)
    spurious = float(np.abs(rec.c[far]).sum())
    return RecoveryMetrics(l1_error=l1, matched=matched, missed=missed, spurious_mass=spurious)


@dataclass(frozen=True)
class BoundsReport:
    gamma: float
    eps_tilde: float
    D1: float
    D2: float
    applicable: dict
    error_bound_general: float
    localization_radii: list
    amplitude_threshold: float
    spurious_mass_bound: float
    error_bound_nonneg: float | None = None
    r: int | None = None
    nsigma_hypothesis_ok: bool | None = None
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def bounds_report(consts, grid, delta, nu, amplitudes=(), r=None):
    """Evaluate every bound for the given grid, budget and spike amplitudes.

    ``applicable`` maps each bound name to ``"ok"`` or the reason it does not apply.
    """
    g = gamma(grid.N, grid.sigma, consts.epsilon)
    et = epsilon_tilde(consts)
    dc = d_constants(consts, nu, g)
    applicable = {"error_bound_general": "ok", "D2": "ok" if dc.applicable else dc.reason}
    notes = [
        "localization: the amplitude condition uses epsilon, the radius uses eps_tilde",
    ]
    radii = []
    threshold = math.nan
    spurious = math.nan
    if dc.applicable:
        threshold = amplitude_threshold(delta, consts, dc.D1, dc.D2, grid.N, grid.sigma)
        spurious = spurious_mass_bound(dc.D1, dc.D2, consts.epsilon, delta)
        applicable["spurious_mass_bound"] = "ok"
        reasons = set()
        for c in amplitudes:
            loc = localization_radius(c, delta, consts, dc.D1, dc.D2, grid.N, grid.sigma, et, nu)
            radii.append(loc.radius)
            if not loc.applicable:
                reasons.add(loc.reason)
        applicable["localization"] = "ok" if not reasons else "; ".join(sorted(reasons))
    else:
        applicable["spurious_mass_bound"] = dc.reason
        applicable["localization"] = dc.reason
        radii = [math.nan] * len(amplitudes)
    nonneg = None
    hyp = None
    if r is not None:
        nb = error_bound_nonneg(consts, g, r, delta, grid.N, grid.sigma)
        nonneg, hyp = nb.bound, nb.hypothesis_ok
        applicable["error_bound_nonneg"] = "ok" if hyp else "N sigma hypothesis not met"
    return BoundsReport(
        gamma=g,
        eps_tilde=et,
        D1=dc.D1,
        D2=dc.D2,
        applicable=applicable,
        error_bound_general=error_bound_general(consts, g, delta),
        localization_radii=radii,
        amplitude_threshold=threshold,
        spurious_mass_bound=spurious,
        error_bound_nonneg=nonneg,
        r=r,
        nsigma_hypothesis_ok=hyp,
        notes=notes,
    )
