"""Dual certificates built from the kernel and its first derivative.

For support points ``t_m`` and signs ``v_m`` the interpolant

    q(t) = sum_m a_m g_sigma(t - t_m) + b_m g_sigma'(t - t_m),   g_sigma(u) = g(u / sigma)

is fitted so that ``q(t_m) = v_m`` and ``q'(t_m) = 0``.  If in addition
``|q(t)| < 1`` away from the support, the l1 minimiser is unique and equals
the true spike train in the noiseless case.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CertificateVerdict",
    "ConstructionFailed",
    "DualCertificate",
    "NotFound",
    "construct",
    "evaluate_q",
    "minimal_empirical_nu",
    "sign_patterns",
    "verify",
]

MAX_CONDITION = 1e12
RESIDUAL_TOL = 1e-8


class ConstructionFailed(RuntimeError):
    """The interpolation system is singular or too ill-conditioned to trust."""

    def __init__(self, condition):
        self.condition = float(condition)
        super().__init__(f"interpolation system is ill-conditioned (condition number {condition:.3g})")


class NotFound(RuntimeError):
    """No value of nu on the supplied grid yields valid certificates."""


def _g_sigma(kernel, u, sigma, order):
    return kernel.eval(np.asarray(u, dtype=float) / sigma, order) / sigma**order


@dataclass(frozen=True)
class DualCertificate:
    support: np.ndarray
    signs: np.ndarray
    a: np.ndarray
    b: np.ndarray
    sigma: float
    kernel: object
    interp_residual: float
    stationarity_residual: float
    condition: float

    @property
    def coeffs(self):
        return np.column_stack([self.a, self.b])

    def to_dict(self):
        return {
            "support": self.support.tolist(),
            "signs": [int(v) for v in self.signs],
            "coeffs": self.coeffs.tolist(),
            "sigma": self.sigma,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def construct(kernel, support, signs, sigma):
    """Solve the ``2M x 2M`` interpolation system for the coefficients ``(a_m, b_m)``.

    Raises
    ------
    ConstructionFailed
        When the condition number of the system exceeds ``1e12``.
    """
    t = np.asarray(support, dtype=float)
    v = np.asarray(signs, dtype=float)
    if t.ndim != 1 or t.shape != v.shape or t.size == 0:
        raise ValueError("support and signs must be non-empty 1-D arrays of equal length")
    if np.any(np.diff(t) <= 0):
        raise ValueError("support must be strictly increasing")
    if not np.all(np.abs(v) == 1):
        raise ValueError("signs must be +1 or -1")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    M = t.size
    d = t[:, None] - t[None, :]
    g0, g1, g2 = (_g_sigma(kernel, d, sigma, k) for k in range(3))
    A = np.block([[g0, g1], [g1, g2]])
    condition = float(np.linalg.cond(A))
    if not math.isfinite(condition) or condition > MAX_CONDITION:
        raise ConstructionFailed(condition)
    rhs = np.r_[v, np.zeros(M)]
    coef = np.linalg.solve(A, rhs)
    res = A @ coef - rhs
    a, b = coef[:M], coef[M:]
    for arr in (t, v, a, b):
        arr.setflags(write=False)
    return DualCertificate(
        support=t,
        signs=v,
        a=a,
        b=b,
        sigma=float(sigma),
        kernel=kernel,
        interp_residual=float(np.abs(res[:M]).max()),
        stationarity_residual=float(np.abs(res[M:]).max()),
        condition=condition,
    )


def evaluate_q(cert, t, order=0):
    """``q^(order)(t)`` for ``order`` in 0..2; ``t`` may be an array."""
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    tt = np.asarray(t, dtype=float)
    d = tt[..., None] - cert.support
    val = (
        _g_sigma(cert.kernel, d, cert.sigma, order) @ cert.a
        + _g_sigma(cert.kernel, d, cert.sigma, order + 1) @ cert.b
    )
    return float(val) if np.ndim(t) == 0 else val


@dataclass(frozen=True)
class CertificateVerdict:
    """Outcome of the numerical certificate checks.

    ``max_offsupport`` is the largest ``|q|`` farther than ``epsilon * sigma``
    from the support; ``max_near_support`` covers the rest of the scan outside
    the ``scan_step`` exclusion around each support point.
    """

    interp_residual: float
    stationarity_residual: float
    max_offsupport: float
    max_near_support: float
    concave: bool
    tail_bound: float
    valid: bool
    margin: float
    argmax_offsupport: float | None = None

    def to_dict(self):
        return {
            "interp_residual": self.interp_residual,
            "stationarity_residual": self.stationarity_residual,
            "max_offsupport": self.max_offsupport,
            "max_near_support": self.max_near_support,
            "argmax_offsupport": self.argmax_offsupport,
            "concave": self.concave,
            "tail_bound": self.tail_bound,
            "valid": self.valid,
            "margin": self.margin,
        }


def _tail_bound(cert, lo, hi):
    C0, C1 = cert.kernel.global_constants[:2]
    weight = np.abs(cert.a) * C0 + np.abs(cert.b) * C1 / cert.sigma
    left = np.sum(weight / (1.0 + ((cert.support - lo) / cert.sigma) ** 2))
    right = np.sum(weight / (1.0 + ((hi - cert.support) / cert.sigma) ** 2))
    return float(max(left, right))


def verify(cert, epsilon=None, scan_step=None, scan_radius=None):
    """Check ``|q| < 1`` off the support on a dense scan plus an analytic tail bound.

    Parameters
    ----------
    cert : DualCertificate
    epsilon : float, optional
        Peak half-width in kernel units; defaults to the kernel's default.
    scan_step : float, optional
        Scan spacing, at most ``sigma / 100`` (the default).
    scan_radius : float, optional
        How far beyond the support hull to scan, at least ``10 sigma`` (the default).
    """
    sigma = cert.sigma
    if epsilon is None:
        epsilon = cert.kernel.default_epsilon
    if scan_step is None:
        scan_step = sigma / 100.0
    if scan_radius is None:
        scan_radius = 10.0 * sigma
    if scan_step > sigma / 100.0 * (1 + 1e-12):
        raise ValueError("scan_step must not exceed sigma / 100")
    if scan_radius < 10.0 * sigma * (1 - 1e-12):
        raise ValueError("scan_radius must be at least 10 sigma")
    lo = cert.support[0] - scan_radius
    hi = cert.support[-1] + scan_radius
    n = int(math.ceil((hi - lo) / scan_step))
    ts = lo + scan_step * np.arange(n + 1)
    q = np.abs(evaluate_q(cert, ts))
    dist = np.min(np.abs(ts[:, None] - cert.support), axis=1)
    off = dist > epsilon * sigma
    near = ~off & (dist >= scan_step * (1 - 1e-9))
    max_off = float(q[off].max()) if np.any(off) else 0.0
    arg_off = float(ts[off][np.argmax(q[off])]) if np.any(off) else None
    max_near = float(q[near].max()) if np.any(near) else 0.0
    concave = bool(np.all(cert.signs * evaluate_q(cert, cert.support, 2) < 0))
    tail = _tail_bound(cert, lo, hi)
    valid = (
        cert.interp_residual <= RESIDUAL_TOL
        and cert.stationarity_residual <= RESIDUAL_TOL
        and max_off < 1.0
        and max_near < 1.0
        and concave
        and tail < 1.0
    )
    return CertificateVerdict(
        interp_residual=cert.interp_residual,
        stationarity_residual=cert.stationarity_residual,
        max_offsupport=max_off,
        max_near_support=max_near,
        concave=concave,
        tail_bound=tail,
        valid=bool(valid),
        margin=1.0 - max_off,
        argmax_offsupport=arg_off,
    )


def sign_patterns(M, mode="all"):
    """Sign patterns with ``v_0 = +1``; global negation gives the rest.

    ``"all"`` enumerates every pattern, ``"canonical"`` only the constant
    and the alternating one.
    """
    if mode == "all":
        for tail in itertools.product((1.0, -1.0), repeat=M - 1):
            yield np.array((1.0,) + tail)
    elif mode == "canonical":
        yield np.ones(M)
        if M > 1:
            yield np.array([(-1.0) ** m for m in range(M)])
    else:
        raise ValueError(f"unknown sign pattern mode {mode!r}")


def _passes(kernel, nu, M_max, mode, sigma, epsilon):
    for M in range(1, M_max + 1):
        support = nu * sigma * np.arange(M)
        for v in sign_patterns(M, mode):
            try:
                cert = construct(kernel, support, v, sigma)
            except ConstructionFailed:
                return False
            if not verify(cert, epsilon).valid:
                return False
    return True


def minimal_empirical_nu(
    kernel,
    M_max=6,
    sign_patterns="all",
    nu_grid=None,
    resolution=0.01,
    sigma=1.0,
    epsilon=None,
):
    """Smallest equispaced spacing ``nu`` (in units of sigma) giving valid certificates.

    Every spike count ``M <= M_max`` and every sign pattern of the chosen mode
    must produce a valid certificate.  The first passing value of ``nu_grid``
    is refined by bisection against its predecessor down to ``resolution``.

    Raises
    ------
    NotFound
        When no grid value passes.
    """
    mode = sign_patterns
    if mode == "all" and M_max > 6:
        raise ValueError("exhaustive sign patterns are limited to M_max <= 6")
    if nu_grid is None:
        nu_grid = np.round(np.arange(0.2, 4.0 + 1e-9, 0.05), 10)
    nu_grid = np.asarray(nu_grid, dtype=float)
    if nu_grid.size == 0 or np.any(nu_grid <= 0) or np.any(np.diff(nu_grid) <= 0):
        raise ValueError("nu_grid must be increasing positive values")
    prev = None
    for nu in nu_grid:
        if _passes(kernel, nu, M_max, mode, sigma, epsilon):
            break
        prev = nu
    else:
        raise NotFound(f"no nu in [{nu_grid[0]:g}, {nu_grid[-1]:g}] yields valid certificates")
    if prev is None:
        return float(nu)
    lo, hi = prev, nu
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        if _passes(kernel, mid, M_max, mode, sigma, epsilon):
            hi = mid
        else:
            lo = mid
    return float(hi)
