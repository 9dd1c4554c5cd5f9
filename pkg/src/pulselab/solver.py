"""Least-l1 deconvolution: ``min ||x||_1`` subject to ``||y - G x||_1 <= delta``.

The program is an LP.  :func:`lp_reformulate` returns it in a standard
layout for use with any LP code; :func:`solve` runs a dual simplex method
specialised to its structure and returns a solution together with dual
variables that certify optimality through the duality gap.

Dual of the program::

    max  y^T lam - delta * mu
    s.t. |G^T lam|_inf <= 1          (G^T lam <= 1 when x >= 0 is imposed)
         |lam|_inf <= mu
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DualVariables",
    "LPForm",
    "OptimalityReport",
    "ProblemInstance",
    "Solution",
    "SolverOptions",
    "Status",
    "extract_spikes",
    "lp_reformulate",
    "solve",
    "support_threshold",
    "verify_optimality",
]

_EPS = np.finfo(float).eps


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"
    UNCERTIFIED = "uncertified"


@dataclass(frozen=True)
class ProblemInstance:
    """``G`` (``W x P``), samples ``y`` (length ``W``), budget ``delta``, sign constraint."""

    G: np.ndarray
    y: np.ndarray
    delta: float
    nonneg: bool = False

    def __post_init__(self):
        G = np.array(self.G, dtype=float)
        y = np.array(self.y, dtype=float)
        if G.ndim != 2 or y.ndim != 1 or G.shape[0] != y.size:
            raise ValueError(f"G of shape {G.shape} does not match y of shape {y.shape}")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(y))):
            raise ValueError("G and y must be finite")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise ValueError("delta must be a nonnegative real")
        G.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "nonneg", bool(self.nonneg))

    @classmethod
    def from_measurement(cls, G, measurement, nonneg=False):
        return cls(G, measurement.y, measurement.delta, nonneg)

    @property
    def shape(self):
        return self.G.shape


@dataclass(frozen=True)
class LPForm:
    """``min c^T z`` s.t. ``A_eq z = b_eq``, ``A_ub z <= b_ub``, ``z >= 0``.

    ``blocks`` maps ``x_plus``, ``x_minus`` (signed problems only),
    ``r_plus`` and ``r_minus`` to their slices of ``z``.
    """

    c: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    bounds: tuple
    blocks: dict

    @property
    def n_vars(self):
        return self.c.size

    def x_from(self, z):
        """Recover ``x = x_plus - x_minus`` from a solution vector ``z``."""
        x = np.array(z[self.blocks["x_plus"]], dtype=float)
        if "x_minus" in self.blocks:
            x -= z[self.blocks["x_minus"]]
        return x


def lp_reformulate(instance):
    """Standard-form LP equivalent to ``instance``.

    Variables are laid out as ``[x_plus, x_minus, r_plus, r_minus]`` (``x_minus``
    dropped when ``nonneg``), with ``G (x_plus - x_minus) + r_plus - r_minus = y``
    and ``sum(r_plus + r_minus) <= delta``.
    """
    W, P = instance.shape
    G = sp.csr_matrix(instance.G)
    eye = sp.identity(W, format="csr")
    x_blocks = [G] if instance.nonneg else [G, -G]
    A_eq = sp.hstack(x_blocks + [eye, -eye], format="csr")
    n_x = P * len(x_blocks)
    blocks = {"x_plus": slice(0, P)}
    if not instance.nonneg:
        blocks["x_minus"] = slice(P, 2 * P)
    blocks["r_plus"] = slice(n_x, n_x + W)
    blocks["r_minus"] = slice(n_x + W, n_x + 2 * W)
    n = n_x + 2 * W
    c = np.zeros(n)
    c[:n_x] = 1.0
    A_ub = sp.csr_matrix(np.r_[np.zeros(n_x), np.ones(2 * W)][None, :])
    return LPForm(
        c=c,
        A_eq=A_eq,
        b_eq=np.array(instance.y),
        A_ub=A_ub,
        b_ub=np.array([instance.delta]),
        bounds=((0.0, None),) * n,
        blocks=blocks,
    )


@dataclass(frozen=True)
class SolverOptions:
    """Solver tolerances; ``opt_tol=None`` means ``1e-8 * (1 + ||y||_1)``."""

    feas_tol: float = 1e-9
    opt_tol: float | None = None
    max_iter: int = 100_000

    def __post_init__(self):
        if not self.feas_tol > 0:
            raise ValueError("feas_tol must be positive")
        if self.opt_tol is not None and not self.opt_tol > 0:
            raise ValueError("opt_tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")

    def resolved_opt_tol(self, y):
        if self.opt_tol is not None:
            return self.opt_tol
        return 1e-8 * (1.0 + float(np.abs(y).sum()))

    def to_dict(self):
        return {"feas_tol": self.feas_tol, "opt_tol": self.opt_tol, "max_iter": self.max_iter}


@dataclass(frozen=True)
class DualVariables:
    lam: np.ndarray
    mu: float


@dataclass(frozen=True)
class OptimalityReport:
    gap: float
    primal_feas: float
    dual_feas: float
    feas_floor: float = 0.0

    def to_dict(self):
        return {
            "gap": self.gap,
            "primal_feas": self.primal_feas,
            "dual_feas": self.dual_feas,
            "feas_floor": self.feas_floor,
        }


@dataclass(frozen=True)
class Solution:
    x_hat: np.ndarray
    objective: float
    residual_l1: float
    gap: float
    iterations: int
    status: Status
    duals: DualVariables | None = field(default=None, repr=False)
    report: OptimalityReport | None = None

    def to_dict(self):
        out = {
            "status": self.status.value,
            "objective": self.objective,
            "residual_l1": self.residual_l1,
            "gap": self.gap,
            "iterations": self.iterations,
        }
        if self.duals is not None:
            out["mu"] = self.duals.mu
        if self.report is not None:
            out.update(self.report.to_dict())
        return out


def _rounding_floor(G, y, x):
    """Float64 resolution of ``||y - G x||_1``: below this the budget cannot be resolved."""
    W, P = G.shape
    mag = float(np.abs(y).sum() + (np.abs(G) @ np.abs(x)).sum())
    return (P + W + 2) * _EPS * mag


def verify_optimality(instance, solution, duals):
    """Recompute the duality gap and feasibility residuals from scratch.

    Returns
    -------
    OptimalityReport
        ``gap = | ||x||_1 - (y^T lam - delta mu) |``; ``primal_feas`` is the
        budget excess (plus the sign violation when ``x >= 0`` is imposed);
        ``dual_feas`` is the largest violation of the dual constraints.
        ``feas_floor`` is the float64 resolution of the residual norm.
    """
    x = np.asarray(solution.x_hat if isinstance(solution, Solution) else solution, dtype=float)
    G, y, delta = instance.G, instance.y, instance.delta
    W, P = G.shape
    lam = np.asarray(duals.lam, dtype=float)
    mu = float(duals.mu)
    if x.shape != (P,) or lam.shape != (W,):
        raise ValueError(f"expected x of length {P} and lam of length {W}")
    primal_obj = float(np.abs(x).sum())
    dual_obj = float(y @ lam) - delta * mu
    residual = float(np.abs(y - G @ x).sum())
    primal_feas = max(0.0, residual - delta)
    if instance.nonneg and x.size:
        primal_feas = max(primal_feas, float(-x.min()))
    w = G.T @ lam
    dual_feas = 0.0
    if w.size:
        dual_feas = max(dual_feas, float(w.max()) - 1.0)
        if not instance.nonneg:
            dual_feas = max(dual_feas, float(-w.min()) - 1.0)
    if lam.size:
        dual_feas = max(dual_feas, float(np.abs(lam).max()) - mu)
    dual_feas = max(dual_feas, -mu)
    return OptimalityReport(
        gap=abs(primal_obj - dual_obj),
        primal_feas=primal_feas,
        dual_feas=dual_feas,
        feas_floor=_rounding_floor(G, y, x),
    )


def support_threshold(x_hat):
    """Magnitude at or below which a solution entry counts as zero."""
    x_hat = np.asarray(x_hat)
    peak = float(np.abs(x_hat).max()) if x_hat.size else 0.0
    return 1e-6 * max(1.0, peak)


def extract_spikes(x_hat, grid):
    """Spike train read off the entries above :func:`support_threshold`."""
    from .signal import SpikeTrain

    x_hat = np.asarray(x_hat.x_hat if isinstance(x_hat, Solution) else x_hat, dtype=float)
    return SpikeTrain.from_vector(x_hat, grid, support_threshold(x_hat))


# candidate kinds for the entering variable
_X, _R, _SLACK = 0, 1, 2


class _Basis:
    """Basis of the structured LP.

    Basic columns are a signed set of ``x`` columns ``S``, one residual column
    per row in ``R`` (sign ``t[k]``) and optionally the budget slack.  Rows
    outside ``R`` are fitted exactly.  Sizes satisfy ``|S| + slack = |F| + 1``
    with ``F`` the complement of ``R``.
    """

    def __init__(self, y):
        W = y.size
        self.S = []
        self.sgn = []
        self.t = np.where(y >= 0, 1.0, -1.0)
        self.in_R = np.ones(W, dtype=bool)
        self.slack = True


def _solve_refined(M, rhs):
    z = np.linalg.solve(M, rhs)
    return z + np.linalg.solve(M, rhs - M @ z)


def _dual_simplex(G, y, delta, nonneg, max_iter):
    """Return ``(x, lam, mu, iterations, status)``."""
    W, P = G.shape
    B = _Basis(y)
    t = B.t
    ynorm = max(1.0, float(np.abs(y).max()) if W else 1.0)
    degenerate_run = 0
    bland = False
    x = np.zeros(P)
    lam = np.zeros(W)
    nu = 0.0
    signs_x = (1.0,) if nonneg else (1.0, -1.0)
    for it in range(max_iter + 1):
        F = np.flatnonzero(~B.in_R)
        R = np.flatnonzero(B.in_R)
        nS = len(B.S)
        p = nS + B.slack
        S = np.array(B.S, dtype=np.intp)
        s = np.array(B.sgn)
        GS = G[:, S] * s
        M = np.zeros((p, p))
        M[: len(F), :nS] = GS[F]
        M[-1, :nS] = -(t[R] @ GS[R])
        if B.slack:
            M[-1, -1] = 1.0
        rhs = np.r_[y[F], delta - t[R] @ y[R]]
        z = _solve_refined(M, rhs)
        xS = z[:nS]
        zr = t[R] * (y[R] - GS[R] @ xS)
        c_B = np.r_[np.ones(nS), [0.0] * B.slack]
        pf = _solve_refined(M.T, c_B)
        nu = pf[-1]
        lam = np.zeros(W)
        lam[F] = pf[:-1]
        lam[R] = -t[R] * nu
        x = np.zeros(P)
        x[S] = s * xS

        # basic values in a fixed order: x columns, residual rows, slack
        values = np.r_[xS, zr, [z[-1]] * B.slack]
        scale = max(ynorm, float(np.abs(xS).max()) if nS else 0.0)
        tol = 1e-13 * scale
        negative = np.flatnonzero(values < -tol)
        if negative.size == 0:
            return x, lam, -nu, it, Status.OPTIMAL
        if it == max_iter:
            break
        if bland:
            gidx = np.r_[S + P * (s < 0), 2 * P + R + W * (t[R] < 0), [2 * P + 2 * W] * B.slack]
            leave = negative[np.argmin(gidx[negative])]
        else:
            leave = negative[np.argmin(values[negative])]

        # row of B^{-1} for the leaving variable, expressed through rho = B^{-T} e
        e = np.zeros(p)
        k0 = None
        if leave < nS:
            e[leave] = 1.0
        elif leave < nS + R.size:
            k0 = R[leave - nS]
            e[:nS] = -s * G[k0, S] * t[k0]
        else:
            e[-1] = 1.0
        pr = _solve_refined(M.T, e)
        rb = pr[-1]
        rho = np.zeros(W)
        rho[F] = pr[:-1]
        rho[R] = -t[R] * rb
        if k0 is not None:
            rho[k0] = t[k0] * (1.0 - rb)

        gr = G.T @ rho
        gl = G.T @ lam
        in_S = np.zeros(P, dtype=bool)
        in_S[S] = True
        piv_tol = 1e-11 * max(1.0, float(np.abs(gr).max()) if P else 0.0)

        ratios, alphas, kinds, idxs, sgns, gids = [], [], [], [], [], []

        def add(alpha, d, kind, idx, sign, gid, tol_):
            m = alpha < -tol_
            if np.any(m):
                ratios.append(np.maximum(d[m], 0.0) / -alpha[m])
                alphas.append(alpha[m])
                kinds.append(np.full(int(m.sum()), kind))
                idxs.append(idx[m])
                sgns.append(np.full(int(m.sum()), sign))
                gids.append(gid[m])

        cols = np.flatnonzero(~in_S)
        for sg in signs_x:
            add(sg * gr[cols], 1.0 - sg * gl[cols], _X, cols, sg, cols + P * (sg < 0), piv_tol)
        if leave < nS and not nonneg:
            # the leaving x column may come back with the opposite sign
            j, sg = S[leave : leave + 1], -s[leave]
            add(sg * gr[j], 1.0 - sg * gl[j], _X, j, sg, j + P * (sg < 0), piv_tol)
        for tau in (1.0, -1.0):
            add(
                tau * rho[F] + rb,
                -(tau * lam[F] + nu),
                _R,
                F,
                tau,
                2 * P + F + W * (tau < 0),
                1e-11,
            )
        if k0 is not None:
            tau = -t[k0]
            one = np.array([k0])
            add(
                np.array([tau * rho[k0] + rb]),
                np.array([-(tau * lam[k0] + nu)]),
                _R,
                one,
                tau,
                2 * P + one + W * (tau < 0),
                1e-11,
            )
        if not B.slack:
            add(np.array([rb]), np.array([-nu]), _SLACK, np.array([0]), 0.0, np.array([2 * P + 2 * W]), 1e-11)
        if not ratios:
            return x, lam, -nu, it, Status.INFEASIBLE
        ratio = np.concatenate(ratios)
        alpha = np.concatenate(alphas)
        kind = np.concatenate(kinds)
        idx = np.concatenate(idxs)
        sgn = np.concatenate(sgns)
        gid = np.concatenate(gids)
        rmin = ratio.min()
        tie = np.flatnonzero(ratio <= rmin + 1e-12 * max(1.0, rmin))
        if bland:
            pick = tie[np.argmin(gid[tie])]
        else:
            # the slack ties with the residual columns of other rows; prefer it
            key = np.where(kind[tie] == _SLACK, -np.inf, alpha[tie])
            pick = tie[np.argmin(key)]

        if rmin <= 1e-14:
            degenerate_run += 1
        else:
            degenerate_run = 0
        bland = degenerate_run > 50

        if leave < nS:
            B.S.pop(leave)
            B.sgn.pop(leave)
        elif k0 is not None:
            B.in_R[k0] = False
        else:
            B.slack = False
        if kind[pick] == _X:
            B.S.append(int(idx[pick]))
            B.sgn.append(float(sgn[pick]))
        elif kind[pick] == _R:
            B.in_R[idx[pick]] = True
            t[idx[pick]] = sgn[pick]
        else:
            B.slack = True
    return x, lam, -nu, max_iter, Status.MAX_ITER


def solve(instance, opts=None):
    """Solve the least-l1 program and certify the result.

    Parameters
    ----------
    instance : ProblemInstance
    opts : SolverOptions, optional

    Returns
    -------
    Solution
        ``status`` is ``OPTIMAL`` only when the recomputed duality gap is at
        most ``opt_tol``, the budget holds to ``delta * feas_tol`` (or to the
        float64 resolution of the residual norm, whichever is larger) and the
        dual constraints hold to ``feas_tol``.  A basis that reaches optimality
        without meeting these checks is reported as ``UNCERTIFIED``.
    """
    opts = opts or SolverOptions()
    G, y, delta = instance.G, instance.y, instance.delta
    x, lam, mu, iterations, status = _dual_simplex(G, y, delta, instance.nonneg, int(opts.max_iter))
    if instance.nonneg:
        x = np.maximum(x, 0.0)
    duals = DualVariables(lam=lam, mu=float(mu))
    report = verify_optimality(instance, x, duals)
    if status is Status.OPTIMAL:
        budget_ok = report.primal_feas <= max(delta * opts.feas_tol, report.feas_floor)
        certified = (
            budget_ok
            and report.gap <= opts.resolved_opt_tol(y)
            and report.dual_feas <= opts.feas_tol * max(1.0, mu)
        )
        if not certified:
            status = Status.UNCERTIFIED
    x.setflags(write=False)
    return Solution(
        x_hat=x,
        objective=float(np.abs(x).sum()),
        residual_l1=float(np.abs(y - G @ x).sum()),
        gap=report.gap,
        iterations=int(iterations),
        status=status,
        duals=duals,
        report=report,
    )
