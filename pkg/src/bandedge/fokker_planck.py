"""Stationary phase densities of second order anomalies.

The drift and diffusion polynomials are

    p = E(p_1^2),    q = 2 E(p_K) + E(p_1 p_1'),

and the groundstate solves ``(p d/dt + qt) rho = C`` with ``qt = p' - q``.
Zeros of ``p`` are handled with the singular ODE machinery: each arc is
integrated away from the side where the solution is unique, and arcs whose
ends both repel the density are filled with ``exp(-w)`` and ``C = 0``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq

from .anomaly import AnomalyExpansion, band_edge_expansion, classify, phase_poly
from .singular_ode import ODEProblem, Smooth, _Stepper, classify as classify_ode
from .singular_ode import taylor_solution, zero_order
from .trigpoly import TrigPoly4

__all__ = ["TrigPoly4", "FPCoefficients", "GroundstateCase", "Groundstate", "coefficients",
           "classify_groundstate", "groundstate", "expectation", "parabolic_theory",
           "weak_form_residual", "parabolic_coefficients", "GroundstateError"]

PI = math.pi


class GroundstateError(RuntimeError):
    pass


class FPCoefficients(NamedTuple):
    p: TrigPoly4
    q: TrigPoly4

    @property
    def degenerate(self) -> bool:
        return self.p.is_zero() and self.q.is_zero()

    @property
    def q_tilde(self) -> TrigPoly4:
        return self.p.derivative() - self.q


def coefficients(expansion: AnomalyExpansion) -> FPCoefficients:
    """Exact ``(p, q)`` of a second order expansion."""
    terms = expansion.terms
    if all(not np.any(t.mean) and not np.any(t.fluct) for t in terms):
        warnings.warn("zero expansion: Fokker-Planck coefficients are degenerate")
        return FPCoefficients(TrigPoly4(), TrigPoly4())
    if classify(expansion).order != "second":
        raise GroundstateError("not second order")
    t1, tK = terms[0], terms[expansion.K]
    pA = phase_poly(t1.mean)
    p = pA * pA
    q = 2.0 * phase_poly(tK.mean) + pA * pA.derivative()
    polys = [phase_poly(F) for F in t1.fluct]
    for i, pi_ in enumerate(polys):
        for j, pj in enumerate(polys):
            c = expansion.cov[i, j]
            if c != 0.0:
                p = p + c * (pi_ * pj)
                q = q + c * (pi_ * pj.derivative())
    return FPCoefficients(p, q)


def parabolic_coefficients(epsx: float, m2: float) -> FPCoefficients:
    """``(p, q)`` of the band-edge normal form at ``eta = 4/3``."""
    return coefficients(band_edge_expansion(epsx, m2, Fraction(4, 3)))


@dataclass(frozen=True)
class Zero:
    theta: float
    order: int
    qt: float  # qt(theta)
    dqt: float  # qt'(theta)


@dataclass(frozen=True)
class GroundstateCase:
    tag: str
    zeros: tuple = ()
    dirac: tuple = ()  # stable Dirac points
    arcs: tuple = ()  # (start, end) arcs carrying the density when C = 0
    note: str = ""


def _find_zeros(p: TrigPoly4, grid: int = 10**4):
    th = np.linspace(0.0, PI, grid, endpoint=False)
    vals = p(th)
    scale = max(abs(c) for c in p.coefficients) or 1.0
    if vals.min() < -1e-10 * scale:
        raise GroundstateError("not nonnegative: p takes negative values")
    d1, d3 = p.derivative(), p.derivative(3)
    zeros = []
    for i in range(grid):
        a, b, c = vals[i - 1], vals[i], vals[(i + 1) % grid]
        if not (b <= a and b <= c and b < 1e-3 * scale):
            continue
        lo, hi = th[i] - PI / grid, th[i] + PI / grid
        try:
            t = brentq(lambda x: float(d1(x)), lo, hi, xtol=1e-15)
        except ValueError:
            t = th[i]
        if abs(float(p.derivative(2)(t))) < 1e-4 * scale:
            try:
                t = brentq(lambda x: float(d3(x)), t - 1e-3, t + 1e-3, xtol=1e-15)
            except ValueError:
                pass
        if abs(float(p(t))) <= 1e-12 * scale:
            t = t % PI
            if not any(abs((t - z + PI / 2) % PI - PI / 2) < 1e-6 for z in zeros):
                zeros.append(t)
    return sorted(zeros)


def classify_groundstate(p: TrigPoly4, q: TrigPoly4) -> GroundstateCase:
    """Case analysis of the stationary equation from the zeros of ``p``."""
    scale = max(abs(c) for c in p.coefficients + q.coefficients) or 1.0
    if p.is_zero():
        raise GroundstateError("degenerate: p vanishes identically")
    qt = p.derivative() - q
    zs = []
    for t in _find_zeros(p):
        order = zero_order(Smooth.from_trigpoly(p), t, tol=1e-7)
        zs.append(Zero(t, order, float(qt(t)), float(qt.derivative()(t))))
    if not zs:
        return GroundstateCase("regular")
    tol = 1e-9 * scale
    common = [z for z in zs if abs(z.qt) <= tol]
    if not common:
        if len(zs) == 1:
            tag = "order-4" if zs[0].order == 4 else "one-zero-order-2"
            return GroundstateCase(tag, tuple(zs))
        if np.sign(zs[0].qt) == np.sign(zs[1].qt):
            return GroundstateCase("two-zeros-same-sign", tuple(zs))
        return GroundstateCase("two-zeros-split", tuple(zs), arcs=_arcs(zs, tol))
    dirac = []
    for z in common:
        if abs(z.dqt) <= tol:
            raise GroundstateError(
                "boundary case of the singular situations (equality in the conditions)")
        if z.dqt > 0:
            dirac.append(z.theta)
    if len(dirac) > 1:
        return GroundstateCase("degenerate-dirac", tuple(zs), tuple(dirac),
                               note="the stable groundstate is degenerate")
    if dirac:
        situation = "II" if any(z.order == 4 for z in common) else "I"
        return GroundstateCase(f"dirac-{situation}", tuple(zs), tuple(dirac))
    arcs = _arcs(zs, tol)
    if not arcs:
        raise GroundstateError("no normalizable groundstate")
    return GroundstateCase("common-zero-continuous", tuple(zs), arcs=arcs)


def _arcs(zs, tol):
    """Arcs between consecutive zeros on which ``exp(-w)`` vanishes at both ends."""
    out = []
    n = len(zs)
    for i in range(n):
        z0, z1 = zs[i], zs[(i + 1) % n]
        end = z1.theta if i + 1 < n else z1.theta + PI
        # qt < 0 repels from the left end, qt > 0 from the right end;
        # common zeros with qt' < 0 repel on both sides
        start_ok = z0.qt < -tol or (abs(z0.qt) <= tol and z0.dqt < 0)
        end_ok = z1.qt > tol or (abs(z1.qt) <= tol and z1.dqt < 0)
        if start_ok and end_ok:
            out.append((z0.theta, end))
    return tuple(out)


@dataclass
class Groundstate:
    kind: str
    theta: np.ndarray | None = None
    rho: np.ndarray | None = None
    theta_hat: float | None = None
    C: float = 0.0
    case: GroundstateCase | None = None
    flags: list = field(default_factory=list)

    def integral(self) -> float:
        if self.kind == "dirac":
            return 1.0
        return float(np.sum(self.rho) * PI / self.rho.size)

    def value(self, theta: float) -> float:
        """Periodic linear interpolation of the density."""
        n = self.rho.size
        x = (theta % PI) / (PI / n)
        i = int(math.floor(x)) % n
        w = x - math.floor(x)
        return float((1 - w) * self.rho[i] + w * self.rho[(i + 1) % n])


def _problem(p, qt, C, x_hat=None, span=None):
    if x_hat is None:
        a, b = span
    else:
        a, b = x_hat - PI / 2, x_hat + PI / 2
    return ODEProblem(Smooth.from_trigpoly(p), Smooth.from_trigpoly(qt), Smooth.constant(C),
                      a, b, x_hat)


def _grid_between(theta, lo, hi):
    """Indices and lifted angles of grid points strictly inside ``(lo, hi)``."""
    n = theta.size
    lifted = theta + PI * np.ceil((lo - theta) / PI)
    lifted = np.where(lifted <= lo, lifted + PI, lifted)
    sel = lifted < hi
    idx = np.nonzero(sel)[0]
    order = np.argsort(lifted[idx])
    return idx[order], lifted[idx][order]


def _solve_arc(p, qt, z_lo, z_hi, theta, C, guard):
    """Smooth solution on ``(z_lo.theta, hi)`` started from the unique side."""
    lo = z_lo.theta
    hi = z_hi.theta if z_hi.theta > lo else z_hi.theta + PI
    idx, xs = _grid_between(theta, lo, hi)
    out = np.empty(xs.size)
    pr_lo = _problem(p, qt, C, lo)
    pr_hi = _problem(p, qt, C, hi)
    lab_lo, lab_hi = classify_ode(pr_lo), classify_ode(pr_hi)
    h = guard
    step = _Stepper(_problem(p, qt, C, span=(lo - PI, hi + PI)))
    if lab_lo.free_params_right == 0:
        coeffs = taylor_solution(pr_lo, lab_lo)
        start, sgn, anchor = lo + h, 1, lo
    elif lab_hi.free_params_left == 0:
        coeffs = taylor_solution(pr_hi, lab_hi)
        start, sgn, anchor = hi - h, -1, hi
    else:
        raise GroundstateError("no unique side at either end of the arc")
    y0 = float(np.polyval(coeffs[::-1], start - anchor))
    body = (xs > lo + h) & (xs < hi - h)
    pts = xs[body] if sgn > 0 else xs[body][::-1]
    vals = step.run(start, y0, pts)
    out[body] = vals if sgn > 0 else vals[::-1]
    # guard bands: the smooth solution has the same Taylor data on both sides
    for end, lab, pr in ((lo, lab_lo, pr_lo), (hi, lab_hi, pr_hi)):
        band = np.abs(xs - end) <= h
        if band.any():
            c = taylor_solution(pr, lab) if lab.case in ("iv", "v") else None
            if c is None:
                raise GroundstateError("unexpected singular case at an arc end")
            out[band] = np.polyval(c[::-1], xs[band] - end)
    return idx, out


def _homogeneous_arc(p, qt, lo, hi, theta):
    """``exp(-w)`` on ``(lo, hi)`` normalized to 1 at the midpoint."""
    idx, xs = _grid_between(theta, lo, hi)
    mid = 0.5 * (lo + hi)
    step = _Stepper(_problem(p, qt, 0.0, span=(lo - PI, hi + PI)))
    right = xs >= mid
    out = np.empty(xs.size)
    out[right] = step.run(mid, 1.0, xs[right])
    out[~right] = step.run(mid, 1.0, xs[~right][::-1])[::-1]
    return idx, np.maximum(out, 0.0)


def _regular(p, qt, theta):
    n = theta.size
    pts = np.append(theta, PI)
    cells = np.linspace(0.0, PI, 65)
    g = lambda x: qt(x) / p(x)
    w_total = sum(_Stepper._gl(None, g, a, b) for a, b in zip(cells[:-1], cells[1:]))
    hom = _Stepper(_problem(p, qt, 0.0, span=(-PI, 2 * PI)))
    inh = _Stepper(_problem(p, qt, 1.0, span=(-PI, 2 * PI)))
    if w_total >= 0:
        yh = hom.run(0.0, 1.0, pts)
        yb = inh.run(0.0, 0.0, pts)
        A, B = yh[-1], yb[-1]
    else:
        yh = hom.run(PI, 1.0, pts[::-1])[::-1]
        yb = inh.run(PI, 0.0, pts[::-1])[::-1]
        A, B = yh[0], yb[0]
    if abs(1.0 - A) <= 1e-12:
        return yh[:n], 0.0
    y0 = B / (1.0 - A)
    return (y0 * yh + yb)[:n], 1.0


def groundstate(p: TrigPoly4, q: TrigPoly4, n_grid: int = 4096,
                allow_dirac: bool = True) -> Groundstate:
    """Normalized groundstate on ``n_grid`` uniform points of ``[0, pi)``."""
    case = classify_groundstate(p, q)
    qt = p.derivative() - q
    theta = np.arange(n_grid) * (PI / n_grid)
    flags = []
    if case.tag == "degenerate-dirac":
        raise GroundstateError("the stable groundstate is degenerate (two Dirac points)")
    if case.tag.startswith("dirac"):
        if not allow_dirac:
            raise GroundstateError("no normalizable groundstate")
        t = case.dirac[0]
        return Groundstate("dirac", theta_hat=t, C=0.0, case=case)
    guard = 1e-3 * PI
    rho = np.zeros(n_grid)
    C = 0.0
    if case.tag == "regular":
        rho, C = _regular(p, qt, theta)
    elif case.tag in ("one-zero-order-2", "order-4", "two-zeros-same-sign"):
        zs = list(case.zeros)
        for i, z in enumerate(zs):
            z_next = zs[(i + 1) % len(zs)]
            idx, vals = _solve_arc(p, qt, z, z_next, theta, 1.0, guard)
            rho[idx] = vals
        for z in zs:
            at = np.isclose(theta, z.theta, atol=1e-12)
            rho[at] = 1.0 / z.qt
        C = 1.0
    else:
        for lo, hi in case.arcs:
            idx, vals = _homogeneous_arc(p, qt, lo, hi, theta)
            rho[idx] = vals
        if any(z.order == 2 and abs(z.qt) < 1e-9 for z in case.zeros):
            flags.append("possibly non-differentiable at a common zero")
    Z = float(np.sum(rho) * PI / n_grid)
    if not np.isfinite(Z) or Z == 0:
        raise GroundstateError("no normalizable groundstate")
    rho = rho / Z
    if rho.min() < -1e-12:
        raise GroundstateError("quadrature produced a negative density")
    return Groundstate("density", theta, np.maximum(rho, 0.0), None, C / Z, case, flags)


def expectation(gs: Groundstate, f: Callable) -> float:
    if gs.kind == "dirac":
        return f(np.asarray(gs.theta_hat))[()]
    vals = f(gs.theta)
    return np.sum(vals * gs.rho) * PI / gs.rho.size


def weak_form_residual(p: TrigPoly4, q: TrigPoly4, gs: Groundstate, n_modes: int = 8) -> float:
    """``max |int (p phi'' + q phi') rho|`` over ``cos 2k t`` and ``sin 2k t``."""
    th = gs.theta
    worst = 0.0
    pv, qv = p(th), q(th)
    for k in range(1, n_modes + 1):
        w = 2 * k
        for d1, d2 in ((-w * np.sin(w * th), -w * w * np.cos(w * th)),
                       (w * np.cos(w * th), -w * w * np.sin(w * th))):
            val = np.sum((pv * d2 + qv * d1) * gs.rho) * PI / th.size
            worst = max(worst, abs(val) / (w * w))
    return worst


def parabolic_theory(epsx: float, m2: float, n_grid: int = 4096):
    """Rotation and Lyapunov coefficients ``(A, B)`` of the lower-edge form.

    ``B`` multiplies ``lam**(2/3)`` in the per-step Lyapunov exponent; ``A``
    multiplies ``lam**(2/3)`` in the IDS shift for positive orientation and
    unit period (minus the rotation-number coefficient).
    """
    if m2 <= 0:
        raise ValueError("m2 must be positive")
    p, q = parabolic_coefficients(epsx, m2)
    gs = groundstate(p, q, n_grid)
    E = lambda f: expectation(gs, f)
    s2 = E(lambda t: np.sin(2 * t))
    c2 = E(lambda t: np.cos(2 * t))
    s4 = E(lambda t: np.sin(4 * t))
    c4 = E(lambda t: np.cos(4 * t))
    B = 0.5 * (epsx + 1) * s2 + m2 / 8 * (1 + 2 * c2 + c4)
    R = (epsx - 1 + (epsx + 1) * c2 - m2 / 4 * (2 * s2 + s4)) / (2 * PI)
    return -R, B
