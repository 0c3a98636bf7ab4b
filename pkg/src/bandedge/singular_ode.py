"""First order linear ODEs ``p y' + q y = r`` with one interior singular point.

Coefficients are :class:`Smooth` objects that evaluate any derivative up to
order 6 exactly, so zero orders are read off derivatives rather than
estimated.  Integration uses an exponential scheme on cells where the
integrating factor changes by at most ``e``, and a slaved asymptotic
solution in cells where the equation is very stiff.  Each side of the
singular point is integrated in the direction in which the homogeneous
solution decays.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.polynomial import legendre

MAX_ORDER = 6
ZERO_TOL = 1e-9
_GL_X, _GL_W = legendre.leggauss(8)


class SingularODEError(ValueError):
    pass


class Smooth:
    """A function with exact derivatives: ``f(x, n)`` is the n-th derivative."""

    def __init__(self, fn: Callable, name: str = "f"):
        self._fn = fn
        self.name = name

    def __call__(self, x, n: int = 0):
        if n > MAX_ORDER:
            raise SingularODEError("order > 6 unsupported")
        return self._fn(np.asarray(x, dtype=float), n)

    def __repr__(self):
        return f"Smooth({self.name})"

    @classmethod
    def constant(cls, c: float) -> "Smooth":
        return cls(lambda x, n: np.full_like(x, float(c)) if n == 0 else np.zeros_like(x),
                   f"{c}")

    @classmethod
    def polynomial(cls, coefs) -> "Smooth":
        """Polynomial with ascending coefficients."""
        P = np.polynomial.Polynomial(coefs)
        return cls(lambda x, n: P.deriv(n)(x) + 0.0 * x if n else P(x) + 0.0 * x, str(P))

    @classmethod
    def from_derivatives(cls, funcs) -> "Smooth":
        funcs = list(funcs)

        def fn(x, n):
            if n >= len(funcs):
                raise SingularODEError(f"derivative of order {n} not supplied")
            return np.asarray(funcs[n](x), dtype=float) + 0.0 * x
        return cls(fn)

    @classmethod
    def from_trigpoly(cls, tp) -> "Smooth":
        return cls(lambda x, n: tp.derivative(n)(x), repr(tp))

    def derivatives(self, x, n: int):
        return [self(x, k) for k in range(n + 1)]


def quotient_derivatives(num, den, n):
    """Derivatives ``0..n`` of ``num/den`` from lists of derivative arrays."""
    out = []
    for k in range(n + 1):
        acc = num[k]
        for j in range(k):
            acc = acc - math.comb(k, j) * out[j] * den[k - j]
        out.append(acc / den[0])
    return out


def zero_order(f: Smooth, x_hat: float, tol: float = ZERO_TOL) -> int:
    """Order of the zero of ``f`` at ``x_hat`` (0 when ``f(x_hat) != 0``)."""
    vals = [abs(float(f(x_hat, k))) for k in range(MAX_ORDER + 1)]
    scale = max(1.0, max(vals))
    for m, v in enumerate(vals):
        if v > tol * scale:
            return m
    raise SingularODEError("order > 6 unsupported")


@dataclass(frozen=True)
class ODEProblem:
    p: Smooth
    q: Smooth
    r: Smooth
    a: float
    b: float
    x_hat: float | None = None

    def __post_init__(self):
        if not self.a < self.b:
            raise SingularODEError("need a < b")
        if self.x_hat is not None and not self.a < self.x_hat < self.b:
            raise SingularODEError("singular point must lie inside (a, b)")

    @property
    def length(self) -> float:
        return self.b - self.a

    def orders(self):
        if self.x_hat is None:
            return 0, 0, 0
        lp = zero_order(self.p, self.x_hat)
        lq = zero_order(self.q, self.x_hat)
        try:
            lr = zero_order(self.r, self.x_hat)
        except SingularODEError:
            lr = MAX_ORDER + 1  # r vanishes to all supported orders
        return lp, lq, lr

    def residual(self, x, y, dy):
        return self.p(x) * dy + self.q(x) * y - self.r(x)


@dataclass(frozen=True)
class CaseLabel:
    case: str
    free_params_left: int
    free_params_right: int
    l_p: int
    l_q: int
    l_r: int
    boundary_value: float | None = None
    regularity: float | None = None  # case (iii): solutions are C^n for n < this

    @property
    def unique_left(self) -> bool:
        return self.case not in ("i",) and self.free_params_left == 0

    @property
    def unique_right(self) -> bool:
        return self.case not in ("i",) and self.free_params_right == 0


_TABLE = {
    "i": (1, 0),
    "ii": (0, 0),
    "iii": (1, 1),
    "iv": (1, 0),
    "v": (0, 1),
    "vi": (0, 0),
    "vii": (1, 1),
}


def _taylor(f: Smooth, x, n=MAX_ORDER):
    return [float(f(x, k)) / math.factorial(k) for k in range(n + 1)]


def classify(problem: ODEProblem) -> CaseLabel:
    """Case (i)-(vii) and free-parameter split at the singular point.

    In case (i) the single parameter is shared by both sides; it is reported
    on the left.
    """
    if problem.x_hat is None:
        return CaseLabel("i", 1, 0, 0, 0, 0)
    lp, lq, lr = problem.orders()
    if lr < min(lp, lq):
        raise SingularODEError("no C1 solution: r vanishes to lower order than p and q")
    l = lp - lq
    x = problem.x_hat
    bv = None
    if l > 0 and lr >= lq:
        bv = 0.0 if lr > lq else float(problem.r(x, lq)) / float(problem.q(x, lq))
    regularity = None
    if l <= 0:
        case = "i"
    else:
        sign = np.sign(float(problem.p(x, lp)) * float(problem.q(x, lq)))
        if l == 1:
            case = "ii" if sign > 0 else "iii"
            if case == "iii":
                # |d(p/q)(x_hat)|^-1
                deriv = (float(problem.p(x, lp)) / math.factorial(lp)) / (
                    float(problem.q(x, lq)) / math.factorial(lq))
                regularity = 1.0 / abs(deriv)
        elif l % 2 == 0:
            case = "iv" if sign > 0 else "v"
        else:
            case = "vi" if sign > 0 else "vii"
    left, right = _TABLE[case]
    return CaseLabel(case, left, right, lp, lq, lr, bv, regularity)


def _series_div(num, den, n):
    out = []
    for k in range(n + 1):
        acc = num[k] if k < len(num) else 0.0
        for j in range(k):
            if k - j < len(den):
                acc -= out[j] * den[k - j]
        out.append(acc / den[0])
    return out


def taylor_solution(problem: ODEProblem, label: CaseLabel):
    """Taylor coefficients at ``x_hat`` of the smooth solution (unique sides).

    Uses ``y_k (1 + k a_1) = b_k - sum_{j>=2} a_j (k+1-j) y_{k+1-j}`` for
    ``p/q = sum a_j t^j`` and ``r/q = sum b_k t^k``.
    """
    x = problem.x_hat
    lp, lq, l = label.l_p, label.l_q, label.l_p - label.l_q
    P = _taylor(problem.p, x)[lp:]
    Q = _taylor(problem.q, x)[lq:]
    R = _taylor(problem.r, x)[lq:]
    n = min(len(P), len(Q)) - 1
    ptil = [0.0] * l + _series_div(P, Q, n)
    rtil = _series_div(R, Q, min(len(R), len(Q)) - 1)
    order = min(len(rtil) - 1, len(ptil) - 2, 4)
    y = []
    a1 = ptil[1] if len(ptil) > 1 else 0.0
    for k in range(order + 1):
        acc = rtil[k]
        for j in range(2, k + 2):
            if j < len(ptil) and k + 1 - j >= 0:
                acc -= ptil[j] * (k + 1 - j) * y[k + 1 - j]
        denom = 1.0 + k * a1
        if abs(denom) < 1e-14:
            raise SingularODEError("resonant Taylor coefficient")
        y.append(acc / denom)
    return np.array(y)


class _Stepper:
    """Integrates ``y' = -g y + f`` with ``g = q/p``, ``f = r/p``.

    Steps may run in either direction.  In cells where the integrating
    factor grows by more than ``e^40`` the solution is replaced
    by the slaved series ``r~ - p~ r~' + p~ (p~' r~' + p~ r~'')`` with
    ``p~ = p/q`` and ``r~ = r/q``.
    """

    def __init__(self, problem: ODEProblem, stiff_tol: float = 2e-3, max_depth: int = 60):
        self.pr = problem
        self.stiff_tol = stiff_tol * max(1.0, problem.length)
        self.max_depth = max_depth

    def g(self, x):
        return self.pr.q(x) / self.pr.p(x)

    def f(self, x):
        return self.pr.r(x) / self.pr.p(x)

    def slaved(self, x):
        pr = self.pr
        qd = pr.q.derivatives(x, 2)
        pt = quotient_derivatives(pr.p.derivatives(x, 1), qd, 1)
        rt = quotient_derivatives(pr.r.derivatives(x, 2), qd, 2)
        return rt[0] - pt[0] * rt[1] + pt[0] * (pt[1] * rt[1] + pt[0] * rt[2]), pt[0]

    def _gl(self, fn, x0, x1):
        mid, half = (x0 + x1) / 2, (x1 - x0) / 2
        return half * np.sum(_GL_W * fn(mid + half * _GL_X))

    def step(self, x0, x1, y0, depth=0):
        # signed integral of g along the direction of travel
        W = self._gl(self.g, x0, x1)
        if abs(W) <= 1.0:
            halves = self._gl(self.g, x0, (x0 + x1) / 2) + self._gl(self.g, (x0 + x1) / 2, x1)
            if abs(halves - W) <= 1e-6 * max(1.0, abs(W)) or depth >= self.max_depth:
                return self._exp_step(x0, x1, y0, W)
        elif W > 40.0:
            ys1, pt1 = self.slaved(np.array([x1]))
            ys0, pt0 = self.slaved(np.array([x0]))
            if max(abs(pt1[0]), abs(pt0[0])) <= self.stiff_tol:
                return float(ys1[0]) + math.exp(-W) * (y0 - float(ys0[0]))
        if depth >= self.max_depth:
            raise SingularODEError("step size underflow near the singular point")
        xm = (x0 + x1) / 2
        ym = self.step(x0, xm, y0, depth + 1)
        return self.step(xm, x1, ym, depth + 1)

    def _exp_step(self, x0, x1, y0, W):
        mid, half = (x0 + x1) / 2, (x1 - x0) / 2
        s = mid + half * _GL_X
        # W_i = int_{x0}^{s_i} g by nested Gauss-Legendre
        hs = (s - x0) / 2
        inner = (x0 + hs)[:, None] + hs[:, None] * _GL_X[None, :]
        Wi = hs * np.sum(_GL_W[None, :] * self.g(inner), axis=1)
        integral = half * np.sum(_GL_W * np.exp(-(W - Wi)) * self.f(s))
        return math.exp(-W) * y0 + integral

    def run(self, x_start, y_start, xs):
        """Values at the ordered points ``xs`` (all on one side of ``x_start``)."""
        out = np.empty(len(xs))
        x, y = x_start, y_start
        for i, xn in enumerate(xs):
            if xn != x:
                y = self.step(x, xn, y)
                x = xn
            out[i] = y
        return out


@dataclass
class ODESolution:
    x: np.ndarray
    y: np.ndarray
    guard: np.ndarray  # True inside the guard band
    label: CaseLabel
    h: float


def solve(problem: ODEProblem, side: str = "both", params=None, grid: int = 1001,
          guard: float = 1e-3) -> ODESolution:
    """Sample a continuous solution on a uniform grid over ``[a, b]``.

    ``params`` gives, for each side with a free parameter, the value of the
    solution at that side's outer endpoint (``y(a)`` on the left, ``y(b)``
    on the right); use a dict ``{"left": .., "right": ..}`` or a single
    number when only one is needed.  Points of the other side are NaN when
    only one side is requested.
    """
    if side not in ("left", "right", "both"):
        raise ValueError("side must be left, right or both")
    label = classify(problem)
    xs = np.linspace(problem.a, problem.b, grid)
    y = np.full(grid, np.nan)
    h = guard * problem.length
    stepper = _Stepper(problem)
    if label.case == "i":
        y0 = params.get("left") if isinstance(params, dict) else params
        if y0 is None:
            raise SingularODEError("case (i) needs the value y(a)")
        y[:] = stepper.run(problem.a, float(y0), xs)
        keep = _side_mask(xs, problem.x_hat, side)
        y[~keep] = np.nan
        g = np.zeros(grid, bool) if problem.x_hat is None else np.abs(xs - problem.x_hat) < h
        return ODESolution(xs, y, g, label, h)
    xh = problem.x_hat
    g = np.abs(xs - xh) < h
    wanted = [n for n in ("left", "right") if side in (n, "both")]
    free = {"left": label.free_params_left, "right": label.free_params_right}
    values = _resolve_params(params, wanted, free)
    coeffs = None
    for name in wanted:
        sgn = -1 if name == "left" else 1
        sel = (xs < xh) if sgn < 0 else (xs > xh)
        outer = sel & ~g
        inner = sel & g
        pts = xs[outer]
        if free[name] == 0:
            if coeffs is None:
                coeffs = taylor_solution(problem, label)
            start = xh + sgn * h
            y0 = float(np.polyval(coeffs[::-1], start - xh))
            # outward from the singular point
            order = pts if sgn > 0 else pts[::-1]
            vals = stepper.run(start, y0, order)
            y[outer] = vals if sgn > 0 else vals[::-1]
            y[inner] = np.polyval(coeffs[::-1], xs[inner] - xh)
        else:
            # inward from the outer endpoint
            end = problem.a if sgn < 0 else problem.b
            order = pts if sgn < 0 else pts[::-1]
            vals = stepper.run(end, values[name], order)
            y[outer] = vals if sgn < 0 else vals[::-1]
            if inner.any():
                edge = xh + sgn * h
                y_edge = stepper.run(order[-1], float(vals[-1]), [edge])[0]
                bv = label.boundary_value
                if bv is None:
                    y[inner] = y_edge
                else:
                    y[inner] = bv + (y_edge - bv) * np.abs(xs[inner] - xh) / h
    if label.boundary_value is not None:
        at = np.isclose(xs, xh, atol=1e-14 * problem.length, rtol=0)
        y[at] = label.boundary_value
    return ODESolution(xs, y, g, label, h)


def _resolve_params(params, wanted, free):
    need = [n for n in wanted if free[n]]
    if isinstance(params, dict):
        for n, v in params.items():
            if n in wanted and not free[n] and v is not None:
                raise SingularODEError(
                    f"non-integrable singularity: the {n} side admits a unique solution")
        values = {n: params.get(n) for n in need}
    elif params is None:
        values = {n: None for n in need}
    else:
        if len(need) != 1:
            raise SingularODEError(f"expected parameters for sides {need}, got one number")
        values = {need[0]: params}
    missing = [n for n, v in values.items() if v is None]
    if missing:
        raise SingularODEError(f"free parameter missing for side(s) {missing}")
    return {n: float(v) for n, v in values.items()}


def _side_mask(xs, x_hat, side):
    if side == "both" or x_hat is None:
        return np.ones_like(xs, dtype=bool)
    return xs <= x_hat if side == "left" else xs >= x_hat


def stencil_derivative(x, y):
    """Five-point first derivative on a uniform grid (one-sided at the ends)."""
    d = x[1] - x[0]
    dy = np.full_like(y, np.nan)
    dy[2:-2] = (y[:-4] - 8 * y[1:-3] + 8 * y[3:-1] - y[4:]) / (12 * d)
    return dy


def residual_max(problem: ODEProblem, sol: ODESolution) -> float:
    """Largest ``|p y' + q y - r| / (1 + |r|)`` off the guard band."""
    dy = stencil_derivative(sol.x, sol.y)
    res = problem.residual(sol.x, sol.y, dy) / (1.0 + np.abs(problem.r(sol.x)))
    # stencils touching the guard band or a NaN are skipped
    bad = sol.guard.copy()
    for s in (-2, -1, 1, 2):
        bad |= np.roll(sol.guard, s)
    ok = ~bad & np.isfinite(res)
    return float(np.max(np.abs(res[ok]))) if ok.any() else 0.0
