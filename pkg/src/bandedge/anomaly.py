"""Anomaly expansions, their classification and the perturbative coefficients.

An expansion is written as ``exp(sum_k lam**eta_k P_k(sigma))`` with
traceless random matrices

    P_k(sigma) = mean_k + sum_j xi_j * fluct_k[j]

where ``xi`` is a centered random vector with covariance ``cov`` shared by
all terms.  All second moments needed downstream are then exact.  Expansions
estimated from samples fit the same form through a principal-component
decomposition of the joint fluctuations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .trigpoly import TrigPoly4

V = np.array([1.0, -1.0j]) / math.sqrt(2.0)
VBAR = V.conj()
ZERO_SIGMAS = 4.0


class AnomalyError(ValueError):
    pass


class IndeterminateError(AnomalyError):
    pass


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(x).limit_denominator(10**6)
    return Fraction(x)


def _traceless(P, tol=1e-12):
    P = np.asarray(P, dtype=float)
    if P.shape != (2, 2):
        raise AnomalyError("expected a 2x2 matrix")
    if abs(P[0, 0] + P[1, 1]) > tol * max(1.0, np.abs(P).max()):
        raise AnomalyError("matrix is not traceless")
    return P


@dataclass(frozen=True)
class Term:
    eta: Fraction
    mean: np.ndarray
    fluct: np.ndarray  # (r, 2, 2), coefficients of the shared xi
    mean_stderr: np.ndarray | None = None  # None: mean exact by construction


@dataclass
class AnomalyExpansion:
    terms: list
    cov: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        cov = np.asarray(self.cov, dtype=float)
        self.cov = cov.reshape(1, 1) if cov.ndim == 0 else cov.reshape(len(cov), len(cov))
        r = self.cov.shape[0]
        clean = []
        for t in sorted(self.terms, key=lambda t: t.eta):
            fl = np.asarray(t.fluct, dtype=float).reshape(-1, 2, 2)
            if fl.shape[0] != r:
                raise AnomalyError("fluctuation count does not match the covariance")
            mean = _traceless(t.mean)
            for F in fl:
                _traceless(F)
            clean.append(Term(as_fraction(t.eta), mean, fl, t.mean_stderr))
        etas = [t.eta for t in clean]
        if any(e <= 0 for e in etas):
            raise AnomalyError("exponents must be positive")
        if len(set(etas)) != len(etas):
            raise AnomalyError("exponents must be strictly increasing")
        self.terms = clean
        self._add_placeholder()

    @property
    def r(self) -> int:
        return self.cov.shape[0]

    def _add_placeholder(self):
        if not self.terms:
            return
        target = 2 * self.terms[0].eta
        if all(t.eta != target for t in self.terms):
            self.terms.append(Term(target, np.zeros((2, 2)), np.zeros((self.r, 2, 2))))
            self.terms.sort(key=lambda t: t.eta)

    @property
    def etas(self):
        return [t.eta for t in self.terms]

    @property
    def K(self) -> int:
        """Zero-based index of the term with exponent ``2 eta_1``."""
        return self.etas.index(2 * self.terms[0].eta)

    def variance(self, k: int) -> float:
        """Total variance of the entries of ``P_k``."""
        F = self.terms[k].fluct.reshape(self.r, 4)
        return float(np.trace(F.T @ self.cov @ F)) if self.r else 0.0

    def expect_bilinear(self, k: int, l: int, fn):
        """``E fn(P_k, P_l)`` for ``fn`` bilinear in its two matrix arguments."""
        tk, tl = self.terms[k], self.terms[l]
        out = fn(tk.mean, tl.mean)
        for i in range(self.r):
            for j in range(self.r):
                if self.cov[i, j] != 0.0:
                    out = out + self.cov[i, j] * fn(tk.fluct[i], tl.fluct[j])
        return out

    def conjugate(self, M) -> "AnomalyExpansion":
        """Expansion of ``M T M^-1``."""
        M = np.asarray(M, dtype=float)
        Mi = np.linalg.inv(M)
        terms = [Term(t.eta, M @ t.mean @ Mi, np.einsum("ab,rbc,cd->rad", M, t.fluct, Mi),
                      None if t.mean_stderr is None else _propagate_stderr(M, Mi, t.mean_stderr))
                 for t in self.terms]
        return AnomalyExpansion(terms, self.cov)

    def rescale(self, delta) -> "AnomalyExpansion":
        """Expansion after conjugation by ``diag(lam**delta, 1)``."""
        delta = as_fraction(delta)
        parts: dict = {}

        def add(eta, mean, fl, se):
            if eta <= 0:
                raise AnomalyError("rescaling produces a non-positive exponent")
            if eta in parts:
                m0, f0, s0 = parts[eta]
                se = None if (s0 is None and se is None) else _hyp(s0, se)
                parts[eta] = (m0 + mean, f0 + fl, se)
            else:
                parts[eta] = (mean, fl, se)

        masks = {
            "low": np.array([[0.0, 0.0], [1.0, 0.0]]),
            "diag": np.array([[1.0, 0.0], [0.0, 1.0]]),
            "up": np.array([[0.0, 1.0], [0.0, 0.0]]),
        }
        for t in self.terms:
            for key, shift in (("low", -delta), ("diag", 0), ("up", delta)):
                m = masks[key]
                mean, fl = t.mean * m, t.fluct * m
                if not np.any(mean) and not np.any(fl):
                    continue
                se = None if t.mean_stderr is None else t.mean_stderr * m
                add(t.eta + shift, mean, fl, se)
        terms = [Term(e, m, f, s) for e, (m, f, s) in parts.items()]
        return AnomalyExpansion(terms, self.cov)

    def matrix(self, lam: float, sigma_xi=None) -> np.ndarray:
        """``sum lam**eta_k P_k`` for one realization of ``xi``."""
        xi = np.zeros(self.r) if sigma_xi is None else np.asarray(sigma_xi, dtype=float)
        out = np.zeros((2, 2))
        for t in self.terms:
            out += lam ** float(t.eta) * (t.mean + np.tensordot(xi, t.fluct, axes=1))
        return out

    @classmethod
    def from_samples(cls, etas, samples) -> "AnomalyExpansion":
        """Fit the expansion form to joint samples of shape ``(m, n_terms, 2, 2)``."""
        S = np.asarray(samples, dtype=float)
        m, n = S.shape[:2]
        mean = S.mean(axis=0)
        stderr = S.std(axis=0, ddof=1) / math.sqrt(m)
        X = (S - mean).reshape(m, n * 4)
        C = X.T @ X / (m - 1)
        w, U = np.linalg.eigh(C)
        keep = w > 1e-14 * max(1.0, w.max())
        F = (U[:, keep] * np.sqrt(w[keep])).T.reshape(-1, n, 2, 2)
        terms = [Term(as_fraction(e), mean[k], F[:, k], stderr[k]) for k, e in enumerate(etas)]
        return cls(terms, np.eye(F.shape[0]))


def _hyp(a, b):
    a = 0.0 if a is None else a
    b = 0.0 if b is None else b
    return np.sqrt(a**2 + b**2)


def _propagate_stderr(M, Mi, se):
    # first-order bound from |M| |se| |M^-1|
    return np.abs(M) @ se @ np.abs(Mi)


def _mean_is_zero(term: Term) -> bool:
    if term.mean_stderr is None:
        return not np.any(np.abs(term.mean) > 1e-13 * max(1.0, np.abs(term.mean).max()))
    return bool(np.all(np.abs(term.mean) <= ZERO_SIGMAS * term.mean_stderr))


@dataclass(frozen=True)
class Classification:
    order: str
    kind: int | None = None  # 1-based index of the first uncentered term
    type: str | None = None
    eta_kind: Fraction | None = None
    det: float | None = None
    K: int | None = None

    def as_dict(self) -> dict:
        return {
            "order": self.order,
            "kind": self.kind,
            "type": self.type,
            "eta_kind": None if self.eta_kind is None else str(self.eta_kind),
            "det": self.det,
            "K": self.K,
        }


def classify(expansion: AnomalyExpansion, mc_samples: int | None = None) -> Classification:
    """First/second order, kind and type of an anomaly expansion."""
    if mc_samples is not None and mc_samples < 10**5:
        raise AnomalyError("at least 1e5 samples are needed for statistical zero tests")
    if not expansion.terms:
        raise AnomalyError("empty expansion")
    K = expansion.K
    for k in range(K):
        t = expansion.terms[k]
        if _mean_is_zero(t):
            continue
        E = t.mean
        det = float(np.linalg.det(E))
        scale = float(np.abs(E).max()) ** 2
        if t.mean_stderr is not None:
            # error of det from first-order propagation
            err = float(np.abs(E[1, 1]) * t.mean_stderr[0, 0] + np.abs(E[0, 0]) * t.mean_stderr[1, 1]
                        + np.abs(E[1, 0]) * t.mean_stderr[0, 1]
                        + np.abs(E[0, 1]) * t.mean_stderr[1, 0])
            if abs(det) <= ZERO_SIGMAS * err and abs(det) > 1e-12 * scale:
                raise IndeterminateError("sign of det E(P) is within the statistical zero band")
        if abs(det) <= 1e-12 * scale:
            kind = "parabolic"
        else:
            kind = "elliptic" if det > 0 else "hyperbolic"
        return Classification("first", k + 1, kind, t.eta, det, K + 1)
    if expansion.variance(0) <= 0:
        raise AnomalyError("leading term has neither mean nor variance")
    return Classification("second", K=K + 1)


def elliptic_basis(expansion: AnomalyExpansion, cls: Classification | None = None):
    """``(M, mu)`` with ``det M = 1`` and ``M E(P) M^-1 = [[0, -mu], [mu, 0]]``."""
    E = _leading_mean(expansion, cls)
    det = np.linalg.det(E)
    if det <= 0:
        raise AnomalyError("leading mean is not elliptic (det <= 0)")
    root = math.sqrt(det)
    J = E / root
    u = np.array([1.0, 0.0])
    Ju = J @ u
    D = u[0] * Ju[1] - u[1] * Ju[0]
    mu = root
    if D < 0:
        Ju, D, mu = -Ju, -D, -root
    Minv = np.column_stack([u, Ju]) / math.sqrt(D)
    return np.linalg.inv(Minv), mu


def hyperbolic_basis(expansion: AnomalyExpansion, cls: Classification | None = None):
    """``(M, mu)`` with ``det M = 1``, ``mu > 0`` and ``M E(P) M^-1 = diag(-mu, mu)``.

    The two eigenvectors are taken with equal norm.
    """
    E = _leading_mean(expansion, cls)
    det = np.linalg.det(E)
    if det >= 0:
        raise AnomalyError("leading mean is not hyperbolic (det >= 0)")
    mu = math.sqrt(-det)
    vecs = []
    for ev in (-mu, mu):
        K = E - ev * np.eye(2)
        cand = [np.array([-K[0, 1], K[0, 0]]), np.array([K[1, 1], -K[1, 0]])]
        v = max(cand, key=np.linalg.norm)
        vecs.append(v / np.linalg.norm(v))
    v1, v2 = vecs
    D = v1[0] * v2[1] - v1[1] * v2[0]
    if D < 0:
        v2, D = -v2, -D
    Minv = np.column_stack([v1, v2]) / math.sqrt(D)
    return np.linalg.inv(Minv), mu


def _leading_mean(expansion, cls):
    cls = cls or classify(expansion)
    if cls.order != "first":
        raise AnomalyError("a first order anomaly is required")
    return expansion.terms[cls.kind - 1].mean


def _c_stats(expansion):
    """Per-term ``(E c, E c^2)`` of the lower-left entries."""
    out = []
    for k, t in enumerate(expansion.terms):
        ec = t.mean[1, 0]
        var = float(t.fluct[:, 1, 0] @ expansion.cov @ t.fluct[:, 1, 0]) if expansion.r else 0.0
        zero = (abs(ec) <= 1e-13 if t.mean_stderr is None
                else abs(ec) <= ZERO_SIGMAS * t.mean_stderr[1, 0])
        out.append((t.eta, 0.0 if zero else ec, ec**2 + var))
    return out


def hyperbolic_to_second_order(expansion: AnomalyExpansion, max_levels: int = 4):
    """Transform a hyperbolic first order anomaly into a second order one.

    Returns ``(new_expansion, ops)``; ``ops`` lists the basis changes in the
    order applied, as ``("conj", M)`` or ``("rescale", delta)``.  Use
    :func:`basis_from_ops` to turn them into a matrix at a given coupling.
    """
    exp = expansion
    ops = []
    for _ in range(max_levels):
        cls = classify(exp)
        if cls.order == "second":
            return exp, ops
        if cls.type != "hyperbolic":
            raise AnomalyError(f"expected a hyperbolic anomaly, found {cls.type}")
        M, _ = hyperbolic_basis(exp, cls)
        exp = exp.conjugate(M)
        ops.append(("conj", M))
        eta_K = cls.eta_kind
        stats = _c_stats(exp)
        chi = next((e for e, _, ec2 in stats if ec2 > 1e-13), None)
        if chi is None:
            raise AnomalyError("trivial perturbation: no random lower-left entry")
        xi = next((e for e, ec, _ in stats if ec != 0.0), None)
        if xi is None or xi >= eta_K / 2 + chi:
            delta = chi - eta_K / 2
        else:
            delta = xi - eta_K
        if delta <= 0:
            raise AnomalyError("exponent bookkeeping gives a non-positive rescaling")
        ops.append(("rescale", delta))
        exp = exp.rescale(delta)
    if classify(exp).order == "second":
        return exp, ops
    raise AnomalyError("needs iteration beyond the supported depth")


def basis_from_ops(ops, lam: float) -> np.ndarray:
    G = np.eye(2)
    for kind, val in ops:
        step = val if kind == "conj" else np.diag([lam ** float(val), 1.0])
        G = step @ G
    return G


def moment_coeffs(P):
    """``(alpha, beta, gamma, p_poly)`` of a traceless matrix.

    ``gamma`` is returned as a complex number; it is real only when
    ``P^T P`` is diagonal.
    """
    P = _traceless(P)
    alpha = complex(V.conj() @ P @ V)
    beta = complex(VBAR.conj() @ P @ V)
    gamma = complex(VBAR.conj() @ (P.T @ P) @ V)
    a, b, c = P[0, 0], P[0, 1], P[1, 0]
    # c cos^2 - b sin^2 - a sin 2t
    p_poly = TrigPoly4((c - b) / 2, (c + b) / 2, -a)
    return alpha, beta, gamma, p_poly


def phase_poly(P) -> TrigPoly4:
    return moment_coeffs(P)[3]


def _beta(P):
    return complex(VBAR.conj() @ P @ V)


def _alpha(P):
    return complex(V.conj() @ P @ V)


def _delta(P1, P2):
    A = (P1 + P1.T) @ P2 + (P2 + P2.T) @ P1
    return complex(VBAR.conj() @ A @ V) / 2


@dataclass(frozen=True)
class PerturbativeValues:
    gamma: float
    R: float
    gamma_error_order: Fraction
    R_error_order: Fraction


def perturbative_values(expansion: AnomalyExpansion, I2: complex, I4: complex,
                        lam: float) -> PerturbativeValues:
    """Per-step Lyapunov exponent and rotation number (units of pi) from the
    second-order expansion of the log-norm and the phase shift.

    ``I2`` and ``I4`` are the Birkhoff averages of ``exp(2it)`` and
    ``exp(4it)`` in the basis of the expansion.
    """
    terms = expansion.terms
    if not terms:
        return PerturbativeValues(0.0, 0.0, Fraction(0), Fraction(0))
    g = 0.0 + 0.0j
    phi = 0.0 + 0.0j
    n = len(terms)
    for k in range(n):
        lk = lam ** float(terms[k].eta)
        l2k = lk * lk
        Eb = _beta(terms[k].mean)
        Ea = _alpha(terms[k].mean)
        Ebb = expansion.expect_bilinear(k, k, lambda X, Y: _beta(X) * np.conj(_beta(Y)))
        Eg = expansion.expect_bilinear(k, k, lambda X, Y: complex(VBAR.conj() @ (X.T @ Y) @ V))
        Eb2 = expansion.expect_bilinear(k, k, lambda X, Y: _beta(X) * _beta(Y))
        Eab = expansion.expect_bilinear(k, k, lambda X, Y: _alpha(X) * _beta(Y))
        g += lk * Eb * I2 + l2k / 2 * (Ebb + Eg * I2 - Eb2 * I4)
        phi += lk * (Ea - Eb * I2) + l2k / 2 * (-2 * Eab * I2 + Eb2 * I4)
        for m in range(k + 1, n):
            lkm = lk * lam ** float(terms[m].eta)
            Ebc = expansion.expect_bilinear(k, m, lambda X, Y: _beta(X) * np.conj(_beta(Y)))
            Ed = expansion.expect_bilinear(k, m, _delta)
            Ebb2 = expansion.expect_bilinear(k, m, lambda X, Y: _beta(X) * _beta(Y))
            g += lkm * (Ebc + Ed * I2 - Ebb2 * I4)
    eta1 = terms[0].eta
    eta2 = terms[1].eta if n > 1 else 2 * eta1
    return PerturbativeValues(float(g.real), float(phi.imag) / math.pi, 3 * eta1, eta1 + eta2)


def band_edge_expansion(epsx_c: float, m2: float, eta) -> AnomalyExpansion:
    """Lower-edge normal form at energy offset ``eps lam**eta``.

    ``epsx_c`` is the canonical drift coefficient (negative inside the band)
    and ``m2 = E(x_sigma**2)``.  Only the two leading contributions are kept.
    """
    eta = as_fraction(eta)
    if not 0 < eta <= Fraction(4, 3):
        raise AnomalyError("band-edge expansions need 0 < eta <= 4/3")
    if m2 <= 0:
        raise AnomalyError("trivial perturbation: E(x_sigma^2) must be positive")
    drift = np.array([[0.0, 1.0], [epsx_c, 0.0]])
    kick = np.array([[[0.0, 0.0], [1.0, 0.0]]])
    zero = np.zeros((1, 2, 2))
    if eta == Fraction(4, 3):
        terms = [Term(Fraction(1, 3), np.zeros((2, 2)), kick), Term(Fraction(2, 3), drift, zero)]
    else:
        e_drift, e_kick = eta / 2, 1 - eta / 2
        if e_drift == e_kick:
            terms = [Term(e_drift, drift, kick)]
        else:
            terms = [Term(e_drift, drift, zero), Term(e_kick, np.zeros((2, 2)), kick)]
    return AnomalyExpansion(terms, np.array([[float(m2)]]))
