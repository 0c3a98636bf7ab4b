"""Unit-cell transfer matrices, band edges and band-edge normal forms.

Matrices are plain ``(2, 2)`` float arrays.  A :class:`Jet` carries a matrix
together with its derivative with respect to one scalar (energy or
coupling) and multiplies with the product rule.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .model import DisorderSpec, ModelInstance, PeriodicBackground, draw, replica_rng

DET_TOL = 1e-10


class TransferError(ValueError):
    pass


class Jet(NamedTuple):
    value: np.ndarray
    d: np.ndarray

    def __matmul__(self, other: "Jet") -> "Jet":
        return Jet(self.value @ other.value, self.d @ other.value + self.value @ other.d)


def site_transfer(E: float, t: float, v: float) -> np.ndarray:
    if t <= 0:
        raise TransferError(f"hopping must be positive, got {t}")
    return np.array([[(E - v) / t, -t], [1.0 / t, 0.0]])


def is_unimodular(T: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(T))) ** 2)
    return abs(np.linalg.det(T) - 1.0) <= DET_TOL * scale


def _site_jet(E, t, v, tt, vt, jet):
    T = site_transfer(E, t, v)
    if jet is None:
        return Jet(T, np.zeros((2, 2)))
    if jet == "E":
        return Jet(T, np.array([[1.0 / t, 0.0], [0.0, 0.0]]))
    if jet == "lambda":
        dT_dt = np.array([[-(E - v) / t**2, -1.0], [-1.0 / t**2, 0.0]])
        dT_dv = np.array([[-1.0 / t, 0.0], [0.0, 0.0]])
        return Jet(T, dT_dt * tt + dT_dv * vt)
    raise ValueError(f"unknown jet mode {jet!r}")


def cell_transfer(model: ModelInstance, sigma, E: float, jet: str | None = None) -> Jet:
    """Transfer matrix over one cell, ``T_L ... T_1``, optionally with a jet.

    ``jet`` is ``None``, ``"E"`` (energy derivative) or ``"lambda"``
    (coupling derivative at the model's coupling).
    """
    sigma = np.asarray(sigma, dtype=float).reshape(1, -1)
    t, v = model.coefficients(sigma)
    tt, vt = model.disorder.amplitudes(sigma)
    out = Jet(np.eye(2), np.zeros((2, 2)))
    for l in range(model.L):
        out = _site_jet(E, t[0, l], v[0, l], tt[0, l], vt[0, l], jet) @ out
    return out


def background_trace(background: PeriodicBackground, E):
    """Trace of the disorder-free cell transfer matrix, vectorized in ``E``."""
    E = np.asarray(E, dtype=float)
    a, b = np.ones_like(E), np.zeros_like(E)
    c, d = np.zeros_like(E), np.ones_like(E)
    for t, v in zip(background.hop, background.pot):
        s11 = (E - v) / t
        a, b, c, d = s11 * a - t * c, s11 * b - t * d, a / t, b / t
    return a + d


def _trace_derivative(background, E, h=1e-6):
    return (background_trace(background, E + h) - background_trace(background, E - h)) / (2 * h)


def band_edges(background: PeriodicBackground, interval=(-3.0, 3.0), grid: int = 2000,
               return_touching: bool = False):
    """Energies in ``interval`` where ``|Tr| = 2``, as ``(E_b, edge_sign)`` pairs.

    Band touchings (double roots of ``Tr -/+ 2``) are excluded from the result;
    with ``return_touching`` they are returned as a second list.
    """
    if grid < 100:
        raise ValueError("grid must be >= 100")
    lo, hi = map(float, interval)
    Es = np.linspace(lo, hi, grid + 1)
    pitch = (hi - lo) / grid
    tr = background_trace(background, Es)
    edges, touching = [], []
    for sign in (1.0, -1.0):
        g = tr - 2.0 * sign
        f = lambda E, s=sign: float(background_trace(background, E)) - 2.0 * s
        for i in range(grid):
            if g[i] == 0.0:
                root = Es[i]
            elif g[i] * g[i + 1] < 0:
                root = brentq(f, Es[i], Es[i + 1], xtol=1e-13, rtol=1e-15)
            else:
                continue
            if abs(_trace_derivative(background, root)) < 1e-7:
                touching.append((root, int(sign)))
            else:
                edges.append((root, int(sign)))
    # tangential roots: local extrema of Tr that reach +-2 without crossing
    dtr = _trace_derivative(background, Es)
    for i in range(grid):
        if dtr[i] * dtr[i + 1] < 0:
            Ex = brentq(lambda E: float(_trace_derivative(background, E)), Es[i], Es[i + 1],
                        xtol=1e-13)
            tx = float(background_trace(background, Ex))
            if abs(abs(tx) - 2.0) < 1e-8:
                touching.append((Ex, 1 if tx > 0 else -1))
    edges = _dedupe(sorted(edges))
    touching = _dedupe(sorted(touching))
    touch_E = [E for E, _ in touching]
    edges = [e for e in edges if all(abs(e[0] - T) > 1e-7 for T in touch_E)]
    for (E1, _), (E2, _) in zip(edges, edges[1:]):
        if E2 - E1 < pitch:
            warnings.warn("band edges closer than the grid pitch; refine the grid")
    if return_touching:
        return edges, touching
    return edges


def _dedupe(pairs, tol=1e-9):
    out = []
    for E, s in pairs:
        if not out or abs(E - out[-1][0]) > tol:
            out.append((float(E), s))
    return out


def jordan_basis(T: np.ndarray):
    """Return ``(N, s)`` with ``det N = 1`` and ``N T N^-1 = +-[[1, s], [0, 1]]``."""
    T = np.asarray(T, dtype=float)
    tr = np.trace(T)
    sign = 1.0 if tr > 0 else -1.0
    if abs(tr - 2 * sign) > 1e-8:
        raise TransferError(f"trace {tr} is not +-2")
    K = sign * T - np.eye(2)
    if np.max(np.abs(K)) < 1e-12:
        raise TransferError("matrix is diagonalizable (+-identity)")
    v1 = np.array([-K[0, 1], K[0, 0]])
    v2 = np.array([K[1, 1], -K[1, 0]])
    v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
    v = v / np.linalg.norm(v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    w0 = np.array([0.0, 1.0]) if abs(v[0]) >= abs(v[1]) else np.array([1.0, 0.0])
    det = v[0] * w0[1] - v[1] * w0[0]
    Kw = K @ w0
    kappa = Kw @ v  # K w0 is parallel to v
    a = np.sqrt(abs(kappa / det))
    s = 1 if kappa / det > 0 else -1
    Ninv = np.column_stack([a * v, w0 / (a * det)])
    return np.linalg.inv(Ninv), s


@dataclass(frozen=True)
class EdgeData:
    E_b: float
    edge_sign: int
    jordan_sign: int
    N: np.ndarray
    x: float
    x_sigma_m2: float
    inward: int
    x_sigma_coef: np.ndarray | None = None
    x_sigma_m2_stderr: float = 0.0

    @property
    def canonical_epsx(self):
        """Factor multiplying ``eps`` in the lower-edge normal form."""
        return self.edge_sign * self.x

    def reflection(self) -> np.ndarray:
        """Orientation fix taking the Jordan block to the lower-edge form."""
        return np.diag([1.0, float(self.jordan_sign)])


def _x_sigma_linear_coef(background, disorder, E_b):
    """Coefficients ``(g, h)`` with ``x_sigma = g . t_tilde + h . v_tilde``."""
    L = background.L
    base = ModelInstance(background, DisorderSpec((1.0,) * L, (1.0,) * L), 0.0)
    coef = np.empty(2 * L)
    for j in range(2 * L):
        e = np.zeros(2 * L)
        e[j] = 1.0
        coef[j] = np.trace(cell_transfer(base, e, E_b, jet="lambda").d)
    return coef


def x_sigma(edge_or_coef, disorder: DisorderSpec, sigma):
    """Values of ``x_sigma`` for disorder samples of shape ``(m, 2L)``."""
    coef = edge_or_coef.x_sigma_coef if isinstance(edge_or_coef, EdgeData) else edge_or_coef
    tt, vt = disorder.amplitudes(np.atleast_2d(sigma))
    return np.hstack([tt, vt]) @ coef


def edge_data(background: PeriodicBackground, disorder: DisorderSpec, E_b: float,
              mc_samples: int = 10**6, seed: int = 0) -> EdgeData:
    L = background.L
    model0 = ModelInstance(background, disorder, 0.0)
    zero = np.zeros(2 * L)
    jE = cell_transfer(model0, zero, E_b, jet="E")
    tr = np.trace(jE.value)
    edge_sign = 1 if tr > 0 else -1
    if abs(abs(tr) - 2) > 1e-8:
        raise TransferError(f"E_b={E_b} is not a band edge (Tr={tr})")
    x = float(np.trace(jE.d))
    if abs(x) < 1e-10:
        raise TransferError("band touching at this energy")
    N, s = jordan_basis(jE.value)
    coef = _x_sigma_linear_coef(background, disorder, E_b)
    stderr = 0.0
    if disorder.is_linear:
        amps = np.array([float(a) for a in disorder.hop_amp + disorder.pot_amp])
        m2 = disorder.component_variance * float(np.sum((coef * amps) ** 2))
    else:
        xs = x_sigma(coef, disorder, draw(disorder, replica_rng(seed, 0), mc_samples)) ** 2
        m2 = float(xs.mean())
        stderr = float(xs.std(ddof=1) / np.sqrt(xs.size))
        if m2 < 4 * stderr:
            raise TransferError("trivial perturbation: E(x_sigma^2) indistinguishable from 0")
    if m2 <= 0:
        raise TransferError("trivial perturbation: x_sigma vanishes identically")
    h = 1e-6
    inward = 1 if abs(background_trace(background, E_b + h)) < 2 else -1
    return EdgeData(float(E_b), edge_sign, s, N, x, m2, inward, coef, stderr)


def rescale_matrix(lam: float, delta: float) -> np.ndarray:
    return np.diag([lam**delta, 1.0])


def rescaled_transfer(edge: EdgeData, model: ModelInstance, sigma, lam: float,
                      eta: float, eps: float, delta: float) -> np.ndarray:
    """``N_{lam,delta} N T N^-1 N_{lam,delta}^-1`` at energy ``E_b + eps lam^eta``."""
    if lam <= 0 or eta <= 0 or not 0 < delta < min(1.0, eta):
        raise TransferError("need lam > 0, eta > 0 and 0 < delta < min(1, eta)")
    T = cell_transfer(model.with_lambda(lam), sigma, edge.E_b + eps * lam**eta).value
    G = rescale_matrix(lam, delta) @ edge.N
    out = G @ T @ np.linalg.inv(G)
    if np.max(np.abs(out)) > 1e12:
        raise TransferError("rescaling out of range")
    return out
