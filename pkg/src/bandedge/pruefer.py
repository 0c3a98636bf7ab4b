"""Projective (Pruefer phase) dynamics and Monte Carlo estimators.

Raw simulation runs site by site on the Jacobi transfer matrices.  Each
site step uses the continuous lift of the projective map fixed by
``F(pi/2) = pi``: the image angle lies in ``(0, pi)`` whenever the second
component of ``T e_theta`` is positive.  With this lift the accumulated
phase counts nodes, which links the rotation number to the IDS.

Angles recorded for histograms and Birkhoff sums can be taken in any fixed
basis ``G`` (one record per unit cell), which is how the band-edge normal
forms are observed without iterating badly conditioned matrices.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numba
import numpy as np

from .model import ModelInstance, draw, replica_rng

PI = math.pi


class NonErgodicWarning(RuntimeWarning):
    pass


class BranchError(RuntimeError):
    pass


def projective_angle(vec) -> float:
    return math.atan2(vec[1], vec[0]) % PI


def act(T, theta: float, branch: str = "nearest"):
    """Action of ``T`` on the angle ``theta``.

    Returns ``(theta_new, phi, log_norm)``.  ``branch="nearest"`` takes the
    phase shift in ``[-pi/2, pi/2)``; ``branch="site"`` uses the node-counting
    lift for Jacobi site matrices.
    """
    T = np.asarray(T, dtype=float)
    c, s = math.cos(theta), math.sin(theta)
    X = T[0, 0] * c + T[0, 1] * s
    Y = T[1, 0] * c + T[1, 1] * s
    log_norm = 0.5 * math.log(X * X + Y * Y)
    if branch == "site":
        F = _site_lift(X, Y)
        phi = F - theta
    elif branch == "nearest":
        new = math.atan2(Y, X) % PI
        phi = (new - theta + PI / 2) % PI - PI / 2
    else:
        raise ValueError(f"unknown branch {branch!r}")
    return (theta + phi) % PI, phi, log_norm


@numba.njit(cache=True, inline="always")
def _site_lift(X, Y):
    if Y > 0.0:
        return math.atan2(Y, X)
    return PI + math.atan2(-Y, -X)


@numba.njit(cache=True, nogil=True)
def _run_sites(t, v, E, L, theta, G, record, out):
    """Iterate ``t.size`` sites; returns ``(theta, lift, log_norm_sum)``.

    When ``record`` is set, ``out[k]`` receives the angle at the start of cell
    ``k`` expressed in the basis ``G``.
    """
    lift = 0.0
    lognorm = 0.0
    n = t.shape[0]
    for i in range(n):
        if record and i % L == 0:
            c = math.cos(theta)
            s = math.sin(theta)
            u0 = G[0, 0] * c + G[0, 1] * s
            u1 = G[1, 0] * c + G[1, 1] * s
            a = math.atan2(u1, u0)
            if a < 0.0:
                a += PI
            if a >= PI:
                a -= PI
            out[i // L] = a
        ti = t[i]
        c = math.cos(theta)
        s = math.sin(theta)
        X = (E - v[i]) / ti * c - ti * s
        Y = c / ti
        lognorm += 0.5 * math.log(X * X + Y * Y)
        if Y > 0.0:
            F = math.atan2(Y, X)
        else:
            F = PI + math.atan2(-Y, -X)
        lift += F - theta
        theta = F - PI if F >= PI else F
        if theta < 0.0:
            theta = 0.0
    return theta, lift, lognorm


@dataclass
class TrajectoryStats:
    gamma: float
    gamma_err: float
    R: float
    R_err: float
    n_steps: int
    replicas: int
    L: int
    histogram: np.ndarray
    bin_edges: np.ndarray
    birkhoff: dict = field(default_factory=dict)
    replica_gamma: np.ndarray | None = None
    replica_R: np.ndarray | None = None
    flags: list = field(default_factory=list)

    @property
    def ids(self) -> float:
        return ids(self.R, self.L)

    @property
    def ids_err(self) -> float:
        return self.R_err

    def histogram_density(self):
        """Histogram normalized to a probability density on ``[0, pi)``."""
        width = np.diff(self.bin_edges)
        return self.histogram / (self.histogram.sum() * width)


def default_burn_in(n_steps: int) -> int:
    return int(min(max(10**4, n_steps // 100), n_steps // 10))


DEFAULT_OBSERVABLES = {
    "e2": lambda th: np.exp(2j * th),
    "e4": lambda th: np.exp(4j * th),
}


def _replica(model, E, n_steps, burn_in, seed, index, G, n_bins, observables, n_batches):
    rng = replica_rng(seed, index)
    theta = float(rng.uniform(0.0, PI))
    L = model.L
    record_any = G is not None
    Gm = np.eye(2) if G is None else np.asarray(G, dtype=float)
    dummy = np.empty(1)
    chunk = 1 << 18
    # burn-in
    left = burn_in
    while left > 0:
        m = min(chunk, left)
        t, v = model.coefficients(draw(model.disorder, rng, m))
        theta, _, _ = _run_sites(t.ravel(), v.ravel(), E, L, theta, Gm, False, dummy)
        left -= m
    hist = np.zeros(n_bins, dtype=np.int64)
    batch_len = np.diff(np.linspace(0, n_steps, n_batches + 1).astype(np.int64))
    b_log = np.zeros(n_batches)
    b_lift = np.zeros(n_batches)
    sums = {k: np.zeros(n_batches, dtype=complex) for k in observables}
    for b, nb in enumerate(batch_len):
        left = int(nb)
        while left > 0:
            m = min(chunk, left)
            t, v = model.coefficients(draw(model.disorder, rng, m))
            out = np.empty(m) if record_any else dummy
            theta, lift, lognorm = _run_sites(t.ravel(), v.ravel(), E, L, theta, Gm,
                                              record_any, out)
            b_log[b] += lognorm
            b_lift[b] += lift
            if record_any:
                idx = np.minimum((out * (n_bins / PI)).astype(np.int64), n_bins - 1)
                hist += np.bincount(idx, minlength=n_bins)
                for k, f in observables.items():
                    sums[k][b] += np.sum(f(out))
            left -= m
    return b_log, b_lift, hist, sums, batch_len


def _mean_err(per_replica):
    x = np.asarray(per_replica)
    if x.size < 2:
        return float(x.mean()), float("nan")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


def simulate(model: ModelInstance, E: float, n_steps: int, burn_in: int | None = None,
             replicas: int = 8, seed: int = 0, basis=None, n_bins: int = 64,
             observables: dict[str, Callable] | None = None, threads: int = 1,
             n_batches: int = 16) -> TrajectoryStats:
    """Monte Carlo estimate of Lyapunov exponent and rotation number at ``E``.

    ``n_steps`` counts unit cells per replica.  Lyapunov exponent and rotation
    are returned per site; ``R`` is in units of ``pi``.  Histogram and
    Birkhoff sums are recorded in ``basis`` (identity when ``None`` is passed
    together with ``observables``).
    """
    if burn_in is None:
        burn_in = default_burn_in(n_steps)
    if n_steps < 10 * burn_in:
        raise ValueError("n_steps must be at least 10 * burn_in")
    if replicas < 8:
        raise ValueError("at least 8 replicas are required for error bars")
    obs = dict(DEFAULT_OBSERVABLES)
    if observables:
        obs.update(observables)
    G = basis
    if G is None and observables is not None:
        G = np.eye(2)
    if G is None:
        obs = {}
    L = model.L

    def job(r):
        return _replica(model, float(E), int(n_steps), int(burn_in), seed, r, G, n_bins, obs,
                        n_batches)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(job, range(replicas)))
    else:
        results = [job(r) for r in range(replicas)]

    norm = float(n_steps * L)
    rep_gamma = np.array([r[0].sum() / norm for r in results])
    rep_R = np.array([r[1].sum() / (PI * norm) for r in results])
    gamma, gamma_err = _mean_err(rep_gamma)
    R, R_err = _mean_err(rep_R)
    hist = sum(r[2] for r in results)
    birk = {}
    for k in obs:
        per_rep = np.array([r[3][k].sum() / n_steps for r in results])
        re = _mean_err(per_rep.real)
        im = _mean_err(per_rep.imag)
        birk[k] = (complex(re[0], im[0]), math.hypot(re[1], im[1]))
    flags = _ergodicity_flags(results, L)
    stats = TrajectoryStats(gamma, gamma_err, R, R_err, int(n_steps), replicas, L, hist,
                            np.linspace(0.0, PI, n_bins + 1), birk, rep_gamma, rep_R, flags)
    return stats


def _ergodicity_flags(results, L):
    flags = []
    for name, pos in (("gamma", 0), ("R", 1)):
        means, errs = [], []
        for r in results:
            per_batch = r[pos] / (r[4] * L)
            means.append(np.sum(r[pos]) / (np.sum(r[4]) * L))
            errs.append(per_batch.std(ddof=1) / math.sqrt(per_batch.size))
        means, errs = np.array(means), np.array(errs)
        pooled = math.sqrt(np.mean(errs**2))
        if pooled > 0 and np.max(np.abs(means - means.mean())) > 6 * pooled:
            flags.append(f"non-ergodic:{name}")
            warnings.warn(f"replica estimates of {name} disagree by more than 6 standard "
                          "errors; the run may be too short", NonErgodicWarning)
    return flags


def ids(R_hat: float, L: int = 1, tol: float = 1e-6) -> float:
    """Integrated density of states from the per-site rotation (units of pi)."""
    value = 1.0 - R_hat
    if value < -tol or value > 1 + tol:
        raise BranchError(f"IDS {value} outside [0, 1]; the phase branch is inconsistent")
    return min(max(value, 0.0), 1.0)


def birkhoff(stats: TrajectoryStats, name: str):
    """``(mean, stderr)`` of a registered observable."""
    return stats.birkhoff[name]
