"""Random Jacobi operators with a periodic background.

A model is an ``L``-periodic pair of hopping/potential sequences plus a
centered random perturbation drawn independently for each unit cell:

    t(cell, l) = hop[l] + lam * hop_amp[l](sigma)
    v(cell, l) = pot[l] + lam * pot_amp[l](sigma)

with ``sigma`` in ``[-1, 1]**(2L)``.  The first ``L`` components of ``sigma``
belong to the hoppings, the last ``L`` to the potentials.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Union

import numba
import numpy as np

Amplitude = Union[float, Callable[[np.ndarray], np.ndarray]]

LAW_VARIANCE = {"uniform": 1.0 / 3.0, "bernoulli": 1.0, "none": 0.0}


class ModelError(ValueError):
    """Raised when a model violates positivity of the hoppings."""


@dataclass(frozen=True)
class PeriodicBackground:
    hop: tuple
    pot: tuple

    def __post_init__(self):
        object.__setattr__(self, "hop", tuple(float(h) for h in self.hop))
        object.__setattr__(self, "pot", tuple(float(p) for p in self.pot))
        if len(self.hop) < 1 or len(self.hop) != len(self.pot):
            raise ModelError("hop and pot must be non-empty and of equal length")
        if min(self.hop) <= 0:
            raise ModelError("background hoppings must be positive")

    @property
    def L(self) -> int:
        return len(self.hop)


@dataclass(frozen=True)
class DisorderSpec:
    """Law of the per-cell random vector and the amplitude maps.

    Amplitudes given as numbers act linearly on their own component of
    ``sigma``; callables receive the full ``(m, 2L)`` sample array and must
    return ``m`` values.
    """

    hop_amp: tuple
    pot_amp: tuple
    law: str = "uniform"

    def __post_init__(self):
        if self.law not in LAW_VARIANCE:
            raise ValueError(f"unknown disorder law {self.law!r}")
        object.__setattr__(self, "hop_amp", tuple(self.hop_amp))
        object.__setattr__(self, "pot_amp", tuple(self.pot_amp))
        if len(self.hop_amp) != len(self.pot_amp):
            raise ValueError("hop_amp and pot_amp must have equal length")

    @property
    def L(self) -> int:
        return len(self.pot_amp)

    @property
    def is_linear(self) -> bool:
        return all(not callable(a) for a in self.hop_amp + self.pot_amp)

    @property
    def component_variance(self) -> float:
        return LAW_VARIANCE[self.law]

    def amplitudes(self, sigma: np.ndarray):
        """Return ``(t_tilde, v_tilde)`` arrays of shape ``(m, L)``."""
        sigma = np.atleast_2d(sigma)
        L = self.L
        tt = np.empty((sigma.shape[0], L))
        vt = np.empty((sigma.shape[0], L))
        for l in range(L):
            tt[:, l] = _apply(self.hop_amp[l], sigma, l)
            vt[:, l] = _apply(self.pot_amp[l], sigma, L + l)
        return tt, vt

    @classmethod
    def anderson(cls, L: int = 1, law: str = "uniform") -> "DisorderSpec":
        return cls(hop_amp=(0.0,) * L, pot_amp=(1.0,) * L, law=law)


def _apply(amp, sigma, component):
    if callable(amp):
        return np.asarray(amp(sigma), dtype=float)
    return float(amp) * sigma[:, component]


@dataclass(frozen=True)
class ModelInstance:
    background: PeriodicBackground
    disorder: DisorderSpec
    lam: float = 0.0

    def __post_init__(self):
        if self.background.L != self.disorder.L:
            raise ModelError("background and disorder periods differ")
        if self.lam < 0:
            raise ModelError("coupling must be non-negative")
        if self.disorder.is_linear:
            # worst case over the cube [-1, 1]^(2L)
            worst = min(h - self.lam * abs(a) for h, a in
                        zip(self.background.hop, self.disorder.hop_amp))
            if worst <= 0:
                raise ModelError(f"coupling {self.lam} allows non-positive hoppings")

    @property
    def L(self) -> int:
        return self.background.L

    def with_lambda(self, lam: float) -> "ModelInstance":
        return ModelInstance(self.background, self.disorder, float(lam))

    def coefficients(self, sigma: np.ndarray):
        """Site hoppings and potentials for a block of cells, each ``(m, L)``."""
        tt, vt = self.disorder.amplitudes(sigma)
        t = np.asarray(self.background.hop) + self.lam * tt
        v = np.asarray(self.background.pot) + self.lam * vt
        if np.any(t <= 0):
            raise ModelError("non-positive hopping produced by the disorder")
        return t, v


def anderson_model(lam: float = 0.0, law: str = "uniform") -> ModelInstance:
    return ModelInstance(PeriodicBackground((1.0,), (0.0,)), DisorderSpec.anderson(1, law), lam)


def replica_rng(seed: int, index: int = 0) -> np.random.Generator:
    """Independent stream keyed by ``(seed, index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def draw(spec: DisorderSpec, rng: np.random.Generator, m: int) -> np.ndarray:
    n = 2 * spec.L
    if spec.law == "uniform":
        return rng.uniform(-1.0, 1.0, size=(m, n))
    if spec.law == "bernoulli":
        return rng.integers(0, 2, size=(m, n)) * 2.0 - 1.0
    return np.zeros((m, n))


def sample_disorder(spec: DisorderSpec, seed: int, m: int, index: int = 0) -> np.ndarray:
    """``m`` i.i.d. draws of ``sigma`` from the stream ``(seed, index)``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return draw(spec, replica_rng(seed, index), m)


def site_coefficients(model: ModelInstance, sigma, l: int):
    """``(t, v)`` at site ``l`` (1-based) of a cell with disorder ``sigma``."""
    if not 1 <= l <= model.L:
        raise IndexError(f"site index {l} outside 1..{model.L}")
    t, v = model.coefficients(np.asarray(sigma, dtype=float).reshape(1, -1))
    return float(t[0, l - 1]), float(v[0, l - 1])


@numba.njit(cache=True)
def _sturm_count(diag, off, E):
    # off[i] couples sites i and i+1; pivots equal to zero are nudged upward,
    # so an eigenvalue exactly at E is not counted.
    count = 0
    tiny = 1e-300
    q = diag[0] - E
    if q == 0.0:
        q = tiny
    if q < 0.0:
        count += 1
    for i in range(1, diag.shape[0]):
        q = diag[i] - E - off[i - 1] * off[i - 1] / q
        if q == 0.0:
            q = tiny
        if q < 0.0:
            count += 1
    return count


def finite_volume_count(model: ModelInstance, sigmas: np.ndarray, n_sites: int, E: float) -> int:
    """Eigenvalues strictly below ``E`` of the Dirichlet truncation to ``n_sites`` sites.

    ``sigmas`` holds one disorder row per cell; at least ``ceil(n_sites / L)``
    rows (plus one for the closing hopping) are needed.
    """
    if n_sites < 2:
        raise ValueError("n_sites must be >= 2")
    t, v = model.coefficients(sigmas)
    t, v = t.ravel(), v.ravel()
    if t.size < n_sites + 1:
        raise ValueError("not enough disorder cells for the requested volume")
    count = _sturm_count(np.ascontiguousarray(v[:n_sites]),
                         np.ascontiguousarray(t[1:n_sites]), float(E))
    return int(min(max(count, 0), n_sites))


def model_from_dict(doc: dict) -> ModelInstance:
    """Build a model from the JSON document layout described in the README."""
    dis = doc.get("disorder", {})
    L = int(doc.get("L", len(doc["hop"])))
    background = PeriodicBackground(doc["hop"], doc["pot"])
    if background.L != L:
        raise ModelError("L does not match the length of hop/pot")
    kind = dis.get("kind", "uniform")
    disorder = DisorderSpec(
        hop_amp=tuple(dis.get("hop_amp", [0.0] * L)),
        pot_amp=tuple(dis.get("pot_amp", [1.0] * L)),
        law=kind,
    )
    return ModelInstance(background, disorder, float(doc.get("lambda", 0.0)))


def load_model(path) -> ModelInstance:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def model_to_dict(model: ModelInstance) -> dict:
    if not model.disorder.is_linear:
        raise ValueError("only linear amplitude maps can be serialized")
    return {
        "L": model.L,
        "hop": list(model.background.hop),
        "pot": list(model.background.pot),
        "disorder": {
            "kind": model.disorder.law,
            "hop_amp": [float(a) for a in model.disorder.hop_amp],
            "pot_amp": [float(a) for a in model.disorder.pot_amp],
        },
        "lambda": model.lam,
    }
