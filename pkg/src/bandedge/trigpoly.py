"""Real trigonometric polynomials of degree at most 4 on the circle of length pi."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_DEGREES = (-4, -2, 0, 2, 4)


@dataclass(frozen=True)
class TrigPoly4:
    """``c0 + c2 cos2t + s2 sin2t + c4 cos4t + s4 sin4t``."""

    c0: float = 0.0
    c2: float = 0.0
    s2: float = 0.0
    c4: float = 0.0
    s4: float = 0.0

    @classmethod
    def from_fourier(cls, coef: dict, tol: float = 1e-12) -> "TrigPoly4":
        scale = max([1.0] + [abs(v) for v in coef.values()])
        for n, v in coef.items():
            if abs(n) > 4 and abs(v) > tol * scale:
                raise ValueError("product exceeds degree 4")
        f = lambda n: complex(coef.get(n, 0.0))
        return cls(f(0).real, 2 * f(2).real, -2 * f(2).imag, 2 * f(4).real, -2 * f(4).imag)

    def fourier(self) -> dict:
        """Complex coefficients of ``exp(i n t)``."""
        return {
            0: complex(self.c0),
            2: complex(self.c2, -self.s2) / 2,
            -2: complex(self.c2, self.s2) / 2,
            4: complex(self.c4, -self.s4) / 2,
            -4: complex(self.c4, self.s4) / 2,
        }

    def __call__(self, theta):
        t = np.asarray(theta, dtype=float)
        c, s = np.cos(2 * t), np.sin(2 * t)
        return (self.c0 + self.c2 * c + self.s2 * s
                + self.c4 * (2 * c * c - 1) + self.s4 * (2 * s * c))

    def derivative(self, n: int = 1) -> "TrigPoly4":
        out = self
        for _ in range(n):
            out = TrigPoly4(0.0, 2 * out.s2, -2 * out.c2, 4 * out.s4, -4 * out.c4)
        return out

    def __add__(self, other: "TrigPoly4") -> "TrigPoly4":
        return TrigPoly4(*(a + b for a, b in zip(self.coefficients, other.coefficients)))

    def __sub__(self, other: "TrigPoly4") -> "TrigPoly4":
        return self + other * -1.0

    def __mul__(self, other) -> "TrigPoly4":
        if isinstance(other, TrigPoly4):
            f, g = self.fourier(), other.fourier()
            out: dict = {}
            for n, a in f.items():
                for m, b in g.items():
                    out[n + m] = out.get(n + m, 0.0) + a * b
            return TrigPoly4.from_fourier(out)
        return TrigPoly4(*(float(other) * a for a in self.coefficients))

    __rmul__ = __mul__

    @property
    def coefficients(self):
        return (self.c0, self.c2, self.s2, self.c4, self.s4)

    def is_zero(self, tol: float = 1e-14) -> bool:
        return max(abs(a) for a in self.coefficients) <= tol

    def mean(self) -> float:
        """Average over one period."""
        return self.c0
