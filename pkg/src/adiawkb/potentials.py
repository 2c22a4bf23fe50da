"""Coefficient data for the fast (periodic) and slow (adiabatic) potentials.

The periodic potential is a real trigonometric polynomial with period 1,

    V(x) = sum_j a_j cos(2 pi j x) + b_j sin(2 pi j x),

and the adiabatic perturbation is an entire function of the slow variable,
currently a cosine ``W(z) = alpha cos z`` or a low-degree trigonometric
polynomial in z.  Both evaluate on complex arguments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["PeriodicPotential", "AdiabaticPerturbation"]


@dataclass(frozen=True)
class PeriodicPotential:
    """1-periodic trigonometric polynomial given by Fourier coefficients.

    ``fourier_cosine[j]`` multiplies cos(2*pi*(j+1)*x) and ``fourier_sine[j]``
    multiplies sin(2*pi*(j+1)*x); the mean value is absorbed into the energy
    and fixed to zero.
    """

    fourier_cosine: tuple = ()
    fourier_sine: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "fourier_cosine", tuple(float(c) for c in self.fourier_cosine))
        object.__setattr__(self, "fourier_sine", tuple(float(c) for c in self.fourier_sine))

    @property
    def n_modes(self) -> int:
        return max(len(self.fourier_cosine), len(self.fourier_sine))

    @property
    def sup_norm_bound(self) -> float:
        """Upper bound for sup |V| on the real line (sum of |coefficients|)."""
        return float(sum(abs(c) for c in self.fourier_cosine) + sum(abs(c) for c in self.fourier_sine))

    def __call__(self, x):
        x = np.asarray(x)
        out = np.zeros_like(x, dtype=complex if np.iscomplexobj(x) else float)
        for j, a in enumerate(self.fourier_cosine, start=1):
            out = out + a * np.cos(2 * np.pi * j * x)
        for j, b in enumerate(self.fourier_sine, start=1):
            out = out + b * np.sin(2 * np.pi * j * x)
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "PeriodicPotential":
        """Build from the scenario JSON fragment ``{"cos": [...], "sin": [...]}``."""
        return cls(tuple(spec.get("cos", ())), tuple(spec.get("sin", ())))

    def to_dict(self) -> dict:
        return {"cos": list(self.fourier_cosine), "sin": list(self.fourier_sine)}


@dataclass(frozen=True)
class AdiabaticPerturbation:
    """Slow potential W acting through W(eps*x + zeta).

    ``kind`` is ``"cos"`` for W(z) = alpha*cos(z), or ``"trig"`` for a real
    trigonometric polynomial sum_j (c_j cos(j z) + s_j sin(j z)).  Entire in z,
    real on the real axis; ``strip_half_width`` records the region callers are
    expected to work in (evaluation itself has no cutoff).
    """

    kind: str = "cos"
    alpha: float = 1.0
    cos_coeff: tuple = ()
    sin_coeff: tuple = ()
    strip_half_width: float = field(default=np.inf)

    def __post_init__(self):
        if self.kind not in ("cos", "trig"):
            raise ValueError(f"unsupported perturbation kind {self.kind!r}")
        object.__setattr__(self, "cos_coeff", tuple(float(c) for c in self.cos_coeff))
        object.__setattr__(self, "sin_coeff", tuple(float(c) for c in self.sin_coeff))

    def __call__(self, z):
        z = np.asarray(z, dtype=complex) if np.iscomplexobj(np.asarray(z)) else np.asarray(z, dtype=float)
        if self.kind == "cos":
            return self.alpha * np.cos(z)
        out = np.zeros_like(z, dtype=z.dtype)
        for j, c in enumerate(self.cos_coeff, start=1):
            out = out + c * np.cos(j * z)
        for j, s in enumerate(self.sin_coeff, start=1):
            out = out + s * np.sin(j * z)
        return out

    def derivative(self, z):
        z = np.asarray(z, dtype=complex) if np.iscomplexobj(np.asarray(z)) else np.asarray(z, dtype=float)
        if self.kind == "cos":
            return -self.alpha * np.sin(z)
        out = np.zeros_like(z, dtype=z.dtype)
        for j, c in enumerate(self.cos_coeff, start=1):
            out = out - c * j * np.sin(j * z)
        for j, s in enumerate(self.sin_coeff, start=1):
            out = out + s * j * np.cos(j * z)
        return out

    def range_bound_on_strip(self, im_max: float) -> float:
        """sup |W| over { |Im z| <= im_max } (coefficient bound)."""
        ch = np.cosh(im_max)
        if self.kind == "cos":
            return abs(self.alpha) * ch
        return float(sum((abs(c) + abs(s0)) * np.cosh(j * im_max)
                         for j, (c, s0) in enumerate(self._padded(), start=1)))

    def im_bound_on_strip(self, im_max: float) -> float:
        """sup |Im W| over { |Im z| <= im_max } (coefficient bound)."""
        if self.kind == "cos":
            return abs(self.alpha) * np.sinh(im_max)
        return float(sum((abs(c) + abs(s0)) * np.sinh(j * im_max)
                         for j, (c, s0) in enumerate(self._padded(), start=1)))

    def _padded(self):
        n = max(len(self.cos_coeff), len(self.sin_coeff))
        cc = self.cos_coeff + (0.0,) * (n - len(self.cos_coeff))
        ss = self.sin_coeff + (0.0,) * (n - len(self.sin_coeff))
        return list(zip(cc, ss))

    @classmethod
    def from_dict(cls, spec: dict) -> "AdiabaticPerturbation":
        kind = spec.get("kind", "cos")
        if kind == "cos":
            return cls(kind="cos", alpha=float(spec["alpha"]))
        return cls(kind="trig", cos_coeff=tuple(spec.get("cos", ())), sin_coeff=tuple(spec.get("sin", ())))

    def to_dict(self) -> dict:
        if self.kind == "cos":
            return {"kind": "cos", "alpha": self.alpha}
        return {"kind": "trig", "cos": list(self.cos_coeff), "sin": list(self.sin_coeff)}
