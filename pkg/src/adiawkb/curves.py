"""Polyline curves with per-vertex branch values.

A :class:`TracedCurve` is the common container for everything the geometric
layer produces: trajectories of the Stokes-type vector fields, Im(kappa)=0
curves, user-supplied polylines, and continuation paths in the energy plane.
Vertices live in whichever complex plane the producer worked in (zeta or E);
``values`` carries the branch of kappa (or k) continued along the curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["TracedCurve", "polyline_length", "resample_polyline"]

FAMILIES = ("kappa-type", "kappa-minus-pi-type", "stokes", "imkappa-zero", "user")


@dataclass(frozen=True)
class TracedCurve:
    vertices: np.ndarray            # complex polyline vertices
    values: np.ndarray = None       # per-vertex branch values (kappa or k)
    family: str = "user"
    level: float = None             # conserved Im-integral level, when applicable
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=complex)
        object.__setattr__(self, "vertices", v)
        if self.values is not None:
            w = np.asarray(self.values, dtype=complex)
            if w.shape != v.shape:
                raise ValueError("values must match vertices in shape")
            object.__setattr__(self, "values", w)
        if self.family not in FAMILIES:
            raise ValueError(f"unknown curve family {self.family!r}")

    def __len__(self):
        return len(self.vertices)

    @property
    def start(self) -> complex:
        return complex(self.vertices[0])

    @property
    def end(self) -> complex:
        return complex(self.vertices[-1])

    def reversed(self) -> "TracedCurve":
        vals = None if self.values is None else self.values[::-1]
        return replace(self, vertices=self.vertices[::-1], values=vals)

    def subcurve(self, i0: int, i1: int) -> "TracedCurve":
        vals = None if self.values is None else self.values[i0:i1]
        return replace(self, vertices=self.vertices[i0:i1], values=vals)

    def concat(self, other: "TracedCurve", tol: float = 1e-9) -> "TracedCurve":
        if abs(self.end - other.start) > tol:
            raise ValueError(f"endpoint mismatch: |{self.end} - {other.start}| > {tol}")
        vals = None
        if self.values is not None and other.values is not None:
            vals = np.concatenate([self.values, other.values[1:]])
        return TracedCurve(np.concatenate([self.vertices, other.vertices[1:]]), vals,
                           family=self.family, level=self.level, meta=dict(self.meta))

    def arc_length(self) -> float:
        return polyline_length(self.vertices)

    def nearest_vertex(self, z: complex) -> int:
        return int(np.argmin(np.abs(self.vertices - z)))

    def point_at_im(self, y: float) -> complex:
        """First point on the polyline with Im(zeta) == y (linear interpolation)."""
        im = self.vertices.imag
        for i in range(len(im) - 1):
            a, b = im[i], im[i + 1]
            if (a - y) * (b - y) <= 0 and a != b:
                t = (y - a) / (b - a)
                return complex(self.vertices[i] + t * (self.vertices[i + 1] - self.vertices[i]))
        raise ValueError(f"polyline does not reach Im == {y}")


def polyline_length(vertices) -> float:
    v = np.asarray(vertices, dtype=complex)
    if len(v) < 2:
        return 0.0
    return float(np.sum(np.abs(np.diff(v))))


def resample_polyline(vertices, max_step: float) -> np.ndarray:
    """Insert evenly spaced points so no segment exceeds max_step."""
    v = np.asarray(vertices, dtype=complex)
    out = [v[0]]
    for a, b in zip(v[:-1], v[1:]):
        n = max(1, int(np.ceil(abs(b - a) / max_step)))
        for j in range(1, n + 1):
            out.append(a + (b - a) * j / n)
    return np.array(out)
