"""The complex momentum kappa(zeta) = k(E - W(zeta)) on the zeta plane.

An :class:`AdiabaticProblem` binds a periodic operator, a slow perturbation W
and a real energy E.  It locates the branch points of kappa (solutions of
W(zeta) = E - E_j over the band edges E_j), continues branches of kappa along
zeta paths, and exposes the natural branch at a simple branch point.

Branch bookkeeping is path-based: a :class:`ZetaBranchContext` pins the branch
by an anchor point and value, and every evaluation continues kappa from the
anchor (or from the previous point of a traced curve).  Over a regular domain
all branches are +-kappa0 + 2*pi*m.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .curves import TracedCurve, resample_polyline
from .errors import BranchPointError, ClearanceError, GeometryError
from .hill import BandStructure, HillOperator, nearest_branch_value
from .potentials import AdiabaticPerturbation, PeriodicPotential

__all__ = ["ZetaBranchContext", "BranchPoint", "BranchPointSet", "AdiabaticProblem"]

_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ZetaBranchContext:
    """A branch of kappa pinned at anchor_zeta with value anchor_kappa.

    sigma and offset record the relation kappa = sigma*kappa_ref + 2*pi*offset
    to whatever reference branch this one was derived from.
    """

    anchor_zeta: complex
    anchor_kappa: complex
    sigma: int = +1
    offset: int = 0
    path: tuple = ()

    def transformed(self, sigma: int, offset: int) -> "ZetaBranchContext":
        return ZetaBranchContext(
            anchor_zeta=self.anchor_zeta,
            anchor_kappa=sigma * self.anchor_kappa + _TWO_PI * offset,
            sigma=self.sigma * sigma,
            offset=sigma * self.offset + offset,
            path=self.path,
        )


@dataclass(frozen=True)
class BranchPoint:
    zeta: complex
    edge_index: int          # 1-based index of the band edge E_j it solves
    edge_energy: float
    kappa1: complex = None   # sqrt coefficient of the local expansion
    kappa2: complex = None   # linear coefficient
    kappa3: complex = None   # w^{3/2} coefficient
    simple: bool = True      # W'(zeta0) != 0

    @property
    def natural_value(self) -> float:
        """kappa at the branch point for the natural branch: 0 or pi."""
        return np.pi * (self.edge_level % 2)

    @property
    def edge_level(self) -> int:
        """Integer l with k_p(E_j) = pi*l (edges E_{2l}, E_{2l+1} -> l)."""
        return self.edge_index // 2


@dataclass(frozen=True)
class BranchPointSet:
    points: tuple
    window: tuple            # (re_min, re_max, im_min, im_max)

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def zetas(self) -> np.ndarray:
        return np.array([p.zeta for p in self.points], dtype=complex)

    def distance(self, z) -> float:
        if not self.points:
            return np.inf
        return float(np.min(np.abs(self.zetas() - np.asarray(z, dtype=complex)[..., None])))

    def nearest(self, z: complex) -> BranchPoint:
        if not self.points:
            raise GeometryError("empty branch point set")
        i = int(np.argmin(np.abs(self.zetas() - z)))
        return self.points[i]


class AdiabaticProblem:
    """kappa(zeta) = k(E - W(zeta)) with path-based branch continuation."""

    def __init__(self, hill: HillOperator, perturbation: AdiabaticPerturbation,
                 energy: float, clearance: float = 1e-3,
                 window=(-0.5, 2 * np.pi + 0.5, -2.0, 2.0)):
        self.hill = hill
        self.W = perturbation
        self.E = float(energy)
        self.clearance = float(clearance)
        self.window = tuple(float(w) for w in window)
        self._bands = None
        self._branch_points = None
        self._prepared = False

    # -- setup -------------------------------------------------------------------

    @property
    def bands(self) -> BandStructure:
        if self._bands is None:
            reach = self.W.range_bound_on_strip(self._im_reach()) + 2.0
            self._bands = self.hill.band_structure(self.E + reach)
        return self._bands

    def _im_reach(self) -> float:
        return max(abs(self.window[2]), abs(self.window[3])) + 0.3

    def prepare(self):
        """Build layered discriminant tables for the working window and
        enumerate branch points.  Idempotent.

        Smaller-imaginary-extent tables are far more accurate, and most
        evaluations happen close to the real zeta axis, so several layers are
        built; lookups pick the tightest one covering the requested energy.
        """
        if self._prepared:
            return self
        im_top = self._im_reach()
        layers = [t for t in (0.25, 0.6, 1.1, im_top) if t <= im_top]
        if layers[-1] < im_top:
            layers.append(im_top)
        for im_z in layers:
            reach = self.W.range_bound_on_strip(im_z)
            im_e = self.W.im_bound_on_strip(im_z)
            self.hill.ensure_table(self.E - reach - 2.0, self.E + reach + 2.0,
                                   im_extent=im_e + 0.5)
        _ = self.bands
        self._branch_points = self.branch_points(self.window)
        self._prepared = True
        return self

    def energy_of(self, zeta):
        return self.E - self.W(zeta)

    # -- branch points -------------------------------------------------------------

    def branch_points(self, window=None, kappa1_fit: bool = True) -> BranchPointSet:
        """All solutions of W(zeta) = E - E_j inside the window.

        For the cosine perturbation the equation is inverted in closed form;
        for trigonometric polynomials it reduces to a polynomial in e^{i zeta}.
        Each simple point carries the sqrt coefficient kappa1 fitted on a ring.
        """
        window = tuple(float(w) for w in (window or self.window))
        re0, re1, im0, im1 = window
        im_reach = max(abs(im0), abs(im1)) + 0.1
        pts = []
        bands = self.bands
        for j, Ej in enumerate(bands.edges, start=1):
            # a closed-gap double edge is a regular point of k, not a branch point
            if j >= 2:
                gap = bands.gaps[j // 2 - 1] if j // 2 - 1 < len(bands.gaps) else None
                if gap is not None and not gap.open:
                    continue
            w_target = self.E - Ej
            for z in self._invert_w(w_target, window):
                if not (re0 - 1e-9 <= z.real <= re1 + 1e-9 and im0 - 1e-9 <= z.imag <= im1 + 1e-9):
                    continue
                simple = abs(self.W.derivative(z)) > 1e-8
                pts.append(BranchPoint(zeta=complex(z), edge_index=j,
                                       edge_energy=float(Ej), simple=simple))
        pts.sort(key=lambda p: (p.edge_index, p.zeta.real, p.zeta.imag))
        bps = BranchPointSet(points=tuple(pts), window=window)
        if kappa1_fit:
            fitted = tuple(self._fit_kappa1(p, bps) if p.simple else p for p in bps.points)
            bps = BranchPointSet(points=fitted, window=window)
        return bps

    def _invert_w(self, value: float, window):
        """Solutions of W(zeta) = value in (window + small margin)."""
        re0, re1, im0, im1 = window
        out = []
        if self.W.kind == "cos":
            w = complex(value) / self.W.alpha
            z0 = complex(np.emath.arccos(w))           # principal: Re in [0, pi]
            base = [z0, -z0]
            m_lo = int(np.floor((re0 - np.pi) / _TWO_PI)) - 1
            m_hi = int(np.ceil((re1 + np.pi) / _TWO_PI)) + 1
            for b in base:
                for m in range(m_lo, m_hi + 1):
                    z = b + _TWO_PI * m
                    if re0 - 1e-9 <= z.real <= re1 + 1e-9 and im0 - 1e-9 <= z.imag <= im1 + 1e-9:
                        out.append(z)
        else:
            # sum_j c_j cos(j z) + s_j sin(j z) = value  ->  polynomial in u=e^{iz}
            pairs = self.W._padded()
            n = len(pairs)
            coeffs = np.zeros(2 * n + 1, dtype=complex)   # powers u^{-n}..u^{n} shifted
            for j, (c, s) in enumerate(pairs, start=1):
                coeffs[n + j] += 0.5 * (c - 1j * s)
                coeffs[n - j] += 0.5 * (c + 1j * s)
            coeffs[n] -= value
            roots = np.roots(coeffs[::-1])
            for u in roots:
                if abs(u) < 1e-12:
                    continue
                z0 = -1j * np.log(u)
                m_lo = int(np.floor((re0 - z0.real) / _TWO_PI)) - 1
                m_hi = int(np.ceil((re1 - z0.real) / _TWO_PI)) + 1
                for m in range(m_lo, m_hi + 1):
                    z = z0 + _TWO_PI * m
                    if re0 - 1e-9 <= z.real <= re1 + 1e-9 and im0 - 1e-9 <= z.imag <= im1 + 1e-9:
                        out.append(z)
        # dedupe
        uniq = []
        for z in out:
            if not any(abs(z - u) < 1e-9 for u in uniq):
                uniq.append(z)
        return uniq

    def _fit_kappa1(self, p: BranchPoint, bps: BranchPointSet) -> BranchPoint:
        """Least-squares local expansion kappa - kappa0 = k1 w^{1/2} + k2 w +
        k3 w^{3/2} on a ring of radius 10x clearance (shrunk near neighbors)."""
        rho = 10.0 * self.clearance
        others = [q.zeta for q in bps.points if abs(q.zeta - p.zeta) > 1e-9]
        if others:
            rho = min(rho, 0.25 * min(abs(p.zeta - o) for o in others))
        nat = self.natural_branch(p, sign=+1, ring_radius=rho)
        phis = np.linspace(0.0, 2 * np.pi, 49)[:-1]
        ring = p.zeta + rho * np.exp(1j * phis)
        kvals = self.kappa_along(ring, start_value=nat.anchor_kappa,
                                 start_zeta=nat.anchor_zeta, check_clearance=False)
        s = np.sqrt(rho) * np.exp(0.5j * phis)
        A = np.stack([s, s ** 2, s ** 3], axis=1)
        coef, *_ = np.linalg.lstsq(A, kvals - p.natural_value, rcond=None)
        return replace(p, kappa1=complex(coef[0]), kappa2=complex(coef[1]),
                       kappa3=complex(coef[2]))

    # -- branch continuation ---------------------------------------------------------

    def kappa_step(self, z_new: complex, z_prev: complex, k_prev: complex,
                   jump_tol: float = 0.4, max_refine: int = 40,
                   check_clearance: bool = True) -> complex:
        """Continue kappa from (z_prev, k_prev) to z_new along the segment."""
        if check_clearance:
            self._assert_clear(z_new)
        stack = [(complex(z_prev), complex(z_new), 0)]
        k = complex(k_prev)
        while stack:
            a, b, depth = stack.pop()
            e = self.E - complex(self.W(b))
            d = self.hill.discriminant_scalar(e)
            principal = complex(np.arccos(np.asarray(d, dtype=complex) / 2.0))
            cand, dist, second = nearest_branch_value(principal, k)
            if (dist > jump_tol or dist > 0.5 * second) and depth < max_refine:
                mid = 0.5 * (a + b)
                if check_clearance:
                    self._assert_clear(mid)
                stack.append((mid, b, depth + 1))
                stack.append((a, mid, depth + 1))
                continue
            if dist > jump_tol:
                raise BranchPointError(
                    f"kappa branch ambiguous near zeta={b} (step {dist:.3f})",
                    location=b)
            k = cand
        return k

    def kappa_along(self, polyline, start_value: complex, start_zeta: complex = None,
                    check_clearance: bool = True) -> np.ndarray:
        """Per-vertex kappa along a polyline, continued from its first vertex.

        ``start_zeta`` defaults to the first vertex; if given, the branch is
        first walked from there to the first vertex.
        """
        zs = np.asarray(polyline, dtype=complex)
        if check_clearance:
            bps = self._branch_points or self.branch_points(self._window_of(zs), kappa1_fit=False)
            d = np.abs(zs[:, None] - bps.zetas()[None, :]) if len(bps) else None
            if d is not None and d.size and d.min() < self.clearance:
                i, j = np.unravel_index(np.argmin(d), d.shape)
                raise ClearanceError(
                    f"curve vertex {zs[i]} within {d.min():.2e} of branch point"
                    f" {bps.points[j].zeta} (clearance {self.clearance})",
                    location=zs[i], distance=float(d.min()),
                    nearest=bps.points[j].zeta)
        k = complex(start_value)
        if start_zeta is not None and abs(start_zeta - zs[0]) > 0:
            k = self.kappa_step(complex(zs[0]), complex(start_zeta), k,
                                check_clearance=check_clearance)
        # batched discriminants for the nominal vertices, sequential matching
        evals = self.E - self.W(zs)
        table = self.hill._covering_table(evals)
        if table is not None:
            ds = table.eval(evals)
        else:
            ds = self.hill.discriminant(evals)
        princ = np.arccos(np.asarray(ds, dtype=complex) / 2.0)
        out = np.empty(len(zs), dtype=complex)
        out[0] = k
        # verify start value against the local discriminant
        if abs(np.cos(k) - ds[0] / 2.0) > 1e-5 * max(1.0, abs(ds[0])):
            raise ValueError("start_value inconsistent with cos(kappa) = D/2 at the first vertex")
        for i in range(1, len(zs)):
            cand, dist, second = nearest_branch_value(complex(princ[i]), out[i - 1])
            if dist > 0.4 or dist > 0.5 * second:
                cand = self.kappa_step(complex(zs[i]), complex(zs[i - 1]), complex(out[i - 1]),
                                       check_clearance=check_clearance)
            out[i] = cand
        return out

    def _window_of(self, zs):
        return (float(zs.real.min()) - 0.5, float(zs.real.max()) + 0.5,
                float(zs.imag.min()) - 0.5, float(zs.imag.max()) + 0.5)

    def _assert_clear(self, z: complex):
        bps = self._branch_points
        if bps is None:
            return
        d = bps.distance(z)
        if d < self.clearance:
            raise ClearanceError(
                f"zeta={z} within {d:.2e} of a branch point (clearance {self.clearance})",
                location=z, distance=d, nearest=bps.nearest(z).zeta)

    def kappa(self, zeta: complex, branch: ZetaBranchContext,
              check_clearance: bool = True) -> complex:
        """Value of the selected branch at zeta (continued along stored path
        and then a straight segment)."""
        z_prev = branch.anchor_zeta
        k_prev = branch.anchor_kappa
        for wp in branch.path:
            k_prev = self.kappa_step(complex(wp), complex(z_prev), k_prev,
                                     check_clearance=check_clearance)
            z_prev = complex(wp)
        return self.kappa_step(complex(zeta), z_prev, k_prev,
                               check_clearance=check_clearance)

    def kappa_prime(self, zeta: complex, kappa_value: complex) -> complex:
        """d kappa / d zeta = -k'(E - W) * W'(zeta)."""
        e = self.E - complex(self.W(zeta))
        kp = self.hill.k_prime(e, kappa_value)
        return -kp * complex(self.W.derivative(zeta))

    # -- distinguished branches ---------------------------------------------------------

    def main_branch(self, zeta: complex) -> ZetaBranchContext:
        """Main branch kappa_p = k_p(E - W(zeta)); zeta must have
        Im(E - W(zeta)) >= 0 (for W = alpha cos this is the half-strip Pi
        and its 2*pi translates)."""
        e = self.E - complex(self.W(zeta))
        if e.imag < -1e-12:
            raise ValueError("main branch requested outside the preimage of the upper half-plane")
        k = self.hill.quasimomentum_main(e, self.bands)
        return ZetaBranchContext(anchor_zeta=complex(zeta), anchor_kappa=complex(k))

    def continue_kappa(self, curve, start: ZetaBranchContext) -> TracedCurve:
        """Continuation along a polyline (TracedCurve or vertex array)."""
        zs = curve.vertices if isinstance(curve, TracedCurve) else np.asarray(curve, dtype=complex)
        vals = self.kappa_along(zs, start_value=start.anchor_kappa,
                                start_zeta=start.anchor_zeta)
        fam = curve.family if isinstance(curve, TracedCurve) else "user"
        return TracedCurve(zs, vals, family=fam)

    def natural_branch(self, bp: BranchPoint, sign: int = +1,
                       ring_radius: float = None) -> ZetaBranchContext:
        """Branch continuous near a simple branch point with value 0 or pi there.

        The natural branch is defined up to sign; ``sign=+1`` keeps the
        orientation of the main-branch continuation, ``sign=-1`` reflects it.
        Anchored at a reference point on a small ring around the point.
        """
        if not bp.simple:
            raise BranchPointError(f"branch point at {bp.zeta} is not simple", location=bp.zeta)
        rho = ring_radius or 10.0 * self.clearance
        # reference point: radially away from the nearest other branch point
        ref = bp.zeta + rho * np.exp(1j * 0.37)
        e_ref = self.E - complex(self.W(ref))
        # continue k from a safe real anchor to e_ref, then reduce to the natural window
        k_ref = self.hill._start_k_near(e_ref, self.bands, sheet=+1)
        level = bp.edge_level
        target = np.pi * (level % 2)
        k_nat = sign * (k_ref - np.pi * level) + target
        return ZetaBranchContext(anchor_zeta=complex(ref), anchor_kappa=complex(k_nat),
                                 sigma=sign, offset=0)
