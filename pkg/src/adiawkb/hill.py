"""Floquet machinery for the unperturbed periodic operator -d^2/dx^2 + V(x).

This module computes the monodromy of the period-1 problem, the discriminant
D(E) = c(1,E) + s'(1,E), the band/gap structure, the quasi-momentum k(E) with
cos k = D/2 and its analytic continuation, normalized Bloch solutions and
their periodic components, and the meromorphic function omega built from them
(whose differential has simple poles exactly at the pole of the Bloch solution
and at the critical point of k in each open gap).

Conventions
-----------
* The main branch k_p is fixed on the closed upper half-plane by
  -i*k(E+i0) > 0 below the spectrum; on the n-th band it increases from
  pi*(n-1) to pi*n, and inside the n-th open gap Re k_p = pi*n, Im k_p > 0.
* "Sheet" +1 at an energy means the branch whose Floquet multiplier is
  exp(i*k) for the k value at hand; sheet -1 swaps k -> -k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as _cheb
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import (BranchPointError, ClearanceError, IntegratorError,
                     NearPoleError, PoleError)
from .curves import TracedCurve
from .potentials import PeriodicPotential

__all__ = [
    "FundamentalPair", "GapRecord", "BandStructure", "BranchContext",
    "HillOperator", "nearest_branch_value",
]

_TWO_PI = 2.0 * np.pi


# ----------------------------------------------------------------------------
# data types
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class FundamentalPair:
    """Values at x=1 of the cosine-like and sine-like solutions.

    c(0)=1, c'(0)=0, s(0)=0, s'(0)=1.  Optional E-derivatives come from the
    variational system integrated alongside.  The Wronskian c*s' - s*c' stays
    1 up to the integration tolerance.
    """

    energy: complex
    c: complex
    s: complex
    c_prime: complex
    s_prime: complex
    c_E: complex = None
    s_E: complex = None
    c_prime_E: complex = None
    s_prime_E: complex = None

    @property
    def discriminant(self) -> complex:
        return self.c + self.s_prime

    @property
    def discriminant_E(self) -> complex:
        if self.c_E is None:
            raise ValueError("pair was computed without E-derivatives")
        return self.c_E + self.s_prime_E

    @property
    def wronskian(self) -> complex:
        return self.c * self.s_prime - self.s * self.c_prime


@dataclass(frozen=True)
class GapRecord:
    index: int                    # n >= 1, gap between bands n and n+1
    lo: float                     # E_{2n}
    hi: float                     # E_{2n+1}
    open: bool
    q_energy: float = None        # zero of k'(E) inside the gap
    p_energy: float = None        # pole of the normalized Bloch solution
    p_sheet: int = 0              # +1 / -1, sheet carrying the pole
    p_at_edge: bool = False

    @property
    def width(self) -> float:
        return self.hi - self.lo


@dataclass(frozen=True)
class BandStructure:
    """Ordered band edges E_1 < E_2 <= E_3 < ... with per-gap records."""

    edges: np.ndarray
    gaps: tuple
    e_max: float

    def __post_init__(self):
        object.__setattr__(self, "edges", np.asarray(self.edges, dtype=float))

    @property
    def n_bands(self) -> int:
        return (len(self.edges) + 1) // 2

    def band(self, n: int) -> tuple:
        """Interval [E_{2n-1}, E_{2n}] of the n-th band (1-based)."""
        if n < 1 or 2 * n - 1 > len(self.edges):
            raise IndexError(f"band {n} not resolved below e_max={self.e_max}")
        lo = self.edges[2 * n - 2]
        hi = self.edges[2 * n - 1] if 2 * n - 1 < len(self.edges) else self.e_max
        return (float(lo), float(hi))

    def gap(self, n: int) -> GapRecord:
        if n < 1 or n > len(self.gaps):
            raise IndexError(f"gap {n} not resolved below e_max={self.e_max}")
        return self.gaps[n - 1]

    def open_gaps(self):
        return [g for g in self.gaps if g.open]

    def locate(self, energy: float, edge_tol: float = 1e-9):
        """Classify a real energy: ('edge', j) | ('band', n) | ('gap', n) | ('below', 0).

        Edge index j is 1-based; band/gap index n is 1-based.
        """
        e = float(energy)
        j = int(np.searchsorted(self.edges, e))
        near = []
        if j < len(self.edges):
            near.append(j)
        if j > 0:
            near.append(j - 1)
        for i in near:
            if abs(e - self.edges[i]) <= edge_tol:
                return ("edge", i + 1)
        if j == 0:
            return ("below", 0)
        # after edge index j-1 (0-based), parity decides: edges alternate
        # band-start/band-end in the pattern E1 [E2 E3] [E4 E5] ...
        if j % 2 == 1:
            return ("band", (j + 1) // 2)
        return ("gap", j // 2)

    def min_edge_distance(self, energy) -> float:
        e = np.asarray(energy, dtype=complex)
        return float(np.min(np.abs(e[..., None] - self.edges), axis=-1).min())


@dataclass(frozen=True)
class BranchContext:
    """A single-valued branch of k (or kappa) fixed by an anchor and a path.

    Any other branch over the same simply connected region is
    sigma * k + 2*pi*m; ``sigma`` and ``offset`` record how this branch
    relates to the reference branch it was derived from.
    """

    sigma: int = +1
    offset: int = 0
    anchor_point: complex = 0.0     # energy (or zeta) where the branch is pinned
    anchor_value: complex = 0.0     # k (or kappa) there
    path: tuple = ()                # continuation path that fixed the branch

    def transformed(self, sigma: int, offset: int) -> "BranchContext":
        return BranchContext(
            sigma=self.sigma * sigma,
            offset=sigma * self.offset + offset,
            anchor_point=self.anchor_point,
            anchor_value=sigma * self.anchor_value + _TWO_PI * offset,
            path=self.path,
        )


# ----------------------------------------------------------------------------
# branch matching
# ----------------------------------------------------------------------------

def nearest_branch_value(principal: complex, previous: complex):
    """Candidate of {+-principal + 2*pi*m} nearest to ``previous``.

    Returns (value, distance, second_distance); ``principal`` is any value
    with the correct cosine, e.g. arccos(D/2).
    """
    best = None
    dists = []
    for s in (+1, -1):
        base = s * principal
        m = round((previous.real - base.real) / _TWO_PI)
        for mm in (m - 1, m, m + 1):
            cand = base + _TWO_PI * mm
            d = abs(cand - previous)
            dists.append(d)
            if best is None or d < best[1]:
                best = (cand, d)
    dists.sort()
    second = dists[1] if len(dists) > 1 else np.inf
    return best[0], best[1], second


# ----------------------------------------------------------------------------
# discriminant surrogate (patched Chebyshev, validated against the integrator)
# ----------------------------------------------------------------------------

class _DiscriminantTable:
    """Piecewise-Chebyshev model of the entire function D(E).

    Built from monodromy values at Chebyshev nodes on real patches and
    validated against direct integration at complex probe points.  Valid in
    the box Re E in [lo, hi], |Im E| <= im_extent; callers must fall back to
    direct integration outside.  Patch width ~ 3.2 * im_extent keeps the
    Bernstein-ellipse amplification of coefficient noise harmless.
    """

    def __init__(self, hill: "HillOperator", lo: float, hi: float, im_extent: float,
                 max_degree: int = 96, validation_tol: float = 1e-7):
        self.lo = float(lo)
        self.hi = float(hi)
        self.im_extent = float(im_extent)
        width_target = max(6.4 * im_extent, 40.0, (hi - lo) / 24.0)
        n_patch = max(1, int(np.ceil((hi - lo) / width_target)))
        self.half = (hi - lo) / (2 * n_patch)
        self.centers = lo + self.half * (2 * np.arange(n_patch) + 1)

        k = np.arange(max_degree + 1)
        xk = np.cos(np.pi * (k + 0.5) / (max_degree + 1))
        nodes = np.concatenate([c + self.half * xk for c in self.centers])
        fvals = hill._monodromy_raw(nodes.astype(complex))
        disc = (fvals[0] + fvals[3]).real

        self.coefs = []
        for i in range(n_patch):
            fk = disc[i * (max_degree + 1):(i + 1) * (max_degree + 1)]
            cf = _cheb.chebfit(xk, fk, max_degree)
            a = np.abs(cf)
            thresh = a.max() * 5e-14
            keep = max_degree + 1
            for n in range(8, max_degree + 1):
                if a[n:].max() < thresh:
                    keep = n
                    break
            self.coefs.append(cf[:keep])

        # validate against direct integration at complex probes
        rng = np.random.default_rng(12345)
        n_probe = 40
        probes = (rng.uniform(lo, hi, n_probe)
                  + 1j * rng.uniform(-im_extent, im_extent, n_probe))
        direct = hill._monodromy_raw(probes)
        dd = direct[0] + direct[3]
        dc = self.eval(probes)
        err = np.abs(dc - dd) / np.maximum(1.0, np.abs(dd))
        self.validation_error = float(err.max())
        self.valid = self.validation_error <= validation_tol

    def covers(self, energy) -> bool:
        e = np.asarray(energy, dtype=complex)
        return bool(np.all((e.real >= self.lo) & (e.real <= self.hi)
                           & (np.abs(e.imag) <= self.im_extent)))

    def _patch_index(self, re):
        return np.clip(((re - self.lo) // (2 * self.half)).astype(int), 0, len(self.centers) - 1)

    def eval(self, energy, deriv: int = 0):
        e = np.asarray(energy, dtype=complex)
        scalar = e.ndim == 0
        e = np.atleast_1d(e)
        out = np.empty(e.shape, dtype=complex)
        idx = self._patch_index(e.real)
        for i in np.unique(idx):
            m = idx == i
            cf = self.coefs[i]
            for _ in range(deriv):
                cf = _cheb.chebder(cf) / self.half
            out[m] = _cheb.chebval((e[m] - self.centers[i]) / self.half, cf)
        return complex(out[0]) if scalar else out

    def eval_scalar(self, energy: complex, deriv: int = 0) -> complex:
        """Clenshaw evaluation on a python scalar (fast path for tracing)."""
        i = min(max(int((energy.real - self.lo) // (2 * self.half)), 0), len(self.centers) - 1)
        cf = self.coefs[i]
        for _ in range(deriv):
            cf = _cheb.chebder(cf) / self.half
        z = (energy - self.centers[i]) / self.half
        b1 = b2 = 0.0
        z2 = 2.0 * z
        for a in cf[:0:-1]:
            b1, b2 = z2 * b1 - b2 + a, b1
        return z * b1 - b2 + cf[0]


# ----------------------------------------------------------------------------
# the operator
# ----------------------------------------------------------------------------

class HillOperator:
    """Everything about H0 = -d^2/dx^2 + V(x) needed by the adiabatic method.

    All heavy evaluation is batched over energies.  Instances are immutable
    apart from internal caches (band structure, discriminant tables), which
    are only ever appended to, so read-only concurrent use is safe.
    """

    def __init__(self, potential: PeriodicPotential, rtol: float = 1e-10,
                 atol: float = 1e-12, edge_tol: float = 1e-10,
                 closed_gap_tol: float = 1e-8, sin_k_guard: float = 1e-8):
        self.potential = potential
        self.rtol = float(rtol)
        self.atol = float(atol)
        self.edge_tol = float(edge_tol)
        self.closed_gap_tol = float(closed_gap_tol)
        self.sin_k_guard = float(sin_k_guard)
        self._bands_cache = {}
        self._tables = []

    # -- low-level integration ------------------------------------------------

    def _monodromy_raw(self, energies, derivatives=False, rtol=None):
        """Batched fundamental-pair values at x=1.

        Returns array of shape (4, B) with rows (c, c', s, s') or (8, B)
        with the variational rows (c_E, c_E', s_E, s_E') appended.
        """
        E = np.atleast_1d(np.asarray(energies, dtype=complex))
        B = E.size
        V = self.potential
        ncomp = 8 if derivatives else 4

        def rhs(x, y):
            y = y.reshape(ncomp, B)
            v = V(x)
            out = np.empty_like(y)
            out[0] = y[1]
            out[1] = (v - E) * y[0]
            out[2] = y[3]
            out[3] = (v - E) * y[2]
            if derivatives:
                out[4] = y[5]
                out[5] = (v - E) * y[4] - y[0]
                out[6] = y[7]
                out[7] = (v - E) * y[6] - y[2]
            return out.ravel()

        y0 = np.zeros((ncomp, B), dtype=complex)
        y0[0] = 1.0
        y0[3] = 1.0
        sol = solve_ivp(rhs, (0.0, 1.0), y0.ravel(), method="DOP853",
                        rtol=rtol or self.rtol, atol=self.atol)
        if not sol.success:
            raise IntegratorError(f"monodromy integration failed: {sol.message}",
                                  energy=E[0] if B == 1 else None)
        return sol.y[:, -1].reshape(ncomp, B)

    def monodromy(self, energy, derivatives: bool = False) -> FundamentalPair:
        y = self._monodromy_raw(np.array([energy]), derivatives=derivatives)
        kw = {}
        if derivatives:
            kw = dict(c_E=complex(y[4, 0]), c_prime_E=complex(y[5, 0]),
                      s_E=complex(y[6, 0]), s_prime_E=complex(y[7, 0]))
        return FundamentalPair(energy=complex(energy), c=complex(y[0, 0]),
                               c_prime=complex(y[1, 0]), s=complex(y[2, 0]),
                               s_prime=complex(y[3, 0]), **kw)

    def fundamental_profile(self, energy: complex, x_grid):
        """Sampled (c, c', s, s') on a grid in [0, 1]."""
        E = complex(energy)

        def rhs(x, y):
            v = self.potential(x)
            return [y[1], (v - E) * y[0], y[3], (v - E) * y[2]]

        x = np.asarray(x_grid, dtype=float)
        sol = solve_ivp(rhs, (0.0, max(1.0, x.max())),
                        np.array([1, 0, 0, 1], dtype=complex),
                        method="DOP853", rtol=self.rtol, atol=self.atol,
                        dense_output=True)
        if not sol.success:
            raise IntegratorError("fundamental profile integration failed", energy=E)
        return sol.sol(x)

    # -- discriminant ----------------------------------------------------------

    def ensure_table(self, lo: float, hi: float, im_extent: float) -> _DiscriminantTable:
        """Build (or reuse) a validated surrogate covering the requested box.

        Tables are kept sorted by imaginary extent so lookups prefer the
        tightest (most accurate) covering model.
        """
        for t in self._tables:
            if t.valid and t.lo <= lo and t.hi >= hi and t.im_extent >= im_extent \
                    and t.im_extent <= 2.5 * im_extent + 1.0:
                return t
        t = _DiscriminantTable(self, lo, hi, im_extent)
        if t.valid:
            self._tables.append(t)
            self._tables.sort(key=lambda s: s.im_extent)
        return t

    def _covering_table(self, energies):
        for t in self._tables:
            if t.valid and t.covers(energies):
                return t
        return None

    def discriminant(self, energies, deriv: int = 0, method: str = "auto"):
        """D(E) (deriv=0) or D'(E) (deriv=1) for scalar or array E.

        ``method``: 'auto' uses a validated surrogate table when one covers
        the request, 'ode' forces direct integration (derivatives via the
        variational system, never finite differences).
        """
        scalar = np.isscalar(energies) or np.asarray(energies).ndim == 0
        E = np.atleast_1d(np.asarray(energies, dtype=complex))
        if method == "auto":
            t = self._covering_table(E)
            if t is not None:
                out = t.eval(E, deriv=deriv)
                return complex(np.atleast_1d(out)[0]) if scalar else np.asarray(out)
        y = self._monodromy_raw(E, derivatives=(deriv > 0))
        out = (y[4] + y[7]) if deriv else (y[0] + y[3])
        return complex(out[0]) if scalar else out

    def discriminant_scalar(self, energy: complex, deriv: int = 0) -> complex:
        """Fast scalar D(E) through the surrogate; falls back to integration."""
        for t in self._tables:
            if t.valid and t.lo <= energy.real <= t.hi and abs(energy.imag) <= t.im_extent:
                return t.eval_scalar(complex(energy), deriv=deriv)
        return self.discriminant(energy, deriv=deriv, method="ode")

    # -- band structure ---------------------------------------------------------

    def band_structure(self, e_max: float) -> BandStructure:
        key = round(float(e_max), 9)
        if key not in self._bands_cache:
            self._bands_cache[key] = self._compute_bands(float(e_max))
        return self._bands_cache[key]

    def _compute_bands(self, e_max: float) -> BandStructure:
        vbound = self.potential.sup_norm_bound
        e_lo = -vbound - 1.0
        # scan step tied to the largest Fourier mode of V; edges of the first
        # few bands move at most O(|V|) from the free positions (pi j)^2
        step = min(0.25, 1.0 / (1 + self.potential.n_modes))
        pad = 2.0
        table = self.ensure_table(e_lo - 1.0, e_max + pad + 1.0, im_extent=2.0)
        grid = np.arange(e_lo, e_max + pad, step)
        d = np.real(table.eval(grid)) if table.valid else np.real(self.discriminant(grid, method="ode"))
        dp = np.real(table.eval(grid, deriv=1)) if table.valid else np.real(self.discriminant(grid, deriv=1, method="ode"))

        disc_f = (lambda e: float(np.real(table.eval_scalar(complex(e))))) if table.valid else \
                 (lambda e: float(np.real(self.discriminant(e, method="ode"))))
        disc_fp = (lambda e: float(np.real(table.eval_scalar(complex(e), deriv=1)))) if table.valid else \
                  (lambda e: float(np.real(self.discriminant(e, deriv=1, method="ode"))))

        # critical points of D: one per (possibly closed) gap
        crit = []
        for i in range(len(grid) - 1):
            if dp[i] == 0.0:
                crit.append(grid[i])
            elif dp[i] * dp[i + 1] < 0:
                crit.append(brentq(disc_fp, grid[i], grid[i + 1], xtol=1e-13, rtol=8.9e-16))
        crit = [t for t in crit if t > e_lo]

        def refine_edge(lo, hi, target):
            """Root of D - target in [lo, hi], polished with direct integration."""
            r = brentq(lambda e: disc_f(e) - target, lo, hi, xtol=1e-12, rtol=8.9e-16)
            # secant polish on the ODE discriminant
            f = lambda e: float(np.real(self.discriminant(e, method="ode"))) - target
            e0, e1 = r, r + max(1e-7, 1e-9 * abs(r))
            f0, f1 = f(e0), f(e1)
            for _ in range(4):
                if f1 == f0:
                    break
                e2 = e1 - f1 * (e1 - e0) / (f1 - f0)
                if not np.isfinite(e2) or abs(e2 - e1) > 10 * abs(e1 - e0):
                    break
                e0, f0, e1, f1 = e1, f1, e2, f(e2)
                if abs(e1 - e0) < self.edge_tol * 1e-2:
                    break
            return e1

        # E_1: D decreases from +infinity through +2 left of the first critical point
        first_stop = crit[0] if crit else e_max + pad
        lo = e_lo
        while disc_f(lo) <= 2.0:
            lo -= 1.0
        edges = [refine_edge(lo, first_stop, 2.0)]
        gaps = []

        for j, t in enumerate(crit, start=1):
            val = disc_f(t)
            sign = 1.0 if val >= 0 else -1.0
            target = 2.0 * sign
            if abs(val) - 2.0 <= 0.25 * self.closed_gap_tol:
                edges.extend([t, t])
                gaps.append(GapRecord(index=j, lo=t, hi=t, open=False))
                continue
            # bracket both roots of D = target around t
            h = step
            a = t - h
            while not (abs(disc_f(a)) < 2.0):
                h *= 1.6
                a = t - h
                if a < e_lo - 2:
                    raise IntegratorError("failed to bracket a band edge", energy=t)
            lo_root = refine_edge(a, t, target)
            h = step
            b = t + h
            while not (abs(disc_f(b)) < 2.0):
                h *= 1.6
                b = t + h
            hi_root = refine_edge(t, b, target)
            if hi_root - lo_root < self.closed_gap_tol:
                mid = 0.5 * (lo_root + hi_root)
                edges.extend([mid, mid])
                gaps.append(GapRecord(index=j, lo=mid, hi=mid, open=False))
            else:
                edges.extend([lo_root, hi_root])
                gaps.append(GapRecord(index=j, lo=lo_root, hi=hi_root, open=True,
                                      q_energy=t))

        edges = np.array(edges)
        keep = edges <= e_max
        edges = edges[keep]
        gaps = [g for g in gaps if g.lo <= e_max]
        provisional = BandStructure(edges=edges, gaps=tuple(gaps), e_max=e_max)
        gaps = [self._locate_p_point(g, provisional) if g.open else g for g in gaps]
        return BandStructure(edges=edges, gaps=tuple(gaps), e_max=e_max)

    def _locate_p_point(self, gap: GapRecord, bands: BandStructure) -> GapRecord:
        """Find the pole of the normalized Bloch solution in a gap.

        The pole projects to the zero of s(1, E) (the denominator of the
        Floquet normalization) in the closed gap, and sits on the sheet whose
        multiplier equals s'(1) there.
        """
        pad = max(1e-7, 1e-6 * gap.width)
        lo, hi = gap.lo - pad, gap.hi + pad
        n_scan = 64
        es = np.linspace(lo, hi, n_scan)
        s1 = np.real(self._monodromy_raw(es.astype(complex))[2])
        mu = None
        for i in range(n_scan - 1):
            if s1[i] == 0.0:
                mu = es[i]
                break
            if s1[i] * s1[i + 1] < 0:
                f = lambda e: float(np.real(self._monodromy_raw(np.array([e], dtype=complex))[2, 0]))
                mu = brentq(f, es[i], es[i + 1], xtol=1e-13, rtol=8.9e-16)
                break
        if mu is None:
            i = int(np.argmin(np.abs(s1)))
            mu = float(es[i])
        at_edge = min(abs(mu - gap.lo), abs(mu - gap.hi)) <= 10 * self.edge_tol
        pair = self.monodromy(mu)
        # multipliers at s(1)=0 are c(1) and s'(1); main-branch multiplier has
        # modulus < 1 in the gap interior
        probe = min(max(mu, gap.lo + 1e-9 * max(1.0, gap.width)),
                    gap.hi - 1e-9 * max(1.0, gap.width))
        lam_plus = np.exp(1j * self._kp_real_scalar(probe, bands))
        sheet = +1 if abs(lam_plus - pair.s_prime) <= abs(1.0 / lam_plus - pair.s_prime) else -1
        return GapRecord(index=gap.index, lo=gap.lo, hi=gap.hi, open=True,
                         q_energy=gap.q_energy, p_energy=float(mu),
                         p_sheet=sheet, p_at_edge=bool(at_edge))

    # -- quasi-momentum ----------------------------------------------------------

    def _band_index_for(self, energy: float, bands: BandStructure):
        kind, n = bands.locate(energy, edge_tol=self.edge_tol)
        if kind == "edge":
            raise BranchPointError(f"E={energy} is a band edge (index {n})",
                                   location=energy)
        return kind, n

    def _kp_real_scalar(self, energy: float, bands: BandStructure = None) -> complex:
        if bands is None:
            bands = self.band_structure(max(float(energy) + 10.0, 10.0))
        kind, n = self._band_index_for(float(energy), bands)
        d = np.real(self.discriminant(float(energy)))
        if kind == "below":
            return 1j * float(np.arccosh(max(d / 2.0, 1.0)))
        if kind == "band":
            t = (-1.0) ** (n - 1) * d / 2.0
            return np.pi * (n - 1) + float(np.arccos(np.clip(t, -1.0, 1.0)))
        # gap n
        t = (-1.0) ** n * d / 2.0
        return np.pi * n + 1j * float(np.arccosh(max(t, 1.0)))

    def quasimomentum_main(self, energy, bands: BandStructure = None) -> complex:
        """Main branch k_p on the closed upper half-plane.

        Real energies give the boundary value k_p(E + i0); band edges raise
        BranchPointError.
        """
        e = complex(energy)
        if e.imag < -1e-14:
            raise ValueError("main branch is defined on the closed upper half-plane")
        if bands is None:
            bands = self.band_structure(max(abs(e.real) + 10.0, 10.0))
        if abs(e.imag) <= 1e-14:
            return self._kp_real_scalar(e.real, bands)
        # anchor on the real axis away from edges, then continue straight up/over
        anchor = self._safe_real_anchor(e.real, bands)
        k0 = self._kp_real_scalar(anchor, bands)
        path = np.array([anchor, complex(anchor, e.imag), e])
        curve = self.continue_quasimomentum(
            path, BranchContext(anchor_point=anchor, anchor_value=k0),
            bands=bands, clearance=0.0)
        return complex(curve.values[-1])

    def _safe_real_anchor(self, x: float, bands: BandStructure) -> float:
        d = float(np.min(np.abs(bands.edges - x))) if len(bands.edges) else np.inf
        if d > 0.1:
            return x
        kind, n = bands.locate(x, edge_tol=0.0)
        if kind == "below":
            return float(bands.edges[0] - 1.0)
        if kind == "edge":
            kind, n = ("band", n // 2 + 1) if n % 2 else ("gap", n // 2)
        if kind == "band":
            lo, hi = bands.band(n)
        else:
            g = bands.gap(n)
            lo, hi = g.lo, g.hi
        if hi - lo < 4e-3:  # too narrow: hop to the neighboring band midpoint
            lo, hi = bands.band(min(n + 1, bands.n_bands))
        w = hi - lo
        return float(min(max(x, lo + 0.3 * w), hi - 0.3 * w))

    def continue_quasimomentum(self, path, start: BranchContext,
                               bands: BandStructure = None,
                               clearance: float = 1e-6,
                               jump_tol: float = 0.4,
                               max_refine: int = 30) -> TracedCurve:
        """Single-valued continuation of k along a path in the energy plane.

        Incremental arccos unwrapping: at each vertex the candidate set
        {+-arccos(D/2) + 2 pi m} is matched to the previous value; segments are
        subdivided until the step in k is unambiguous.  A closed path around a
        single simple edge returns the reflected branch.
        """
        pts = np.asarray(path, dtype=complex)
        if bands is None:
            hi = float(np.max(pts.real)) + 10.0
            bands = self.band_structure(max(hi, 10.0))
        if clearance > 0:
            for z in pts:
                dmin = float(np.min(np.abs(bands.edges - z)))
                if dmin < clearance:
                    j = int(np.argmin(np.abs(bands.edges - z)))
                    raise ClearanceError(
                        f"path point {z} is within {dmin:.3e} of edge E_{j+1}"
                        f" (clearance {clearance})",
                        location=z, distance=dmin, nearest=bands.edges[j])
        k_prev = complex(start.anchor_value)
        d0 = self.discriminant_scalar(complex(pts[0]))
        if abs(np.cos(k_prev) - d0 / 2.0) > 1e-5 * max(1.0, abs(d0)):
            raise ValueError("start.anchor_value does not match cos k = D/2 at path[0]")
        out_z = [complex(pts[0])]
        out_k = [k_prev]
        for a, b in zip(pts[:-1], pts[1:]):
            k_prev = self._continue_segment(complex(a), complex(b), k_prev,
                                            out_z, out_k, jump_tol, max_refine,
                                            bands, clearance)
        return TracedCurve(np.array(out_z), np.array(out_k), family="user")

    def _continue_segment(self, a, b, k_prev, out_z, out_k, jump_tol,
                          max_refine, bands, clearance):
        stack = [(a, b, 0)]
        while stack:
            za, zb, depth = stack.pop()
            d = self.discriminant_scalar(zb)
            principal = complex(np.arccos(np.asarray(d, dtype=complex) / 2.0))
            cand, dist, second = nearest_branch_value(principal, k_prev)
            if (dist > jump_tol or dist > 0.5 * second) and depth < max_refine:
                mid = 0.5 * (za + zb)
                if clearance > 0:
                    dmin = float(np.min(np.abs(bands.edges - mid)))
                    if dmin < clearance:
                        raise ClearanceError(
                            f"refinement hit clearance near edge at {mid}",
                            location=mid, distance=dmin)
                stack.append((mid, zb, depth + 1))
                stack.append((za, mid, depth + 1))
                continue
            if dist > jump_tol:
                raise BranchPointError(
                    f"cannot disambiguate branch near E={zb} (step {dist:.3f})",
                    location=zb)
            k_prev = cand
            out_z.append(zb)
            out_k.append(cand)
        return k_prev

    def k_prime(self, energy: complex, k_value: complex) -> complex:
        """k'(E) via k' = -D'(E) / (2 sin k); guarded near band edges."""
        s = np.sin(k_value)
        if abs(s) < self.sin_k_guard:
            raise BranchPointError(
                f"|sin k|={abs(s):.2e} below guard at E={energy}: too close to an edge",
                location=energy)
        dp = self.discriminant_scalar(complex(energy), deriv=1)
        return -dp / (2.0 * s)

    # -- Bloch solutions ---------------------------------------------------------

    def floquet_data(self, energy: complex, k_value: complex, derivatives=False):
        """Normalization data (m, m_hat[, m', m_hat', k']) for psi = c + m s.

        psi(x+1) = exp(i k) psi(x) with psi(0)=1 forces m = (e^{ik} - c(1))/s(1);
        the hatted solution swaps k -> -k.
        """
        y = self._monodromy_raw(np.array([energy], dtype=complex), derivatives=derivatives)
        c1, c1p, s1, s1p = (complex(y[i, 0]) for i in range(4))
        lam = np.exp(1j * k_value)
        # consistency of the supplied branch with the discriminant
        disc = c1 + s1p
        if abs(2 * np.cos(k_value) - disc) > 1e-6 * max(1.0, abs(disc)):
            raise ValueError(f"k={k_value} inconsistent with discriminant at E={energy}")
        if abs(s1) < 1e-13 * max(1.0, abs(c1)):
            gap_idx = None
            raise PoleError(f"s(1,E)=0 at E={energy}: Bloch normalization pole",
                            gap_index=gap_idx)
        m = (lam - c1) / s1
        m_hat = (1.0 / lam - c1) / s1
        if not derivatives:
            return m, m_hat
        cE, cEp, sE, sEp = (complex(y[4 + i, 0]) for i in range(4))
        disc_E = cE + sEp
        s = np.sin(k_value)
        if abs(s) < self.sin_k_guard:
            raise BranchPointError("k' undefined this close to an edge", location=energy)
        kp = -disc_E / (2.0 * s)
        m_E = ((1j * kp * lam - cE) * s1 - (lam - c1) * sE) / s1 ** 2
        m_hat_E = ((-1j * kp / lam - cE) * s1 - (1.0 / lam - c1) * sE) / s1 ** 2
        return m, m_hat, m_E, m_hat_E, kp

    def bloch_solution(self, x, energy: complex, k_value: complex):
        """psi(x, E) with psi(0)=1, psi(x+1) = e^{ik} psi(x), on arbitrary real x."""
        m, _ = self.floquet_data(energy, k_value)
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        n = np.floor(x)
        r = x - n
        prof = self.fundamental_profile(energy, r)
        psi_r = prof[0] + m * prof[2]
        lam = np.exp(1j * k_value)
        out = psi_r * lam ** n
        return complex(out[0]) if scalar else out

    def bloch_derivative(self, x, energy: complex, k_value: complex):
        m, _ = self.floquet_data(energy, k_value)
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        n = np.floor(x)
        r = x - n
        prof = self.fundamental_profile(energy, r)
        dpsi_r = prof[1] + m * prof[3]
        lam = np.exp(1j * k_value)
        out = dpsi_r * lam ** n
        return complex(out[0]) if scalar else out

    def periodic_component(self, x, energy: complex, k_value: complex):
        """p(x,E) = e^{-ikx} psi(x,E); 1-periodic, gauge p -> e^{-2pi i m x} p."""
        x = np.asarray(x, dtype=float)
        return self.bloch_solution(x, energy, k_value) * np.exp(-1j * k_value * x)

    # -- omega and its residues ----------------------------------------------------

    def omega_pair(self, energies, k_values, guard: float = 1e-9):
        """(omega_plus, omega_minus) at one or many energies.

        omega_plus is built from the branch with quasi-momentum ``k_values``;
        omega_minus from the hatted branch.  Both are independent of the
        2*pi*m offset in k.  Raises NearPoleError when the normalizing
        integral int_0^1 psi psi_hat dx degenerates (near P or Q).
        """
        E = np.atleast_1d(np.asarray(energies, dtype=complex))
        K = np.atleast_1d(np.asarray(k_values, dtype=complex))
        scalar = np.isscalar(energies) or np.asarray(energies).ndim == 0
        B = E.size
        y = self._monodromy_raw(E, derivatives=True)
        c1, s1, s1p = y[0], y[2], y[3]
        cE, sE, sEp = y[4], y[6], y[7]
        lam = np.exp(1j * K)
        disc_E = cE + sEp
        sink = np.sin(K)
        if np.any(np.abs(sink) < self.sin_k_guard):
            raise BranchPointError("omega undefined this close to a band edge")
        if np.any(np.abs(s1) < 1e-12 * np.maximum(1.0, np.abs(c1))):
            raise NearPoleError("Bloch normalization degenerates on the sample")
        kp = -disc_E / (2.0 * sink)
        m = (lam - c1) / s1
        m_hat = (1.0 / lam - c1) / s1
        m_E = ((1j * kp * lam - cE) * s1 - (lam - c1) * sE) / s1 ** 2
        m_hat_E = ((-1j * kp / lam - cE) * s1 - (1.0 / lam - c1) * sE) / s1 ** 2

        V = self.potential

        def rhs(x, z):
            z = z.reshape(12, B)
            v = V(x)
            out = np.empty_like(z)
            out[0] = z[1]; out[1] = (v - E) * z[0]                    # psi
            out[2] = z[3]; out[3] = (v - E) * z[2]                    # psi_hat
            out[4] = z[5]; out[5] = (v - E) * z[4] - z[0]             # d psi / dE
            out[6] = z[7]; out[7] = (v - E) * z[6] - z[2]             # d psi_hat / dE
            out[8] = z[0] * z[2]                                      # I1
            out[9] = z[2] * z[4]                                      # I2
            out[10] = z[0] * z[6]                                     # I2_hat
            out[11] = x * z[0] * z[2]                                 # I3
            return out.ravel()

        z0 = np.zeros((12, B), dtype=complex)
        z0[0] = 1.0; z0[1] = m
        z0[2] = 1.0; z0[3] = m_hat
        z0[5] = m_E
        z0[7] = m_hat_E
        sol = solve_ivp(rhs, (0.0, 1.0), z0.ravel(), method="DOP853",
                        rtol=self.rtol, atol=self.atol)
        if not sol.success:
            raise IntegratorError("omega integration failed")
        zf = sol.y[:, -1].reshape(12, B)
        I1, I2, I2h, I3 = zf[8], zf[9], zf[10], zf[11]
        if np.any(np.abs(I1) < guard):
            raise NearPoleError("int psi psi_hat below tolerance: too close to P or Q")
        om_p = -(I2 - 1j * kp * I3) / I1
        om_m = -(I2h + 1j * kp * I3) / I1
        if scalar:
            return complex(om_p[0]), complex(om_m[0])
        return om_p, om_m

    def omega(self, energy, k_value, guard: float = 1e-9):
        return self.omega_pair(energy, k_value, guard=guard)[0]

    def omega_residue(self, center: complex, radius: float, sheet: int = +1,
                      bands: BandStructure = None, nodes: int = 256) -> complex:
        """(1/2 pi i) closed-contour integral of Omega = omega dE on a circle.

        The circle must not enclose or touch a band edge; ``sheet`` picks the
        branch at the rightmost point of the circle (+1: Floquet multiplier of
        modulus < 1 in a gap).  Trapezoidal quadrature, spectrally accurate.
        """
        if bands is None:
            bands = self.band_structure(abs(center) + radius + 10.0)
        dmin = float(np.min(np.abs(bands.edges - center)))
        if dmin <= radius * 1.05:
            raise ClearanceError(
                f"residue circle (r={radius}) too close to edge at distance {dmin:.3e}",
                location=center, distance=dmin)
        theta = np.linspace(0.0, 2 * np.pi, nodes, endpoint=False)
        zs = center + radius * np.exp(1j * theta)
        # continue k around the circle starting from the rightmost point
        e0 = complex(zs[0])
        k0 = self._start_k_near(e0, bands, sheet)
        ks = self._unwrap_batch(zs, k0)
        om_p, _ = self.omega_pair(zs, ks)
        return complex(radius * np.mean(om_p * np.exp(1j * theta)))

    def _start_k_near(self, energy: complex, bands: BandStructure, sheet: int) -> complex:
        """Branch value at an energy near the real axis, on the requested sheet."""
        anchor = self._safe_real_anchor(energy.real, bands)
        k0 = self._kp_real_scalar(anchor, bands)
        if sheet < 0:
            k0 = -k0
        curve = self.continue_quasimomentum(
            np.array([anchor, complex(anchor, energy.imag), energy]),
            BranchContext(anchor_point=anchor, anchor_value=k0),
            bands=bands, clearance=0.0)
        return complex(curve.values[-1])

    def _unwrap_batch(self, zs, k0: complex):
        """Continue k along a discrete closed/open path given all D values at once."""
        d = self.discriminant(zs)
        princ = np.arccos(np.asarray(d, dtype=complex) / 2.0)
        out = np.empty(len(zs), dtype=complex)
        out[0] = k0
        prev = k0
        for i in range(1, len(zs)):
            cand, dist, second = nearest_branch_value(complex(princ[i]), prev)
            if dist > 0.45 and dist > 0.5 * second:
                # fall back to scalar refinement between zs[i-1] and zs[i]
                seg = self.continue_quasimomentum(
                    np.array([zs[i - 1], zs[i]]),
                    BranchContext(anchor_point=zs[i - 1], anchor_value=prev),
                    bands=None, clearance=0.0)
                cand = complex(seg.values[-1])
            out[i] = cand
            prev = cand
        return out
