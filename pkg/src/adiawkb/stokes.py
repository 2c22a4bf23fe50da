"""Tracing lines of Stokes type, Stokes lines, and Im(kappa)=0 curves.

Lines of Stokes type are the level curves of Im int kappa dzeta and of
Im int (kappa - pi) dzeta; they are trajectories of the vector fields
conj(kappa) and conj(kappa) - pi.  A Stokes line from a simple branch point
is the same object taken with the natural branch (kappa = 0 or pi at the
point); three of them leave each simple branch point at mutual angles 2pi/3.

The tracer integrates the unit tangent field with an embedded RK pair and
projects every accepted step back onto the conserved level, so long traces do
not drift off their level set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curves import TracedCurve
from .errors import BranchPointError, GeometryError, PreconditionError
from .momentum import AdiabaticProblem, BranchPoint, ZetaBranchContext

__all__ = ["TraceConfig", "StokesFan", "Intersection", "trace_stokes_type",
           "stokes_fan", "trace_im_kappa_zero", "intersect", "is_vertical"]

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                   187 / 2100, 1 / 40])


@dataclass
class TraceConfig:
    max_step: float = 0.04
    min_step: float = 1e-7
    rk_tol: float = 1e-10
    stall_tol: float = 1e-9
    max_length: float = 40.0
    level_tol: float = 1e-11
    max_vertices: int = 20000


# 3-point Gauss-Legendre on [0, 1]
_GL3_T = np.array([0.5 - np.sqrt(15) / 10, 0.5, 0.5 + np.sqrt(15) / 10])
_GL3_W = np.array([5 / 18, 8 / 18, 5 / 18])


@dataclass(frozen=True)
class StokesFan:
    origin: complex
    curves: tuple                 # three TracedCurve, ordered by launch angle
    branch: ZetaBranchContext     # natural branch near the origin
    natural_value: float          # kappa at the origin: 0 or pi
    vertical_index: int           # index of the fan line most vertical at origin
    launch_angles: tuple = ()     # measured directions at the origin

    def angles(self) -> np.ndarray:
        return np.array(self.launch_angles)

    def pairwise_angle_errors(self) -> np.ndarray:
        """|angle_ij - 2pi/3| for the three pairs, in radians."""
        a = np.sort(np.mod(self.angles(), 2 * np.pi))
        gaps = np.diff(np.concatenate([a, [a[0] + 2 * np.pi]]))
        return np.abs(gaps - 2 * np.pi / 3)


@dataclass(frozen=True)
class Intersection:
    point: complex
    index_a: int
    index_b: int
    angle: float           # crossing angle in (0, pi/2]
    transversal: bool


def _field(kappa: complex, family: str) -> complex:
    if family == "kappa-type":
        return np.conj(kappa)
    if family == "kappa-minus-pi-type":
        return np.conj(kappa) - np.pi
    raise ValueError(f"no tangent field for family {family!r}")


def trace_stokes_type(problem: AdiabaticProblem, start: complex, family: str,
                      direction: int = +1, start_kappa: complex = None,
                      branch: ZetaBranchContext = None, window=None,
                      stop=None, config: TraceConfig = None,
                      initial_tangent: complex = None) -> TracedCurve:
    """Trajectory of conj(kappa) (or conj(kappa)-pi) from a regular point.

    ``start_kappa`` gives the branch at the start; alternatively ``branch``
    is continued to the start.  ``initial_tangent`` disambiguates the launch
    orientation (the field line through a point runs both ways); by default
    the field direction times ``direction`` is used.  Tracing stops at the
    window boundary, the arc-length budget, branch-point clearance, a stall
    (possible only at a branch point), or when ``stop(zeta)`` returns True.
    """
    cfg = config or TraceConfig()
    window = window or problem.window
    re0, re1, im0, im1 = window
    if start_kappa is None:
        if branch is None:
            raise ValueError("need start_kappa or branch")
        start_kappa = problem.kappa(start, branch)
    z = complex(start)
    k = complex(start_kappa)
    f0 = _field(k, family)
    if abs(f0) < cfg.stall_tol:
        raise BranchPointError(
            f"tangent field vanishes at start {z}: kappa in pi*Z only at branch points",
            location=z)

    verts = [z]
    kappas = [k]
    level = 0.0            # conserved Im-integral accumulated from the start
    length = 0.0
    h = cfg.max_step / 4
    stopped = "max_vertices"
    dirsign = 1 if direction >= 0 else -1
    if initial_tangent is not None and abs(initial_tangent) > 0:
        t0 = initial_tangent / abs(initial_tangent)
        v0 = f0 / abs(f0)
        prev_tangent = v0 if np.real(np.conj(t0) * v0) >= 0 else -v0
    else:
        prev_tangent = dirsign * f0 / abs(f0)

    def f_at(zz, zbase, kbase):
        kk = problem.kappa_step(zz, zbase, kbase, check_clearance=False)
        return _field(kk, family), kk

    while len(verts) < cfg.max_vertices:
        # stop conditions evaluated at the current vertex
        d_bp = problem._branch_points.distance(z) if problem._branch_points else np.inf
        if d_bp < problem.clearance:
            stopped = "clearance"
            break
        if not (re0 <= z.real <= re1 and im0 <= z.imag <= im1):
            stopped = "window"
            break
        if stop is not None and stop(z):
            stopped = "predicate"
            break
        if length >= cfg.max_length:
            stopped = "length"
            break

        # keep steps short near branch points so clearance stops are reliable
        if np.isfinite(d_bp):
            h = min(h, max(4 * cfg.min_step, 0.25 * d_bp))

        # one adaptive RK step on the unit tangent field
        accepted = False
        while not accepted:
            try:
                ks = []
                stages_k = []
                for i in range(7):
                    zz = z + h * sum(a * v for a, v in zip(_DP_A[i], ks))
                    fz, kk = f_at(zz, z, k)
                    if abs(fz) < cfg.stall_tol:
                        stopped = "stall"
                        accepted = True
                        zz5 = z
                        break
                    v = fz / abs(fz)
                    if np.real(np.conj(prev_tangent) * v) < 0:
                        v = -v
                    ks.append(v)
                    stages_k.append(kk)
                else:
                    zz5 = z + h * sum(b * v for b, v in zip(_DP_B5, ks))
                    zz4 = z + h * sum(b * v for b, v in zip(_DP_B4, ks))
                    err = abs(zz5 - zz4)
                    tol = cfg.rk_tol * max(1.0, abs(h))
                    if err > tol and h > cfg.min_step:
                        h = max(cfg.min_step, 0.9 * h * (tol / max(err, 1e-300)) ** 0.2)
                        continue
                    accepted = True
                    if err > 0:
                        h = min(cfg.max_step, 0.9 * h * (tol / max(err, 1e-300)) ** 0.2)
            except BranchPointError:
                if h <= 2 * cfg.min_step:
                    stopped = "clearance"
                    zz5 = z
                    accepted = True
                else:
                    h = max(cfg.min_step, h / 2)
        if stopped in ("stall",) or zz5 == z:
            break

        # level increment by 3-point Gauss-Legendre on the step segment
        shift = np.pi if family == "kappa-minus-pi-type" else 0.0
        dz = zz5 - z
        inc = 0.0
        k_run = k
        z_run = z
        for t, w in zip(_GL3_T, _GL3_W):
            zt = z + t * dz
            k_run = problem.kappa_step(zt, z_run, k_run, check_clearance=False)
            z_run = zt
            inc += w * np.imag((k_run - shift) * dz)
        level += inc
        k5 = problem.kappa_step(zz5, z_run, k_run, check_clearance=False)

        # corrector: project back onto the level set through the start
        fz = _field(k5, family)
        if abs(fz) > cfg.stall_tol and abs(level) > cfg.level_tol:
            delta = -level * 1j * np.conj(fz) / abs(fz) ** 2
            if abs(delta) < 0.2 * abs(dz):
                z_corr = zz5 + delta
                k5 = problem.kappa_step(z_corr, zz5, k5, check_clearance=False)
                level += np.imag((k5 - shift) * (z_corr - zz5))
                zz5 = z_corr

        prev_tangent = (zz5 - z) / abs(zz5 - z)
        length += abs(zz5 - z)
        z, k = zz5, k5
        verts.append(z)
        kappas.append(k)
    else:
        stopped = "max_vertices"

    curve = TracedCurve(np.array(verts), np.array(kappas), family=family,
                        level=0.0,
                        meta={"stopped": stopped, "level_drift": float(abs(level)),
                              "direction": dirsign})
    return curve


def measure_level_drift(problem: AdiabaticProblem, curve: TracedCurve,
                        kappa_exact=None) -> float:
    """Max deviation of the conserved Im-integral along a traced curve.

    Re-integrates Im int (kappa - shift) dzeta edge by edge with 3-point
    Gauss quadrature, continuing the branch from the stored vertex values.
    ``kappa_exact`` substitutes a closed-form branch (oracle checks).
    """
    shift = np.pi if curve.family == "kappa-minus-pi-type" else 0.0
    acc = 0.0
    worst = 0.0
    for i in range(len(curve.vertices) - 1):
        a, b = curve.vertices[i], curve.vertices[i + 1]
        k_run = curve.values[i]
        z_run = a
        inc = 0.0
        for t, w in zip(_GL3_T, _GL3_W):
            zt = a + t * (b - a)
            if kappa_exact is not None:
                k_run = kappa_exact(zt)
            else:
                k_run = problem.kappa_step(zt, z_run, k_run, check_clearance=False)
                z_run = zt
            inc += w * np.imag((k_run - shift) * (b - a))
        acc += inc
        worst = max(worst, abs(acc))
    return float(worst)


def measure_fan_directions(problem: AdiabaticProblem, bp: BranchPoint,
                           nat: ZetaBranchContext, radii) -> np.ndarray:
    """Launch directions of the Stokes lines at a simple branch point.

    On each ring the three zeros of the level function
    Im int (kappa - kappa0) dzeta (radial leg quadrature + arc leg cumulative
    trapezoid, with kappa continued around the ring) are located; the zero
    angles are then extrapolated to radius zero with a sqrt(r) fit.
    """
    kappa0 = bp.natural_value
    phi0 = 0.37 - (2.0 / 3.0) * np.angle(bp.kappa1)   # generic ray off the fan
    rows = []
    for r in radii:
        n_arc = 720
        phis = phi0 + np.linspace(0.0, 2 * np.pi, n_arc + 1)
        ring = bp.zeta + r * np.exp(1j * phis)
        kv = problem.kappa_along(ring, start_value=problem.kappa(
            complex(ring[0]), nat, check_clearance=False), check_clearance=False)
        # radial leg from the branch point to ring[0]: local-model core plus
        # sqrt-substituted quadrature (smooth integrand in u = sqrt(t))
        t_core = 1.05 * problem.clearance
        ray_dir = np.exp(1j * phi0)
        wc = t_core * ray_dir
        lead = np.imag(bp.kappa1 * (2.0 / 3.0) * wc ** 1.5
                       + (bp.kappa2 or 0.0) * 0.5 * wc ** 2
                       + (bp.kappa3 or 0.0) * 0.4 * wc ** 2.5)
        us = np.linspace(np.sqrt(t_core), np.sqrt(r), 32)
        ray = bp.zeta + us ** 2 * ray_dir
        k_ray = problem.kappa_along(ray, start_value=problem.kappa(
            complex(ray[0]), nat, check_clearance=False), check_clearance=False)
        rad = lead + np.trapz(np.imag((k_ray - kappa0) * ray_dir) * 2.0 * us, us)
        # arc leg, cumulative
        dzdphi = 1j * r * np.exp(1j * phis)
        integ = np.imag((kv - kappa0) * dzdphi)
        arc = np.concatenate([[0.0], np.cumsum(
            0.5 * (integ[1:] + integ[:-1]) * np.diff(phis))])
        level = rad + arc
        zeros = []
        for i in range(n_arc):
            if level[i] == 0.0:
                zeros.append(phis[i])
            elif level[i] * level[i + 1] < 0:
                t = level[i] / (level[i] - level[i + 1])
                zeros.append(phis[i] + t * (phis[i + 1] - phis[i]))
        zeros = np.mod(np.array(zeros), 2 * np.pi)
        if len(zeros) != 3:
            continue
        rows.append((r, np.sort(zeros)))
    if not rows:
        raise GeometryError(f"fan direction measurement failed at {bp.zeta}")
    # align zero triplets across rings (nearest mod 2pi to the smallest ring's)
    ref = rows[-1][1]
    rs = np.array([np.sqrt(r) for r, _ in rows])
    thetas = np.empty((len(rows), 3))
    for i, (_, zs) in enumerate(rows):
        for m in range(3):
            d = np.mod(zs - ref[m] + np.pi, 2 * np.pi) - np.pi
            j = int(np.argmin(np.abs(d)))
            thetas[i, m] = ref[m] + d[j]
    if len(rows) == 1:
        return thetas[0]
    cols = [np.ones_like(rs), rs]
    if len(rows) >= 4:
        cols.append(rs ** 2)
    A = np.stack(cols, axis=1)
    out = []
    for m in range(3):
        coef, *_ = np.linalg.lstsq(A, thetas[:, m], rcond=None)
        out.append(coef[0])
    return np.array(out)


def stokes_fan(problem: AdiabaticProblem, bp: BranchPoint, window=None,
               seed_radius: float = None, sign: int = +1,
               config: TraceConfig = None) -> StokesFan:
    """The three Stokes lines launched from a simple branch point.

    Launch directions are measured from the zeros of the level integral on
    shrinking rings around the point (extrapolated to the origin), so the
    2pi/3 fan geometry is a checkable output.  Each line is seeded on the
    outermost ring zero and traced outward with the natural branch.
    """
    if not bp.simple:
        raise BranchPointError(f"no Stokes fan at non-simple point {bp.zeta}",
                               location=bp.zeta)
    if bp.kappa1 is None or abs(bp.kappa1) < 1e-10:
        raise GeometryError(f"kappa1 fit missing or ill-conditioned at {bp.zeta}")
    d_neighbor = np.inf
    others = [q.zeta for q in (problem._branch_points or [])
              if abs(q.zeta - bp.zeta) > 1e-9]
    if others:
        d_neighbor = min(abs(bp.zeta - o) for o in others)
    r = seed_radius
    if r is None:
        r = 10.0 * problem.clearance
        if np.isfinite(d_neighbor):
            r = min(r, 0.12 * d_neighbor)
        r = max(r, 2.5 * problem.clearance)
    nat = problem.natural_branch(bp, sign=sign)
    family = "kappa-type" if bp.natural_value < 0.5 * np.pi else "kappa-minus-pi-type"
    r_in = 2.2 * problem.clearance
    if r > r_in:
        radii = list(np.geomspace(r, r_in, 5))
    else:
        radii = [r]
    directions = measure_fan_directions(problem, bp, nat, radii)
    # seed angles on the outer ring (zeros there), not the extrapolated limit
    seed_dirs = measure_fan_directions(problem, bp, nat, [r])
    curves = []
    for m in range(3):
        theta = seed_dirs[m]
        seed = bp.zeta + r * np.exp(1j * theta)
        k_seed = problem.kappa(seed, nat, check_clearance=False)
        c = trace_stokes_type(problem, seed, family, direction=+1,
                              start_kappa=k_seed, window=window, config=config,
                              initial_tangent=np.exp(1j * theta))
        curves.append(c)
    vert = int(np.argmax(np.abs(np.sin(directions))))
    return StokesFan(origin=bp.zeta, curves=tuple(curves), branch=nat,
                     natural_value=bp.natural_value, vertical_index=vert,
                     launch_angles=tuple(directions))


def trace_im_kappa_zero(problem: AdiabaticProblem, bp: BranchPoint,
                        direction: int = +1, window=None, step: float = 0.02,
                        max_length: float = 30.0, tol: float = 1e-10) -> TracedCurve:
    """The connected component of {Im kappa = 0} emanating from a branch point.

    Predictor-corrector on the implicit equation: predictor along the tangent
    conj(kappa'), corrector by a Newton step on Im kappa.  The curve ends at
    another branch point or at the window boundary.
    """
    if not bp.simple:
        raise BranchPointError(f"non-simple point {bp.zeta}", location=bp.zeta)
    window = window or problem.window
    re0, re1, im0, im1 = window
    nat = problem.natural_branch(bp, sign=+1)
    r0 = max(2.0 * problem.clearance, 1e-3)
    phi = np.mod(-2.0 * np.angle(bp.kappa1), 2 * np.pi)
    seed = bp.zeta + r0 * np.exp(1j * phi)
    k = problem.kappa(seed, nat, check_clearance=False)
    z = complex(seed)

    # polish the seed onto Im kappa = 0
    for _ in range(8):
        kp = problem.kappa_prime(z, k)
        err = k.imag
        if abs(err) < tol:
            break
        dz = -err * 1j * np.conj(kp) / abs(kp) ** 2
        z = z + dz
        k = problem.kappa_step(z, z - dz, k, check_clearance=False)

    verts = [z]
    vals = [k]
    prev_t = np.exp(1j * phi) * (1 if direction >= 0 else -1)
    length = 0.0
    stopped = "length"
    while length < max_length:
        kp = problem.kappa_prime(z, k)
        t = np.conj(kp) / abs(kp)
        if np.real(np.conj(prev_t) * t) < 0:
            t = -t
        d_bp = problem._branch_points.distance(z) if problem._branch_points else np.inf
        h = min(step, max(1e-5, 0.25 * d_bp)) if np.isfinite(d_bp) else step
        z_new = z + h * t
        k_new = problem.kappa_step(z_new, z, k, check_clearance=False)
        # Newton corrector
        ok = True
        for _ in range(10):
            err = k_new.imag
            if abs(err) < tol:
                break
            kp_new = problem.kappa_prime(z_new, k_new)
            dz = -err * 1j * np.conj(kp_new) / abs(kp_new) ** 2
            if abs(dz) > 0.5 * h:
                ok = False
                break
            z_prev = z_new
            z_new = z_new + dz
            k_new = problem.kappa_step(z_new, z_prev, k_new, check_clearance=False)
        if not ok:
            step = h / 2
            if step < 1e-6:
                stopped = "corrector-divergence"
                break
            continue
        d_bp = problem._branch_points.distance(z_new) if problem._branch_points else np.inf
        if d_bp < problem.clearance:
            stopped = "branch-point"
            verts.append(z_new)
            vals.append(k_new)
            break
        if not (re0 <= z_new.real <= re1 and im0 <= z_new.imag <= im1):
            stopped = "window"
            break
        prev_t = (z_new - z) / abs(z_new - z)
        length += abs(z_new - z)
        z, k = z_new, k_new
        verts.append(z)
        vals.append(k)
    return TracedCurve(np.array(verts), np.array(vals), family="imkappa-zero",
                       meta={"stopped": stopped, "origin": bp.zeta})


def intersect(a: TracedCurve, b: TracedCurve, angle_tol: float = 1e-3):
    """All transversal intersections of two polylines.

    Near-tangential crossings (angle below ``angle_tol``) are flagged but
    still reported.  Bounding-box prefilter keeps this near O(n) in practice.
    """
    pa, pb = a.vertices, b.vertices
    if len(pa) < 2 or len(pb) < 2:
        return []
    a0, a1 = pa[:-1], pa[1:]
    b0, b1 = pb[:-1], pb[1:]
    # bounding-box prefilter
    ar0 = np.minimum(a0.real, a1.real)[:, None]
    ar1 = np.maximum(a0.real, a1.real)[:, None]
    ai0 = np.minimum(a0.imag, a1.imag)[:, None]
    ai1 = np.maximum(a0.imag, a1.imag)[:, None]
    br0 = np.minimum(b0.real, b1.real)[None, :]
    br1 = np.maximum(b0.real, b1.real)[None, :]
    bi0 = np.minimum(b0.imag, b1.imag)[None, :]
    bi1 = np.maximum(b0.imag, b1.imag)[None, :]
    eps = 1e-12
    cand = ((ar0 <= br1 + eps) & (br0 <= ar1 + eps)
            & (ai0 <= bi1 + eps) & (bi0 <= ai1 + eps))
    hits = []
    for i, j in zip(*np.nonzero(cand)):
        p, rvec = a0[i], a1[i] - a0[i]
        q, svec = b0[j], b1[j] - b0[j]
        denom = np.cross([rvec.real, rvec.imag], [svec.real, svec.imag])
        if abs(denom) < 1e-15:
            continue
        dq = q - p
        t = np.cross([dq.real, dq.imag], [svec.real, svec.imag]) / denom
        u = np.cross([dq.real, dq.imag], [rvec.real, rvec.imag]) / denom
        if -1e-10 <= t <= 1 + 1e-10 and -1e-10 <= u <= 1 + 1e-10:
            pt = p + t * rvec
            ang = abs(np.angle(rvec / svec))
            ang = min(ang, np.pi - ang)
            hits.append(Intersection(point=complex(pt), index_a=int(i), index_b=int(j),
                                     angle=float(ang), transversal=bool(ang > angle_tol)))
    # merge duplicates at shared polyline vertices
    out = []
    for h in hits:
        if not any(abs(h.point - o.point) < 1e-9 for o in out):
            out.append(h)
    return out


def is_vertical(curve: TracedCurve, angular_tol: float = 1e-3):
    """(verdict, min crossing angle with the horizontal lines).

    True iff Im zeta is strictly monotone along the polyline and no edge is
    horizontal within the angular tolerance.
    """
    v = curve.vertices if isinstance(curve, TracedCurve) else np.asarray(curve, dtype=complex)
    dz = np.diff(v)
    dz = dz[np.abs(dz) > 1e-14]
    if len(dz) == 0:
        return False, 0.0
    dy = dz.imag
    if not (np.all(dy > 0) or np.all(dy < 0)):
        return False, 0.0
    angles = np.arctan2(np.abs(dy), np.abs(dz.real))
    min_angle = float(np.min(angles))
    return bool(min_angle > angular_tol), min_angle
