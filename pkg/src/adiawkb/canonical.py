"""Canonicality checking and construction of canonical lines and domains.

A vertical curve is canonical for a branch kappa when, with increasing
Im zeta, Im int kappa dzeta strictly increases and Im int (kappa-pi) dzeta
strictly decreases.  Discretely both conditions reduce to the per-edge ratio

    r_i = Im(int_edge kappa dzeta) / delta Im zeta   in (0, pi),

and the two margins are min r_i and min (pi - r_i).  Lines of Stokes type sit
on the boundary of the admissible cone (one margin is zero), so pre-canonical
curves assembled from them are made strictly canonical by tilting their
tangent field into the cone interior and re-tracing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curves import TracedCurve, resample_polyline
from .errors import GeometryError, PreconditionError
from .momentum import AdiabaticProblem, ZetaBranchContext
from .stokes import _GL3_T, _GL3_W, TraceConfig, _field, intersect, is_vertical

__all__ = ["CanonicalityReport", "CanonicalDomain", "check_canonical",
           "assemble_precanonical", "canonicalize", "local_canonical_domain",
           "trapezium"]


@dataclass(frozen=True)
class CanonicalityReport:
    curve: TracedCurve
    margin_up: float          # min over edges of d Im(int kappa)/d Im zeta
    margin_down: float        # min over edges of -d Im(int (kappa-pi))/d Im zeta
    vertical: bool
    min_angle: float
    verdict: bool
    reason: str = ""
    worst_index: int = -1

    @property
    def margins(self):
        return (self.margin_up, self.margin_down)


@dataclass(frozen=True)
class CanonicalDomain:
    """A region swept by canonical curves joining two fixed endpoints.

    ``certificate`` holds the sampled canonical curves; ``polygon`` their
    envelope.  For trapezium-type parts produced by the enclosing-domain
    lemma the certificate may be empty and ``kind`` records the variant.
    """

    polygon: np.ndarray
    endpoint_lo: complex
    endpoint_hi: complex
    branch: ZetaBranchContext
    certificate: tuple = ()
    resolution: float = None
    kind: str = "tube"
    meta: dict = field(default_factory=dict)

    def contains(self, z, tol: float = 0.0) -> bool:
        return _point_in_polygon(self.polygon, complex(z), tol)


def _point_in_polygon(poly: np.ndarray, z: complex, tol: float = 0.0) -> bool:
    # winding number on the closed polygon
    v = poly - z
    if tol > 0 and np.min(np.abs(v)) <= tol:
        return True
    ang = np.angle(np.roll(v, -1) / v)
    w = np.sum(ang) / (2 * np.pi)
    return bool(abs(w) > 0.5)


def _edge_ratios(problem: AdiabaticProblem, curve: TracedCurve,
                 refine: bool = True):
    """Per-edge ratio Im(int kappa dzeta)/dIm(zeta); NaN on horizontal edges."""
    zs = curve.vertices
    ks = curve.values
    dz = np.diff(zs)
    dy = dz.imag
    ratios = np.full(len(dz), np.nan)
    for i in range(len(dz)):
        if abs(dy[i]) < 1e-13:
            continue
        if refine:
            inc = 0.0
            k_run, z_run = ks[i], zs[i]
            for t, w in zip(_GL3_T, _GL3_W):
                zt = zs[i] + t * dz[i]
                k_run = problem.kappa_step(zt, z_run, k_run, check_clearance=False)
                z_run = zt
                inc += w * np.imag(k_run * dz[i])
        else:
            inc = np.imag(0.5 * (ks[i] + ks[i + 1]) * dz[i])
        ratios[i] = inc / dy[i]
    return ratios


def check_canonical(problem: AdiabaticProblem, curve: TracedCurve,
                    branch: ZetaBranchContext = None,
                    angular_tol: float = 1e-3) -> CanonicalityReport:
    """Discrete canonicality of a polyline with respect to a continued branch.

    The curve's own per-vertex values are used when present; otherwise the
    branch is continued from ``branch``.
    """
    if curve.values is None:
        if branch is None:
            raise ValueError("curve carries no branch values and no branch was given")
        curve = problem.continue_kappa(curve, branch)
    vertical, min_angle = is_vertical(curve, angular_tol=angular_tol)
    if not vertical:
        return CanonicalityReport(curve=curve, margin_up=0.0, margin_down=0.0,
                                  vertical=False, min_angle=min_angle,
                                  verdict=False, reason="not vertical")
    ratios = _edge_ratios(problem, curve)
    valid = ~np.isnan(ratios)
    if not np.any(valid):
        return CanonicalityReport(curve=curve, margin_up=0.0, margin_down=0.0,
                                  vertical=vertical, min_angle=min_angle,
                                  verdict=False, reason="degenerate curve")
    m_up = float(np.min(ratios[valid]))
    m_down = float(np.min(np.pi - ratios[valid]))
    worst = int(np.nanargmin(np.minimum(ratios, np.pi - ratios)))
    verdict = bool(vertical and m_up > 0 and m_down > 0)
    reason = "" if verdict else f"margin violated at edge {worst} (ratio {ratios[worst]:.4f})"
    return CanonicalityReport(curve=curve, margin_up=m_up, margin_down=m_down,
                              vertical=vertical, min_angle=min_angle,
                              verdict=verdict, reason=reason, worst_index=worst)


def assemble_precanonical(problem: AdiabaticProblem, segments,
                          tol: float = 1e-6) -> TracedCurve:
    """Concatenate elementary segments into a vertical pre-canonical curve.

    Each segment must be a line of Stokes type (by family tag) or pass
    check_canonical; consecutive segments must share endpoints within tol,
    and the union must be vertical.
    """
    if not segments:
        raise ValueError("no segments")
    pieces = []
    for i, seg in enumerate(segments):
        if seg.values is None:
            raise PreconditionError(f"segment {i} carries no branch values")
        stokes_type = seg.family in ("kappa-type", "kappa-minus-pi-type", "stokes")
        if not stokes_type:
            rep = check_canonical(problem, seg)
            if not rep.verdict:
                raise PreconditionError(
                    f"segment {i} is neither Stokes-type nor canonical: {rep.reason}")
        pieces.append(seg)
    # orient every piece so Im decreases (a vertical chain is monotone);
    # then check endpoint chaining
    first = pieces[0]
    if first.vertices.imag[0] < first.vertices.imag[-1]:
        pieces = [p.reversed() for p in pieces]
    chain = pieces[0]
    bounds = [0, len(chain) - 1]
    families = [pieces[0].family]
    for i, seg in enumerate(pieces[1:], start=1):
        gap = abs(chain.end - seg.start)
        if gap > tol:
            if abs(chain.end - seg.end) <= tol:
                seg = seg.reversed()
            else:
                raise PreconditionError(
                    f"endpoint mismatch between segments {i-1} and {i}: gap {gap:.3e}")
        # snap the joint
        verts = seg.vertices.copy()
        verts[0] = chain.end
        vals = seg.values.copy()
        chain = TracedCurve(np.concatenate([chain.vertices, verts[1:]]),
                            np.concatenate([chain.values, vals[1:]]),
                            family="user")
        bounds.append(len(chain) - 1)
        families.append(seg.family)
    vertical, ang = is_vertical(chain)
    if not vertical:
        raise PreconditionError(
            f"assembled union is not vertical (min crossing angle {ang:.2e})")
    meta = {"precanonical": True, "segment_bounds": tuple(bounds),
            "segment_families": tuple(families)}
    return TracedCurve(chain.vertices, chain.values, family="user", meta=meta)


def canonicalize(problem: AdiabaticProblem, pre: TracedCurve,
                 neighborhood: float, margin_floor: float = 1e-3,
                 config: TraceConfig = None) -> TracedCurve:
    """A strictly canonical curve within ``neighborhood`` of a pre-canonical one.

    Edges already strictly inside the admissible cone are kept; edges on the
    cone boundary (Stokes-type pieces) are re-traced with the tangent field
    rotated into the cone interior by half the locally available width,
    capped so the accumulated displacement stays inside the neighborhood.
    The lower endpoint is preserved exactly; the upper endpoint moves by at
    most the neighborhood.  Raises GeometryError when no positive margin is
    achieved, reporting the worst junction.
    """
    rep0 = check_canonical(problem, pre)
    if rep0.verdict and rep0.margin_up > margin_floor and rep0.margin_down > margin_floor:
        return pre
    if pre.vertices.imag[0] < pre.vertices.imag[-1]:
        return canonicalize(problem, pre.reversed(), neighborhood,
                            margin_floor, config).reversed()

    # the pre-canonical curve is vertical, hence a graph x(y); rebuild it from
    # the preserved lower endpoint by integrating the slope that realizes the
    # edge ratio clipped into the strict cone [floor, pi - floor]
    zs = pre.vertices[::-1]
    ks = pre.values[::-1]
    dys = np.diff(zs.imag)
    dxs = np.diff(zs.real)
    im_floor = 0.02
    budget_integral = float(np.sum(np.abs(dys) / np.maximum(
        np.abs(ks[:-1].imag), im_floor)))
    floor = float(np.clip(0.8 * neighborhood / max(budget_integral, 1e-9),
                          2.0 * margin_floor, 0.35))
    def solved_slope(kv, slope0):
        if abs(kv.imag) <= 1e-6:
            return slope0
        r_here = kv.real + kv.imag * slope0
        r_t = float(np.clip(r_here, floor, np.pi - floor))
        return (r_t - kv.real) / kv.imag

    new_z = [zs[0]]
    new_k = [ks[0]]
    for i in range(len(zs) - 1):
        dy = dys[i]
        if abs(dy) < 1e-14:
            continue
        slope0 = dxs[i] / dy
        n_sub = max(1, int(np.ceil(abs(zs[i + 1] - zs[i]) / 0.02)))
        for _ in range(n_sub):
            dy_s = dy / n_sub
            k_here = new_k[-1]
            # predictor with the start value, corrector with the midpoint value
            sl = solved_slope(k_here, slope0)
            z_mid = new_z[-1] + 0.5 * dy_s * sl + 0.5j * dy_s
            k_mid = problem.kappa_step(z_mid, new_z[-1], k_here, check_clearance=False)
            sl = solved_slope(k_mid, slope0)
            z_next = new_z[-1] + dy_s * sl + 1j * dy_s
            k_next = problem.kappa_step(z_next, z_mid, k_mid, check_clearance=False)
            new_z.append(z_next)
            new_k.append(k_next)
    cand = TracedCurve(np.array(new_z[::-1]), np.array(new_k[::-1]), family="user",
                       meta=dict(pre.meta, canonicalized=True, margin_target=floor))
    # displacement control
    disp = _curve_distance(pre.vertices, cand.vertices)
    rep = check_canonical(problem, cand)
    if not rep.verdict:
        raise GeometryError(
            f"canonicalize failed: {rep.reason}; worst edge at "
            f"{cand.vertices[max(rep.worst_index, 0)]}")
    if disp > 1.5 * neighborhood:
        raise GeometryError(
            f"canonicalize left the requested neighborhood: displacement {disp:.3e}"
            f" > {neighborhood:.3e}")
    return cand


def _tilt_into_cone(kappa: complex, t: complex, margin_floor: float,
                    tilt_cap: float) -> complex:
    """Rotate an up-oriented unit tangent into the admissible cone interior.

    The cone at a point is the arc of upward directions between the two
    Stokes-type field directions (ratio 0 and ratio pi); a tangent on or
    outside it is rotated toward the angular midpoint, never by more than
    tilt_cap.
    """
    dy = t.imag
    r = np.imag(kappa * t) / dy if abs(dy) > 1e-12 else np.nan
    if not np.isnan(r) and margin_floor < r < np.pi - margin_floor:
        return t
    if abs(kappa.imag) < 1e-9:
        # on a band pre-image every sufficiently vertical direction works
        if np.isnan(r):
            tn = t + 1j * tilt_cap
            return tn / abs(tn)
        return t
    s0 = np.sign(np.imag(np.conj(kappa)))
    d0 = s0 * np.conj(kappa)
    d1_raw = np.conj(kappa) - np.pi
    d1 = np.sign(d1_raw.imag) * d1_raw
    th0 = np.angle(d0)
    th1 = np.angle(d1)
    mid = 0.5 * (th0 + th1)
    th_t = np.angle(t)
    rot = np.clip(mid - th_t, -tilt_cap, tilt_cap)
    tn = t * np.exp(1j * rot)
    return tn / abs(tn)


def _curve_distance(a: np.ndarray, b: np.ndarray) -> float:
    """One-sided discrete Hausdorff distance from b to a."""
    d = np.abs(b[:, None] - a[None, :])
    return float(np.max(np.min(d, axis=1)))


def local_canonical_domain(problem: AdiabaticProblem, line: TracedCurve,
                           width: float, n_curves: int = 17,
                           margin_floor: float = 1e-6,
                           max_shrink: int = 8) -> CanonicalDomain:
    """A certified tube around a canonical line.

    The certificate is a lateral fan of displaced copies of the line (bump
    profile vanishing at the endpoints, so all copies join the same two
    points), each re-checked for canonicality with its own continued branch.
    The width shrinks until every certificate curve passes; a width shrunk to
    zero raises a degenerate-domain error.
    """
    rep = check_canonical(problem, line)
    if not rep.verdict or min(rep.margins) <= margin_floor:
        raise PreconditionError(
            f"line is not canonical with margin > {margin_floor}: {rep.reason}")
    zs = line.vertices
    s = np.concatenate([[0.0], np.cumsum(np.abs(np.diff(zs)))])
    tau = s / s[-1]
    bump = np.sin(np.pi * tau) ** 2
    tang = np.gradient(zs, s)
    tang = tang / np.abs(tang)
    normal = 1j * tang
    w = float(width)
    for _ in range(max_shrink):
        curves = []
        ok = True
        for lam in np.linspace(-1.0, 1.0, n_curves):
            verts = zs + lam * 0.5 * w * bump * normal
            try:
                vals = problem.kappa_along(verts, start_value=line.values[0])
                c = TracedCurve(verts, vals, family="user")
                r = check_canonical(problem, c)
            except Exception:
                ok = False
                break
            if not r.verdict:
                ok = False
                break
            curves.append(c)
        if ok:
            left = curves[0].vertices
            right = curves[-1].vertices
            poly = np.concatenate([left, right[::-1]])
            return CanonicalDomain(
                polygon=poly,
                endpoint_lo=line.vertices[int(np.argmin(zs.imag))],
                endpoint_hi=line.vertices[int(np.argmax(zs.imag))],
                branch=ZetaBranchContext(anchor_zeta=line.vertices[0],
                                         anchor_kappa=line.values[0]),
                certificate=tuple(curves),
                resolution=w / max(n_curves - 1, 1),
                kind="tube",
                meta={"width": w, "requested_width": float(width)})
        w *= 0.5
        if w < 1e-9:
            break
    raise GeometryError("local canonical domain degenerated: width shrank to zero")


def trapezium(problem: AdiabaticProblem, gamma0: TracedCurve, region_samples,
              sigma_u: TracedCurve, sigma_d: TracedCurve,
              gamma_tilde: TracedCurve = None, endpoint_tol: float = 5e-2) -> CanonicalDomain:
    """Part of a canonical domain enclosing gamma0, bounded by Stokes-type lines.

    First variant: sigma_u, sigma_d and a second canonical line gamma_tilde
    bound a curvilinear trapezium.  Second variant: sigma_u and sigma_d
    intersect and bound a curvilinear triangle with gamma0.

    ``region_samples`` are points of the adjacent domain U on which
    Im kappa != 0 is verified (with the branch of gamma0).
    """
    rep = check_canonical(problem, gamma0)
    if not rep.verdict:
        raise PreconditionError(f"gamma0 is not canonical: {rep.reason}")
    lo_end = gamma0.vertices[int(np.argmin(gamma0.vertices.imag))]
    hi_end = gamma0.vertices[int(np.argmax(gamma0.vertices.imag))]
    # sign condition on U
    samples = np.asarray(region_samples, dtype=complex)
    if len(samples):
        i0 = int(np.argmin(np.abs(gamma0.vertices - samples[0])))
        vals = problem.kappa_along(
            np.concatenate([[gamma0.vertices[i0]], samples]),
            start_value=complex(gamma0.values[i0]))[1:]
        if np.any(np.abs(vals.imag) < 1e-10):
            bad = samples[int(np.argmin(np.abs(vals.imag)))]
            raise PreconditionError(f"Im kappa vanishes in U near {bad}")
    if sigma_u.family != "kappa-type":
        raise PreconditionError("sigma_u must be a kappa-type line of Stokes type")
    if sigma_d.family != "kappa-minus-pi-type":
        raise PreconditionError("sigma_d must be a (kappa-pi)-type line of Stokes type")
    if abs(sigma_u.start - hi_end) > endpoint_tol:
        raise PreconditionError(
            f"sigma_u must start at gamma0's upper end (gap {abs(sigma_u.start-hi_end):.3e})")
    if abs(sigma_d.start - lo_end) > endpoint_tol:
        raise PreconditionError(
            f"sigma_d must start at gamma0's lower end (gap {abs(sigma_d.start-lo_end):.3e})")

    cross = intersect(sigma_u, sigma_d)
    if cross:
        x = cross[0]
        poly = np.concatenate([
            gamma0.vertices,
            sigma_u.vertices[1:x.index_a + 1],
            [x.point],
            sigma_d.vertices[:x.index_b + 1][::-1],
        ])
        kind = "triangle"
        meta = {"variant": 2, "crossing": x.point}
    else:
        if gamma_tilde is None:
            raise PreconditionError(
                "sigma_u and sigma_d do not intersect and no gamma_tilde was supplied")
        xu = intersect(sigma_u, gamma_tilde)
        xd = intersect(sigma_d, gamma_tilde)
        if not xu or not xd:
            raise PreconditionError("sigma_u or sigma_d fails to reach gamma_tilde")
        xu, xd = xu[0], xd[0]
        gt = gamma_tilde.vertices
        iu, idn = xu.index_b, xd.index_b
        if iu < idn:
            mid = gt[iu + 1:idn + 1]
        else:
            mid = gt[idn + 1:iu + 1][::-1]
        poly = np.concatenate([
            gamma0.vertices,
            sigma_u.vertices[1:xu.index_a + 1],
            [xu.point], mid[::-1] if iu < idn else mid,
            [xd.point],
            sigma_d.vertices[:xd.index_a + 1][::-1],
        ])
        kind = "trapezium"
        meta = {"variant": 1, "crossings": (xu.point, xd.point)}
    branch = ZetaBranchContext(anchor_zeta=gamma0.vertices[0],
                               anchor_kappa=gamma0.values[0])
    return CanonicalDomain(polygon=poly, endpoint_lo=lo_end, endpoint_hi=hi_end,
                           branch=branch, certificate=(), resolution=None,
                           kind=kind, meta=meta)
