"""The two-interacting-bands configuration: named geometry and constructions.

For a cosine perturbation covering one open gap (index n, window condition
checked by the scenario), the branch points split into three groups: two on
the real interval (0, pi) bounding the covered gap's pre-image, a ladder on
the imaginary axis, and a ladder on Re zeta = pi.  This module names the five
points the constructions use,

    zc_lo  = zeta_{2n}    (real axis, left)
    zc_hi  = zeta_{2n+1}  (real axis, right)
    zp_1   = zeta_{2n+2}  (Re = pi, lowest)
    zp_2   = zeta_{2n+3}  (Re = pi, next)
    zp_3   = zeta_{2n+4}  (Re = pi, above zp_2)

traces the named Stokes lines (a, e, b, c, d and the shared vertical segment
sigma = [zp_1, zp_2]), assembles the pre-canonical curve that hugs the
composite line beta = conj(a) + [zc_hi, pi] + [pi, zp_2] + c, and produces the
canonical line crossing the whole strip that seeds the continuation diagram.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .canonical import (CanonicalityReport, assemble_precanonical, canonicalize,
                        check_canonical)
from .curves import TracedCurve, resample_polyline
from .errors import GeometryError, PreconditionError, ScenarioError
from .momentum import AdiabaticProblem, BranchPoint, ZetaBranchContext
from .scenario import Scenario
from .stokes import StokesFan, TraceConfig, intersect, is_vertical, stokes_fan, \
    trace_stokes_type

__all__ = ["ConditionCGeometry", "ExampleLineConfig", "build_example_line"]

_PI = np.pi


@dataclass
class ExampleLineConfig:
    """Free parameters of the strip-crossing canonical line construction."""
    delta: float = None        # neighborhood of beta; default 0.18 * Im zp_1
    y_cross: float = None      # Y: the line crosses from Im > Y to Im < -Y
    frac_a: float = 0.4        # Im(a-point) as a fraction of Im zp_1
    frac_a3: float = 0.5       # position of a3 between a and a2
    frac_a4: float = 0.5       # Im a4 as a fraction of Im(a-point)
    frac_a6: float = 0.6       # |Im a6| as a fraction of Im a4
    margin_floor: float = 5e-3


class ConditionCGeometry:
    """Names and traces the geometry of the covered-gap configuration."""

    def __init__(self, scenario: Scenario, window=None, trace_config: TraceConfig = None):
        if scenario.gap_index is None:
            raise ScenarioError("scenario must declare condition_C (covered gap index)")
        if scenario.gap_index % 2 != 0:
            raise ScenarioError(
                "the worked construction assumes an even covered-gap index n "
                f"(got n={scenario.gap_index}); for odd n mirror the recipe")
        self.scenario = scenario
        self.n = scenario.gap_index
        self.problem = scenario.problem(window=window).prepare()
        self.bands = self.problem.bands
        scenario.check_window_condition(self.problem.hill)
        self.trace_config = trace_config or TraceConfig()
        self._fans = {}
        self._lines = {}
        self._resolve_points()

    # -- named branch points --------------------------------------------------

    def _bp_for_edge(self, edge_index: int, predicate) -> BranchPoint:
        cands = [p for p in self.problem._branch_points
                 if p.edge_index == edge_index and predicate(p.zeta)]
        if not cands:
            raise GeometryError(
                f"no branch point for edge {edge_index} in the window matching the "
                "expected location; widen the scenario window")
        return min(cands, key=lambda p: abs(p.zeta))

    def _resolve_points(self):
        n = self.n
        in_upper_pi_line = lambda z: abs(z.real - _PI) < 1e-6 and z.imag > 0
        on_real = lambda z: abs(z.imag) < 1e-9 and 0 < z.real < _PI
        self.zc_lo = self._bp_for_edge(2 * n, on_real)
        self.zc_hi = self._bp_for_edge(2 * n + 1, on_real)
        self.zp_1 = self._bp_for_edge(2 * n + 2, in_upper_pi_line)
        self.zp_2 = self._bp_for_edge(2 * n + 3, in_upper_pi_line)
        try:
            self.zp_3 = self._bp_for_edge(2 * n + 4, in_upper_pi_line)
        except GeometryError:
            self.zp_3 = None          # window too low; the d-line is unavailable
        self.zp_1_bar = self._bp_for_edge(
            2 * n + 2, lambda z: abs(z.real - _PI) < 1e-6 and z.imag < 0)

    # -- the working branch ------------------------------------------------------

    def anchor(self) -> ZetaBranchContext:
        """The branch kappa = kappa_main - pi*n anchored inside the half-strip."""
        z0 = 0.75 * _PI + 0.45j * self.zp_1.zeta.imag
        mb = self.problem.main_branch(z0)
        return ZetaBranchContext(anchor_zeta=mb.anchor_zeta,
                                 anchor_kappa=mb.anchor_kappa - _PI * self.n,
                                 offset=-self.n // 2)

    # -- fans and named Stokes lines ------------------------------------------------

    def fan(self, key: str) -> StokesFan:
        if key not in self._fans:
            bp = {"zc_lo": self.zc_lo, "zc_hi": self.zc_hi, "zp_1": self.zp_1,
                  "zp_2": self.zp_2, "zp_3": self.zp_3, "zp_1_bar": self.zp_1_bar}[key]
            if bp is None:
                raise GeometryError(f"branch point {key} not available in this window")
            self._fans[key] = stokes_fan(self.problem, bp, window=self.problem.window,
                                         config=self.trace_config)
        return self._fans[key]

    def _select(self, fan: StokesFan, score) -> TracedCurve:
        curves = list(fan.curves)
        return max(curves, key=score)

    def line(self, name: str) -> TracedCurve:
        """Named Stokes lines of the configuration.

        a: upward from zc_hi inside the half-strip;  e: upward from zc_lo;
        b: down-left from zp_1;  c: up-left from zp_2;  d: down-left from zp_3;
        sigma: the shared segment [zp_1, zp_2] of Re = pi;
        a_bar: downward mirror of a;  b_bar_tilde: up-right from zp_1_bar.
        """
        if name in self._lines:
            return self._lines[name]
        if name == "a":
            c = self._select(self.fan("zc_hi"),
                             lambda cu: np.mean(cu.vertices.imag))
        elif name == "a_bar":
            c = self._select(self.fan("zc_hi"),
                             lambda cu: -np.mean(cu.vertices.imag))
        elif name == "e":
            c = self._select(self.fan("zc_lo"),
                             lambda cu: np.mean(cu.vertices.imag))
        elif name == "b":
            c = self._select(self.fan("zp_1"),
                             lambda cu: -np.mean(cu.vertices.real))
        elif name == "b_tilde":
            c = self._select(self.fan("zp_1"),
                             lambda cu: np.mean(cu.vertices.real))
        elif name == "c":
            c = self._select(self.fan("zp_2"),
                             lambda cu: np.mean(cu.vertices.imag)
                             - 10.0 * max(0.0, np.mean(cu.vertices.real) - _PI))
        elif name == "c_tilde":
            c = self._select(self.fan("zp_2"),
                             lambda cu: np.mean(cu.vertices.imag)
                             + 10.0 * min(0.0, np.mean(cu.vertices.real) - _PI))
        elif name == "d":
            c = self._select(self.fan("zp_3"),
                             lambda cu: -np.mean(cu.vertices.imag)
                             - 10.0 * max(0.0, np.mean(cu.vertices.real) - _PI))
        elif name == "sigma":
            c = self._select(self.fan("zp_1"),
                             lambda cu: np.mean(cu.vertices.imag))
        elif name == "sigma_bar":
            c = self._select(self.fan("zp_1_bar"),
                             lambda cu: -np.mean(cu.vertices.imag))
        elif name == "b_bar_tilde":
            c = self._select(self.fan("zp_1_bar"),
                             lambda cu: np.mean(cu.vertices.imag)
                             + 0.2 * np.mean(cu.vertices.real))
        else:
            raise KeyError(name)
        self._lines[name] = c
        return c

    def beta(self) -> np.ndarray:
        """The composite reference line conj(a) + [zc_hi, pi] + [pi, zp_2] + c."""
        abar = self.line("a_bar").vertices[::-1]
        seg1 = resample_polyline([self.zc_hi.zeta, _PI + 0j], 0.05)
        seg2 = resample_polyline([_PI + 0j, self.zp_2.zeta], 0.05)
        cline = self.line("c").vertices
        return np.concatenate([abar, seg1, seg2, cline])

    # -- the covered band segment on Re = pi -----------------------------------------

    def s_segment(self, c_offset: float, below: float = 0.0) -> TracedCurve:
        """The segment [pi + i*below, pi + i*(Im zp_1 - c_offset)] of Re = pi.

        For c_offset > 0 this is a canonical line for the working branch (its
        image lies strictly inside the covering band).  c_offset = 0 reaches
        the branch point and must fail the canonicality check.
        """
        top = self.zp_1.zeta.imag - c_offset
        verts = resample_polyline([_PI + 1j * below, _PI + 1j * top], 0.02)
        k0 = self.problem.kappa(complex(verts[0]), self.anchor(),
                                check_clearance=False)
        vals = self.problem.kappa_along(verts, start_value=k0, check_clearance=False)
        return TracedCurve(verts, vals, family="user")


def build_example_line(geom: ConditionCGeometry, config: ExampleLineConfig = None):
    """The strip-crossing canonical line of the covered-gap configuration.

    Assembles the six elementary pieces hugging beta (two Stokes-type lines
    above the real axis, the canonical core through the corner pi, one
    Stokes-type line below), then tilts the Stokes-type pieces into the
    strict cone.  Returns (gamma, report, parts).
    """
    cfg = config or ExampleLineConfig()
    prob = geom.problem
    u1 = geom.zp_1.zeta.imag
    u2 = geom.zp_2.zeta.imag
    window = prob.window
    Y = cfg.y_cross if cfg.y_cross is not None else 0.5 * (u2 + window[3])
    if Y <= u2:
        raise PreconditionError(f"Y={Y} must exceed Im zp_2={u2}")
    delta = cfg.delta if cfg.delta is not None else 0.18 * u1
    anchor = geom.anchor()
    tc = geom.trace_config

    # (1) the (kappa-pi)-type line left of b, sigma and c
    seed1 = geom.zp_1.zeta - delta
    k_seed1 = prob.kappa(seed1, anchor, check_clearance=False)
    l1_up = trace_stokes_type(prob, seed1, "kappa-minus-pi-type", direction=+1,
                              start_kappa=k_seed1, window=window, config=tc)
    l1_dn = trace_stokes_type(prob, seed1, "kappa-minus-pi-type", direction=-1,
                              start_kappa=k_seed1, window=window, config=tc,
                              stop=lambda z: z.imag < 0.05 * u1)
    if l1_up.vertices.imag[-1] < l1_dn.vertices.imag[-1]:
        l1_up, l1_dn = l1_dn, l1_up
    if l1_up.vertices.imag[-1] < Y:
        raise GeometryError(
            f"piece (1) failed to reach Im zeta = Y ({l1_up.vertices.imag[-1]:.3f} < {Y:.3f})")
    l1 = l1_dn.reversed().concat(l1_up, tol=1e-9)

    # (2) the kappa-type line through the point a on the covered band segment
    a_pt = _PI + 1j * cfg.frac_a * u1
    k_a = prob.kappa(a_pt, anchor, check_clearance=False)
    l2 = trace_stokes_type(prob, a_pt, "kappa-type", direction=-1,
                           start_kappa=k_a, window=window, config=tc,
                           stop=lambda z: z.imag > u1 + 0.5 * (Y - u1))
    if np.mean(l2.vertices.imag) < a_pt.imag:
        l2 = trace_stokes_type(prob, a_pt, "kappa-type", direction=+1,
                               start_kappa=k_a, window=window, config=tc,
                               stop=lambda z: z.imag > u1 + 0.5 * (Y - u1))
    hits = intersect(l2, l1)
    if not hits:
        raise GeometryError(
            "pieces (1) and (2) do not intersect; increase delta or move the a-point")
    x = max(hits, key=lambda h: h.point.imag)
    a2 = x.point

    # assemble piece (1) from above Y down to a2
    i_top = int(np.argmin(np.abs(l1.vertices.imag - min(Y + 0.45 * (window[3] - Y),
                                                        l1.vertices.imag.max()))))
    j_a2 = x.index_b
    if i_top < j_a2:
        piece1_v = np.concatenate([l1.vertices[i_top:j_a2 + 1], [a2]])
    else:
        piece1_v = np.concatenate([l1.vertices[j_a2 + 1:i_top + 1][::-1], [a2]])
    piece1 = TracedCurve(piece1_v,
                         prob.kappa_along(piece1_v, start_value=complex(
                             l1.values[i_top]), check_clearance=False),
                         family="kappa-minus-pi-type")

    # piece (2): along l2 from a2 down to a3
    j2 = x.index_a
    seg2_v = np.concatenate([[a2], l2.vertices[:j2 + 1][::-1]])   # a2 down to a-point
    im_a3 = a_pt.imag + cfg.frac_a3 * (a2.imag - a_pt.imag)
    keep = seg2_v.imag >= im_a3 - 1e-12
    seg2_v = seg2_v[keep]
    a3 = seg2_v[-1]
    piece2 = TracedCurve(seg2_v,
                         prob.kappa_along(seg2_v, start_value=complex(
                             prob.kappa_step(complex(a2), complex(l2.vertices[j2]),
                                             complex(l2.values[j2]),
                                             check_clearance=False)),
                             check_clearance=False),
                         family="kappa-type")

    # (6) the kappa-type line below [zc_hi, pi] and left of conj(a); traced
    # first because the depth it reaches near Re = pi sets the lower end of
    # the canonical core
    seed4 = 0.5 * (geom.zc_hi.zeta.real + _PI) - 1j * 0.5 * delta
    k_seed4 = prob.kappa(complex(seed4), anchor, check_clearance=False)
    l4_left = trace_stokes_type(prob, complex(seed4), "kappa-type", direction=-1,
                                start_kappa=k_seed4, window=window, config=tc)
    l4_right = trace_stokes_type(prob, complex(seed4), "kappa-type", direction=+1,
                                 start_kappa=k_seed4, window=window, config=tc,
                                 stop=lambda z: z.real > _PI - 0.5 * delta)
    if l4_left.vertices.imag[-1] > -Y and l4_right.vertices.imag[-1] < -Y:
        l4_left, l4_right = l4_right, l4_left
    if l4_left.vertices.imag[-1] > -Y:
        raise GeometryError(
            f"piece (6) failed to reach Im zeta = -Y "
            f"({l4_left.vertices.imag[-1]:.3f} > {-Y:.3f})")
    l4 = l4_right.reversed().concat(l4_left, tol=1e-9)
    i_a6 = int(np.argmin(np.abs(l4.vertices.real - (_PI - 0.8 * delta))
                         + 1e3 * (l4.vertices.imag < -0.3 * a_pt.imag)))
    a6 = l4.vertices[i_a6]
    if a6.imag >= -1e-4:
        raise GeometryError(f"a6 = {a6} is not below the real axis")

    # pieces (3)+(4): C1 bend from a3 into the vertical band segment Re = pi,
    # then straight through the corner down to Im = -y6 (above a6's depth)
    y4 = cfg.frac_a4 * a_pt.imag
    y6 = cfg.frac_a6 * abs(a6.imag)
    ys = np.linspace(a3.imag, y4, max(8, int(abs(a3.imag - y4) / 0.01)))
    tau = (ys - y4) / (a3.imag - y4)
    blend = 3 * tau ** 2 - 2 * tau ** 3          # C1 smoothstep, vertical at y4
    xs = _PI - (_PI - a3.real) * blend
    bend_v = xs + 1j * ys
    core_v = np.concatenate([bend_v[:-1], resample_polyline(
        [_PI + 1j * y4, _PI - 1j * y6], 0.01)])
    k_a3 = complex(piece2.values[-1])
    piece34 = TracedCurve(core_v,
                          prob.kappa_along(core_v, start_value=k_a3,
                                           check_clearance=False),
                          family="user")

    # (5): from the lower end of the core to a6 on l4
    end_core = core_v[-1]
    seg5_v = resample_polyline([end_core, a6], 0.01)
    piece5 = TracedCurve(seg5_v,
                         prob.kappa_along(seg5_v, start_value=complex(piece34.values[-1]),
                                          check_clearance=False),
                         family="user")

    i_bot = int(np.argmin(np.abs(l4.vertices.imag - max(-Y - 0.45 * (window[3] - Y),
                                                        l4.vertices.imag.min()))))
    if i_a6 < i_bot:
        piece6_v = l4.vertices[i_a6:i_bot + 1]
    else:
        piece6_v = l4.vertices[i_bot:i_a6 + 1][::-1]
    piece6 = TracedCurve(piece6_v,
                         prob.kappa_along(piece6_v, start_value=complex(piece5.values[-1]),
                                          check_clearance=False),
                         family="kappa-type")

    pre = assemble_precanonical(prob, [piece1, piece2, piece34, piece5, piece6],
                                tol=5e-3)
    gamma = canonicalize(prob, pre, neighborhood=delta,
                         margin_floor=cfg.margin_floor)
    report = check_canonical(prob, gamma)
    parts = {
        "a2": a2, "a3": a3, "a6": a6, "Y": Y, "delta": delta,
        "core_span": (float(-y6), float(y4)),
        "pre": pre,
    }
    return gamma, report, parts
