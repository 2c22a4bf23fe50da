"""Scenario files: one physical configuration consumed by every subcommand.

A scenario fixes the periodic potential, the slow perturbation, the energy E,
the covered-gap index n with its safety margin (the window condition
[E_{2n}-delta, E_{2n+1}+delta] inside [E-alpha, E+alpha] inside
(E_{2n-1}, E_{2n+2})), the epsilon list, the zeta window, and tolerances.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from .errors import ScenarioError
from .hill import HillOperator
from .momentum import AdiabaticProblem
from .potentials import AdiabaticPerturbation, PeriodicPotential

__all__ = ["Scenario", "load_scenario", "builtin_example", "SCENARIO_SCHEMA"]

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["potential", "W", "E"],
    "properties": {
        "potential": {
            "type": "object",
            "properties": {
                "cos": {"type": "array", "items": {"type": "number"}},
                "sin": {"type": "array", "items": {"type": "number"}},
            },
            "additionalProperties": False,
        },
        "W": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["cos", "trig"]},
                "alpha": {"type": "number"},
                "cos": {"type": "array", "items": {"type": "number"}},
                "sin": {"type": "array", "items": {"type": "number"}},
            },
        },
        "E": {"type": "number"},
        "eps": {
            "type": "array",
            "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "minItems": 1,
        },
        "condition_C": {
            "type": "object",
            "required": ["n"],
            "properties": {
                "n": {"type": "integer", "minimum": 1},
                "delta": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "window": {
            "type": "object",
            "properties": {
                "re": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
                "im": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": {"type": "number", "exclusiveMinimum": 0},
        },
        "clearance": {"type": "number", "exclusiveMinimum": 0},
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class Scenario:
    potential: PeriodicPotential
    perturbation: AdiabaticPerturbation
    energy: float
    eps_list: tuple = (0.1, 0.05, 0.025)
    gap_index: int = None          # n in the window condition, None: not asserted
    margin: float = None           # delta; None: 5% of the covered gap width
    window: tuple = (-0.5, 2 * np.pi + 0.5, -1.6, 1.6)
    clearance: float = 1e-3
    tolerances: dict = field(default_factory=dict)

    # -- serialization ---------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "potential": self.potential.to_dict(),
            "W": self.perturbation.to_dict(),
            "E": self.energy,
            "eps": list(self.eps_list),
            "window": {"re": [self.window[0], self.window[1]],
                       "im": [self.window[2], self.window[3]]},
            "clearance": self.clearance,
        }
        if self.gap_index is not None:
            cc = {"n": self.gap_index}
            if self.margin is not None:
                cc["delta"] = self.margin
            out["condition_C"] = cc
        if self.tolerances:
            out["tolerances"] = dict(self.tolerances)
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "Scenario":
        validate_scenario_dict(spec)
        win = spec.get("window", {})
        re = win.get("re", [-0.5, 2 * np.pi + 0.5])
        im = win.get("im", [-1.6, 1.6])
        cc = spec.get("condition_C", {})
        return cls(
            potential=PeriodicPotential.from_dict(spec.get("potential", {})),
            perturbation=AdiabaticPerturbation.from_dict(spec["W"]),
            energy=float(spec["E"]),
            eps_list=tuple(spec.get("eps", (0.1, 0.05, 0.025))),
            gap_index=cc.get("n"),
            margin=cc.get("delta"),
            window=(re[0], re[1], im[0], im[1]),
            clearance=float(spec.get("clearance", 1e-3)),
            tolerances=dict(spec.get("tolerances", {})),
        )

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    # -- bound objects -----------------------------------------------------------

    def hill(self, **kw) -> HillOperator:
        return HillOperator(self.potential, **kw)

    def problem(self, hill: HillOperator = None, window=None) -> AdiabaticProblem:
        return AdiabaticProblem(hill or self.hill(), self.perturbation, self.energy,
                                clearance=self.clearance, window=window or self.window)

    @property
    def alpha(self) -> float:
        if self.perturbation.kind != "cos":
            raise ScenarioError("alpha is defined for the cosine perturbation only")
        return self.perturbation.alpha

    def check_window_condition(self, hill: HillOperator = None):
        """Verify the covering condition for gap n; raises naming the failing
        inclusion.  Returns the band structure used."""
        if self.gap_index is None:
            raise ScenarioError("scenario does not declare a covered gap (condition_C)")
        h = hill or self.hill()
        n = self.gap_index
        alpha = self.alpha
        bands = h.band_structure(self.energy + alpha + 30.0)
        if len(bands.edges) < 2 * n + 2:
            raise ScenarioError(f"band structure unresolved up to edge {2*n+2}")
        gap = bands.gap(n)
        if not gap.open:
            raise ScenarioError(f"gap {n} is closed: the covering condition cannot hold")
        delta = self.margin if self.margin is not None else 0.05 * gap.width
        E, lo, hi = self.energy, gap.lo, gap.hi
        outer_lo = bands.edges[2 * n - 2]    # E_{2n-1}
        outer_hi = bands.edges[2 * n + 1]    # E_{2n+2}
        if not (E - alpha <= lo - delta):
            raise ScenarioError(
                f"inclusion [E_2n - delta, ...] in [E-alpha, ...] fails: "
                f"E-alpha={E-alpha:.6f} > E_2n-delta={lo-delta:.6f}")
        if not (hi + delta <= E + alpha):
            raise ScenarioError(
                f"inclusion [..., E_2n+1 + delta] in [..., E+alpha] fails: "
                f"E+alpha={E+alpha:.6f} < E_2n+1+delta={hi+delta:.6f}")
        if not (outer_lo < E - alpha):
            raise ScenarioError(
                f"inclusion [E-alpha, E+alpha] in (E_2n-1, E_2n+2) fails at the left: "
                f"E-alpha={E-alpha:.6f} <= E_2n-1={outer_lo:.6f}")
        if not (E + alpha < outer_hi):
            raise ScenarioError(
                f"inclusion [E-alpha, E+alpha] in (E_2n-1, E_2n+2) fails at the right: "
                f"E+alpha={E+alpha:.6f} >= E_2n+2={outer_hi:.6f}")
        return bands


def validate_scenario_dict(spec: dict):
    if jsonschema is None:
        if "W" not in spec or "E" not in spec:
            raise ScenarioError("scenario must define W and E")
        return
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(spec), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for e in errors:
            pointer = "/" + "/".join(str(p) for p in e.absolute_path)
            msgs.append(f"{pointer or '/'}: {e.message}")
        raise ScenarioError("invalid scenario: " + "; ".join(msgs))


def load_scenario(path) -> Scenario:
    with open(path) as f:
        spec = json.load(f)
    return Scenario.from_dict(spec)


def builtin_example() -> Scenario:
    """The two-interacting-bands configuration used across tests and demos.

    Four open gaps; the slow cosine covers gap n=2 with margin, sine-dominant
    Fourier modes 2 and 3 keep the Bloch-solution poles away from the gap
    edges.  E sits mid-gap; alpha is 92% of the largest value allowed by the
    covering condition.
    """
    pot = PeriodicPotential(fourier_cosine=(2.0, 0.3, 0.7, 0.8),
                            fourier_sine=(0.5, 2.0, 2.4, 0.3))
    return Scenario(
        potential=pot,
        perturbation=AdiabaticPerturbation(kind="cos", alpha=26.35),
        energy=39.47,
        eps_list=(0.1, 0.05, 0.025),
        gap_index=2,
        margin=0.1,
        window=(-0.5, 2 * np.pi + 0.5, -1.45, 1.45),
        clearance=1e-3,
    )


def free_cosine_example(energy: float = 2.0) -> Scenario:
    """V = 0, W = cos: kappa has the closed form sqrt(E - cos zeta)."""
    return Scenario(
        potential=PeriodicPotential(),
        perturbation=AdiabaticPerturbation(kind="cos", alpha=1.0),
        energy=float(energy),
        eps_list=(0.1, 0.05, 0.025),
        window=(-0.5, 2 * np.pi + 0.5, -1.5, 1.5),
        clearance=1e-3,
    )
