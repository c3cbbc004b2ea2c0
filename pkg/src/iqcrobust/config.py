"""Declarative analysis configs: schema, builders and the per-point runner.

A config names a plant (builtin or inline, optionally affine in the sweep
parameter), a list of multiplier blocks, an optional performance spec and a
sweep. ``run_point`` evaluates one sweep value and returns a CSV row together
with a replayable certificate.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from . import analysis, multiplier as mu, systems
from .lmi import PerformanceSpec, assemble_robust_performance, assemble_robust_stability
from .lti import PartitionedPlant, StateSpace

SCHEMA_VERSION = 1

_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_tf = {
    "type": "object",
    "properties": {"num": _vector, "den": _vector},
    "required": ["num", "den"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "plant": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {"builtin": {"enum": sorted(systems.BUILTIN)}},
                    "required": ["builtin"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {
                        "a": _matrix, "b": _matrix, "c": _matrix, "d": _matrix,
                        "split": {
                            "type": "object",
                            "properties": {k: {"type": "integer", "minimum": 0} for k in ("nw", "nd", "nz", "ne")},
                            "required": ["nw", "nd", "nz", "ne"],
                            "additionalProperties": False,
                        },
                        "param_blocks": {
                            "type": "object",
                            "properties": {k: _matrix for k in "abcd"},
                            "additionalProperties": False,
                        },
                    },
                    "required": ["a", "b", "c", "d", "split"],
                    "additionalProperties": False,
                },
            ]
        },
        "sweep": {
            "type": "object",
            "properties": {
                "parameter": {"type": "string"},
                "lo": {"type": "number"},
                "hi": {"type": "number"},
                "points": {"type": "integer", "minimum": 1},
                "values": {"type": "array", "items": {"type": "number"}, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "multipliers": {
            "type": "array",
            "minItems": 1,
            "items": {
                "oneOf": [
                    {
                        "type": "object",
                        "properties": {"type": {"const": "sector"}, "l": {"type": "number"}, "m": {"type": "number"}},
                        "required": ["type"],
                        "additionalProperties": False,
                    },
                    {
                        "type": "object",
                        "properties": {
                            "type": {"const": "zames_falb"},
                            "a": {"type": "number", "exclusiveMinimum": 0},
                            "combine_static": {"type": "boolean"},
                        },
                        "required": ["type", "a"],
                        "additionalProperties": False,
                    },
                    {
                        "type": "object",
                        "properties": {
                            "type": {"const": "repeated_dynamic"},
                            "basis": {"oneOf": [{"const": "ers"}, {"type": "array", "items": _tf, "minItems": 1}]},
                            "p0": _matrix,
                            "restricted": {"type": "boolean"},
                        },
                        "required": ["type", "basis"],
                        "additionalProperties": False,
                    },
                    {
                        "type": "object",
                        "properties": {
                            "type": {"const": "static_scaled"},
                            "p": _matrix,
                        },
                        "required": ["type", "p"],
                        "additionalProperties": False,
                    },
                    {
                        "type": "object",
                        "properties": {
                            "type": {"const": "parametric"},
                            "kind": {"enum": ["time_varying", "constant_real"]},
                            "k": {"type": "integer", "minimum": 1},
                            "r": {"type": "number", "exclusiveMinimum": 0},
                        },
                        "required": ["type", "kind"],
                        "additionalProperties": False,
                    },
                    {
                        "type": "object",
                        "properties": {
                            "type": {"const": "repeated_sat"},
                            "variant": {"enum": ["P0", "P1", "P2"]},
                            "m": {"type": "integer", "minimum": 1},
                        },
                        "required": ["type", "variant", "m"],
                        "additionalProperties": False,
                    },
                ]
            },
        },
        "performance": {
            "oneOf": [
                {
                    "type": "object",
                    "properties": {"kind": {"const": "amplitude"}},
                    "required": ["kind"],
                    "additionalProperties": False,
                },
                {
                    "type": "object",
                    "properties": {"kind": {"const": "energy_gain"}, "gamma": {"type": "number", "exclusiveMinimum": 0}},
                    "required": ["kind", "gamma"],
                    "additionalProperties": False,
                },
            ]
        },
        "options": {
            "type": "object",
            "properties": {
                "invariance": {"type": "boolean"},
                "solver": {"enum": ["reference", "external"]},
                "seed": {"type": "integer"},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "workers": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    },
    "required": ["schema", "plant", "multipliers"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Schema or consistency violation; ``messages`` holds one line per problem."""

    def __init__(self, messages):
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


def validate(cfg: dict) -> dict:
    """Schema check plus dimension checks that the schema cannot express."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: str(list(e.absolute_path)))
    if errors:
        raise ConfigError(_describe(e) for e in errors)
    try:
        plant_family(cfg["plant"])(sweep_values(cfg)[0])
        build_multiplier(cfg["multipliers"])
    except (ValueError, KeyError) as exc:
        raise ConfigError([str(exc)]) from exc
    return cfg


def _describe(err) -> str:
    """Path and message, descending into the closest branch of a oneOf failure."""
    if err.context:
        # the branch with the fewest complaints is the one the author meant
        branches = {}
        for e in err.context:
            branches.setdefault(e.schema_path[0], []).append(e)
        closest = min(branches.values(), key=lambda es: len({(e.validator, tuple(e.absolute_path)) for e in es}))
        err = jsonschema.exceptions.best_match(closest)
    return f"{'/'.join(map(str, err.absolute_path)) or '<root>'}: {err.message}"


def load(path) -> dict:
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"not valid JSON: {exc}"]) from exc
    return validate(cfg)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def sweep_values(cfg: dict) -> list:
    sweep = cfg.get("sweep", {})
    if "values" in sweep:
        return [float(v) for v in sweep["values"]]
    if "lo" not in sweep:
        return [1.0]
    points = sweep.get("points", 1)
    if points == 1:
        return [float(sweep["lo"])]
    return [float(v) for v in np.linspace(sweep["lo"], sweep.get("hi", sweep["lo"]), points)]


# builders


def plant_family(spec: dict):
    """Map a plant spec to alpha -> PartitionedPlant."""
    if "builtin" in spec:
        return systems.BUILTIN[spec["builtin"]]
    base = {k: np.atleast_2d(np.asarray(spec[k], float)) for k in "abcd"}
    slope = {k: np.atleast_2d(np.asarray(v, float)) for k, v in spec.get("param_blocks", {}).items()}
    split = spec["split"]

    def family(alpha: float) -> PartitionedPlant:
        mats = {k: base[k] + alpha * slope[k] if k in slope else base[k] for k in "abcd"}
        for k in slope:
            if slope[k].shape != base[k].shape:
                raise ValueError(f"param_blocks.{k} has shape {slope[k].shape}, expected {base[k].shape}")
        return PartitionedPlant(StateSpace(mats["a"], mats["b"], mats["c"], mats["d"]), **split)

    return family


def basis_filter(spec) -> StateSpace:
    """Column of SISO transfer functions sharing one input."""
    if spec == "ers":
        return systems.ers_basis()
    parts = [StateSpace.from_tf(tf["num"], tf["den"]) for tf in spec]
    n = sum(p.n for p in parts)
    a = np.zeros((n, n))
    c = np.zeros((len(parts), n))
    off = 0
    for i, p in enumerate(parts):
        a[off : off + p.n, off : off + p.n] = p.a
        c[i, off : off + p.n] = p.c[0]
        off += p.n
    b = np.vstack([p.b for p in parts]) if n else np.zeros((0, 1))
    d = np.vstack([p.d for p in parts])
    return StateSpace(a, b, c, d)


def _one_multiplier(decl: dict) -> mu.MultiplierClass:
    kind = decl["type"]
    if kind == "sector":
        return mu.sector_class(decl.get("l", 1.0), decl.get("m", 0.0))
    if kind == "zames_falb":
        return mu.zames_falb(decl["a"], decl.get("combine_static", True))
    if kind == "repeated_dynamic":
        p0 = np.asarray(decl.get("p0", systems.UNIT_DISK), float)
        return mu.repeated_dynamic(basis_filter(decl["basis"]), p0, decl.get("restricted", False))
    if kind == "static_scaled":
        p = np.asarray(decl["p"], float)
        half = p.shape[0] // 2
        return mu.static_class(mu.scaled_cone(p), half, p.shape[0] - half, name="static_scaled")
    if kind == "parametric":
        return mu.parametric_class(decl["kind"], decl.get("k", 1), decl.get("r", 1.0))
    if kind == "repeated_sat":
        m = decl["m"]
        return mu.static_class(mu.repeated_sat_cone(decl["variant"], m), m, m, name=f"repeated_sat_{decl['variant']}")
    raise ValueError(f"unknown multiplier type {kind!r}")


def build_multiplier(decls: list) -> mu.MultiplierClass:
    return mu.combine([_one_multiplier(d) for d in decls])


def build_performance(spec: dict | None, plant4: PartitionedPlant) -> PerformanceSpec | None:
    if spec is None:
        return None
    if spec["kind"] == "amplitude":
        return PerformanceSpec.amplitude(plant4.ne, plant4.nd)
    return PerformanceSpec.energy_gain(plant4.ne, plant4.nd, spec["gamma"])


# running


@dataclass
class PointResult:
    alpha: float
    verdict: str
    bound: float | None
    note: str
    solve_ms: float
    iterations: int
    certificate: dict | None = field(default=None, repr=False)

    def row(self) -> dict:
        return {
            "alpha": self.alpha,
            "verdict": self.verdict,
            "bound": self.bound,
            "margin_note": self.note,
            "solve_ms": self.solve_ms,
            "iterations": self.iterations,
        }


def recipe_for(cfg: dict, alpha: float) -> dict:
    """The parts of a config that determine the LMI at one sweep value."""
    keep = {k: cfg[k] for k in ("plant", "multipliers", "performance") if k in cfg}
    keep["invariance"] = cfg.get("options", {}).get("invariance", True)
    keep["alpha"] = alpha
    return keep


def run_point(cfg: dict, alpha: float, solver: str | None = None) -> PointResult:
    """Analyze one sweep value; stability only when no performance spec is given."""
    opts = cfg.get("options", {})
    solver = solver or opts.get("solver", "reference")
    plant4 = plant_family(cfg["plant"])(alpha)
    mclass = build_multiplier(cfg["multipliers"])
    perf_spec = cfg.get("performance")
    if perf_spec is None:
        res = analysis.robust_stability(plant4.uncertainty_channel(), mclass, solver)
        bound = None
    else:
        invariance = opts.get("invariance", True)
        perf = build_performance(perf_spec, plant4)
        res = analysis.robust_performance(plant4, mclass, perf, invariance=invariance, solver=solver)
        bound = (res.bound if invariance else res.gamma) if res.ok else None
    diag = res.diagnostics
    note = "" if res.ok else diag.get("status", "inconclusive")
    cert = None
    if res.ok:
        cert = {"recipe": recipe_for(cfg, alpha), "assignment": {k: np.asarray(v).tolist() for k, v in res.assignment.items()}}
    return PointResult(float(alpha), res.verdict, bound, note, float(diag.get("solve_ms", 0.0)),
                       int(diag.get("iterations", 0)), cert)


def rebuild_problem(recipe: dict):
    """Reassemble the LMI a certificate was computed for: (parts, plant4, mclass)."""
    plant4 = plant_family(recipe["plant"])(recipe["alpha"])
    mclass = build_multiplier(recipe["multipliers"])
    if "performance" not in recipe:
        return assemble_robust_stability(plant4.uncertainty_channel(), mclass, parts=True), plant4, mclass
    perf = build_performance(recipe["performance"], plant4)
    parts = assemble_robust_performance(plant4, mclass, perf, invariance=recipe.get("invariance", True), parts=True)
    return parts, plant4, mclass
