"""Scenario files: JSON documents validated against a published schema.

A scenario names a particle system and a partition chain (for reductions),
or a single operator directly, plus the engine settings needed to evolve
it. ``load_scenario`` reports every violation at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

from .algebra import (
    ClusterPartition,
    LiouvillianSpec,
    MomentModel,
    ParticleSystem,
    initial_spec,
    reduce_chain,
)
from .errors import ConfigError
from .polynomial import Polynomial, parse_polynomial

ENGINES = ("reduce-only", "quantum", "classical", "wigner")

_number = {"type": "number"}
_nonneg = {"type": "number", "minimum": 0}
_positive = {"type": "number", "exclusiveMinimum": 0}
_poly = {"type": "string", "minLength": 1}
_grid1 = {
    "type": "array",
    "prefixItems": [_number, _number, {"type": "integer", "minimum": 2}],
    "minItems": 3,
    "maxItems": 3,
}
_term = {
    "type": "array",
    "prefixItems": [_number, _poly],
    "minItems": 2,
    "maxItems": 2,
}
_gen_term = {
    "type": "array",
    "prefixItems": [_nonneg, _poly],
    "minItems": 2,
    "maxItems": 2,
}
_moments = {
    "type": "object",
    "properties": {
        "default_variance": _nonneg,
        "timescale": _nonneg,
        "variances": {"type": "object", "additionalProperties": _nonneg},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "mesoreduce scenario",
    "type": "object",
    "required": ["name", "engine"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "description": {"type": "string"},
        "engine": {"enum": list(ENGINES)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "system": {
            "type": "object",
            "required": ["masses", "pair_potential", "external_potential"],
            "additionalProperties": False,
            "properties": {
                "masses": {"type": "array", "items": _positive, "minItems": 1},
                "pair_couplings": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "prefixItems": [{"type": "integer", "minimum": 1}, {"type": "integer", "minimum": 1}, _number],
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
                "external_couplings": {"type": "array", "items": _number},
                "pair_potential": _poly,
                "external_potential": _poly,
                "kinetic": {"type": "boolean"},
            },
        },
        "partitions": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        },
        "moments": {"type": "array", "items": _moments},
        "max_depth": {"type": "integer", "minimum": 1},
        "level": {"type": "integer", "minimum": 0},
        "operator": {
            "type": "object",
            "required": ["coordinates", "masses"],
            "additionalProperties": False,
            "properties": {
                "coordinates": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "masses": {"type": "array", "items": _positive, "minItems": 1},
                "kinetic": {"type": "boolean"},
                "hamiltonian": {"type": "array", "items": _term},
                "decoherence": {"type": "array", "items": _gen_term},
            },
        },
        "hbar": _positive,
        "grid": {
            "type": "object",
            "required": ["points", "x_min", "x_max"],
            "additionalProperties": False,
            "properties": {
                "points": {"type": "integer", "minimum": 3},
                "x_min": _number,
                "x_max": _number,
            },
        },
        "phase_grid": {
            "type": "object",
            "required": ["x", "p"],
            "additionalProperties": False,
            "properties": {
                "x": {"type": "array", "items": _grid1, "minItems": 1, "maxItems": 2},
                "p": {"type": "array", "items": _grid1, "minItems": 1, "maxItems": 2},
            },
        },
        "initial_state": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["gaussian", "cat", "sin", "boltzmann"]},
                "x0": _number,
                "p0": _number,
                "sigma_x": _positive,
                "sigma_p": _positive,
                "a": _number,
                "k": _number,
                "theta": _positive,
            },
        },
        "integrator": {
            "type": "object",
            "required": ["dt", "steps"],
            "additionalProperties": False,
            "properties": {
                "dt": _positive,
                "steps": {"type": "integer", "minimum": 1},
                "save_every": {"type": "integer", "minimum": 1},
                "stencil_order": {"enum": [2, 4]},
                "trajectories": {"type": "integer", "minimum": 0},
                "snapshots": {"type": "boolean"},
            },
        },
    },
}


@dataclass
class ScenarioConfig:
    raw: dict
    name: str
    engine: str
    seed: int | None
    output_dir: str | None
    system: ParticleSystem | None = None
    partitions: list = field(default_factory=list)
    moments: list = field(default_factory=list)
    operator: LiouvillianSpec | None = None
    level: int | None = None
    max_depth: int = 5
    hbar: float = 1.0

    def levels(self) -> list:
        """Operators along the partition chain, starting from the base system."""
        if self.system is None:
            return [self.operator]
        base = initial_spec(self.system, kinetic=self.raw["system"].get("kinetic", True))
        return reduce_chain(base, self.partitions, self.moments or None)

    def target_operator(self) -> LiouvillianSpec:
        """The operator an evolution engine works on."""
        if self.operator is not None:
            return self.operator
        levels = self.levels()
        k = len(levels) - 1 if self.level is None else self.level
        return levels[k]

    @property
    def integrator(self) -> dict:
        return self.raw.get("integrator", {})


def _json_path(err) -> str:
    parts = [str(p) for p in err.absolute_path]
    return "/".join(parts) or "<root>"


def parse_scenario(text: str | bytes) -> dict:
    if isinstance(text, bytes):
        data = text
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ConfigError(f"parse error at byte {exc.start}: not valid UTF-8") from None
    else:
        data = text.encode("utf-8")
    if not text.strip():
        raise ConfigError(f"parse error at byte {len(data)}: empty document")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        offset = len(text[: exc.pos].encode("utf-8"))
        raise ConfigError(f"parse error at byte {offset} (line {exc.lineno}, column {exc.colno}): {exc.msg}") from None


def validate(raw: dict) -> ScenarioConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    violations = [
        f"{_json_path(e)}: {e.message}"
        for e in sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    ]
    if violations:
        raise ConfigError("scenario failed schema validation", violations)

    problems = []
    engine = raw["engine"]
    cfg = ScenarioConfig(
        raw=raw,
        name=raw["name"],
        engine=engine,
        seed=raw.get("seed"),
        output_dir=raw.get("output_dir"),
        level=raw.get("level"),
        max_depth=raw.get("max_depth", 5),
        hbar=float(raw.get("hbar", 1.0)),
    )

    def poly(text, where, variables=None):
        try:
            return parse_polynomial(text, variables)
        except (ValueError, SyntaxError) as exc:
            problems.append(f"{where}: cannot parse polynomial {text!r} ({exc})")
            return Polynomial()

    if "system" in raw and "operator" in raw:
        problems.append("<root>: give either 'system' or 'operator', not both")
    elif "system" not in raw and "operator" not in raw:
        problems.append("<root>: one of 'system' or 'operator' is required")

    if "system" in raw:
        s = raw["system"]
        n = len(s["masses"])
        ext = s.get("external_couplings", [0] * n)
        if len(ext) != n:
            problems.append(f"system/external_couplings: expected {n} entries, got {len(ext)}")
        try:
            cfg.system = ParticleSystem(
                masses=tuple(s["masses"]),
                pair_couplings={(j, k): q for j, k, q in s.get("pair_couplings", [])},
                external_couplings=tuple(ext),
                pair_potential=poly(s["pair_potential"], "system/pair_potential"),
                external_potential=poly(s["external_potential"], "system/external_potential"),
            )
        except ValueError as exc:
            problems.append(f"system: {exc}")
        size = n
        for i, a in enumerate(raw.get("partitions", [])):
            try:
                part = ClusterPartition(tuple(a))
            except ValueError as exc:
                problems.append(f"partitions/{i}: {exc}")
                break
            if len(part) != size:
                problems.append(
                    f"partitions/{i}: inconsistent partition chain, covers {len(part)} coordinates but level {i} has {size}"
                )
                break
            cfg.partitions.append(part)
            size = part.n_clusters
        for i, m in enumerate(raw.get("moments", [])):
            cfg.moments.append(MomentModel(**m))
        if cfg.level is not None and cfg.level > len(raw.get("partitions", [])):
            problems.append(f"level: {cfg.level} exceeds the partition chain length {len(raw.get('partitions', []))}")

    if "operator" in raw:
        o = raw["operator"]
        coords = tuple(o["coordinates"])
        if len(o["masses"]) != len(coords):
            problems.append("operator/masses: need one mass per coordinate")
        else:
            try:
                cfg.operator = LiouvillianSpec(
                    coordinates=coords,
                    masses=tuple(o["masses"]),
                    hamiltonian=[(c, poly(t, f"operator/hamiltonian/{i}", coords)) for i, (c, t) in enumerate(o.get("hamiltonian", []))],
                    decoherence=[(g, poly(t, f"operator/decoherence/{i}", coords)) for i, (g, t) in enumerate(o.get("decoherence", []))],
                    kinetic=o.get("kinetic", True),
                )
            except (ValueError, KeyError) as exc:
                problems.append(f"operator: {exc}")

    if engine in ("quantum", "wigner"):
        for key in ("grid", "initial_state", "integrator"):
            if key not in raw:
                problems.append(f"{key}: required for the {engine} engine")
        if "grid" in raw and raw["grid"]["x_max"] <= raw["grid"]["x_min"]:
            problems.append("grid: x_max must exceed x_min")
    if engine == "classical":
        for key in ("phase_grid", "initial_state", "integrator"):
            if key not in raw:
                problems.append(f"{key}: required for the classical engine")
    if raw.get("integrator", {}).get("trajectories", 0) > 0 and "seed" not in raw:
        problems.append("seed: mandatory for stochastic runs (integrator/trajectories > 0)")

    if problems:
        raise ConfigError("scenario is inconsistent", problems)
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {path}: {exc.strerror}") from None
    return validate(parse_scenario(data))


def bundled_scenarios() -> Path:
    return Path(__file__).parent / "scenarios"


def scenario_schema() -> dict:
    return json.loads(json.dumps(SCHEMA))
