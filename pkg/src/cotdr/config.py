"""Experiment config files: YAML, validated against a JSON schema, all quantities in SI units.

Top-level layout::

    name: str
    fiber:          # FiberSpec; cores is a list of CoreSpec mappings
    acquisition:    # AcquisitionConfig
    environment:    # temperature, reference_temperature (°C)
    sweep:          # temperatures (°C)
    pmd:            # band (m), n_points, sops (Stokes triples), mod_freq (Hz)
    consecutive:    # drift_rms (K per measurement)

See ``docs/config_schema.md`` for every key.
"""

from __future__ import annotations

import copy
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import yaml

from cotdr.fiber_channel import CoreSpec, EnvironmentState, FiberSpec
from cotdr.measurement import FRONTENDS, AcquisitionConfig
from cotdr.pmd_mps import DEFAULT_BAND, DEFAULT_MOD_FREQ, BirefringenceSpec, StokesVector


class ConfigError(ValueError):
    pass


class _Loader(yaml.SafeLoader):
    pass


# YAML 1.1 reads "1e-9" as a string; accept exponent floats without a dot.
_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
        |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
        |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
        |[-+]?\.(?:inf|Inf|INF)
        |\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["fiber"],
    "properties": {
        "name": {"type": "string"},
        "fiber": {
            "type": "object",
            "additionalProperties": False,
            "required": ["cores", "center_core_id"],
            "properties": {
                "center_core_id": {"type": ["string", "integer"]},
                "reference_reflector_delay": _nonneg,
                "reference_reflectance": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "splitter_excess_delay": _nonneg,
                "backscatter_level": _nonneg,
                "attenuation_db_per_km": _nonneg,
                "splitter_ports": {"type": "integer", "minimum": 1},
                "delay_jitter_rms": _nonneg,
                "cores": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["core_id", "length"],
                        "properties": {
                            "core_id": {"type": ["string", "integer"]},
                            "position": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                            "length": _pos,
                            "group_index": _pos,
                            "skew_offset": _num,
                            "tdc": _num,
                            "end_reflectance": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                            "birefringence": {
                                "type": "object",
                                "additionalProperties": False,
                                "required": ["target_pmd"],
                                "properties": {
                                    "target_pmd": _nonneg,
                                    "n_segments": {"type": "integer", "minimum": 1},
                                    "seed": {"type": "integer", "minimum": 0},
                                },
                            },
                        },
                    },
                },
            },
        },
        "acquisition": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "prbs_order": {"type": "integer", "minimum": 5, "maximum": 31},
                "prbs_seed": {"type": "integer", "minimum": 1},
                "bit_rate": _pos,
                "sample_rate": _pos,
                "rise_time": _nonneg,
                "fill_duration": {"type": ["number", "null"], "minimum": 0},
                "frontend": {"enum": list(FRONTENDS)},
                "n_traces": {"type": "integer", "minimum": 1},
                "noise_sigma": _nonneg,
                "adc_bits": {"type": "integer", "minimum": 1, "maximum": 16},
                "full_scale": {
                    "oneOf": [{"type": "null"}, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]
                },
                "slicer_threshold": {"type": ["number", "null"]},
                "detect_threshold": _pos,
                "fit_half_window": {"type": ["integer", "null"], "minimum": 2},
                "search_window": _pos,
            },
        },
        "environment": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "temperature": {"type": "number", "minimum": -40, "maximum": 85},
                "reference_temperature": {"type": "number", "minimum": -40, "maximum": 85},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "temperatures": {
                    "type": "array",
                    "minItems": 3,
                    "items": {"type": "number", "minimum": -40, "maximum": 85},
                }
            },
        },
        "pmd": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "band": {"type": "array", "items": _pos, "minItems": 2, "maxItems": 2},
                "n_points": {"type": "integer", "minimum": 2},
                "sops": {
                    "type": "array",
                    "minItems": 4,
                    "items": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
                },
                "mod_freq": _pos,
            },
        },
        "consecutive": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"drift_rms": _nonneg},
        },
    },
}


@dataclass
class PmdSettings:
    band: tuple[float, float] = DEFAULT_BAND
    n_points: int = 64
    sops: tuple[StokesVector, ...] = (
        StokesVector(1, 0, 0),
        StokesVector(-1, 0, 0),
        StokesVector(0, 1, 0),
        StokesVector(0, 0, 1),
    )
    mod_freq: float = DEFAULT_MOD_FREQ


@dataclass
class ExperimentConfig:
    fiber: FiberSpec
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    environment: EnvironmentState = field(default_factory=EnvironmentState)
    temperatures: tuple[float, ...] = (10.0, 20.0, 30.0, 40.0, 50.0)
    pmd: PmdSettings = field(default_factory=PmdSettings)
    drift_rms: float = 0.5
    name: str = ""
    raw: dict = field(default_factory=dict)

    def with_acquisition(self, **changes) -> "ExperimentConfig":
        from dataclasses import replace

        acq = replace(self.acquisition, **changes)
        raw = copy.deepcopy(self.raw)
        raw.setdefault("acquisition", {}).update(acq.to_dict())
        return replace(self, acquisition=acq, raw=raw)

    def digest(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def _node_line(root, path) -> int | None:
    """1-based line of the YAML node at ``path`` (keys / list indices)."""
    node = root
    line = node.start_mark.line + 1 if node is not None else None
    for key in path:
        if isinstance(node, yaml.MappingNode):
            nxt = None
            for k, v in node.value:
                if k.value == str(key):
                    nxt = v
                    break
            if nxt is None:
                break
            node = nxt
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
        line = node.start_mark.line + 1
    return line


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        root = yaml.compose(text, Loader=_Loader)
        data = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: YAML syntax error: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}:1: config must be a mapping")
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for err in errors:
            path = list(err.absolute_path)
            if err.validator == "additionalProperties" and isinstance(err.instance, dict):
                # Point at the first unexpected key rather than its parent mapping.
                known = err.schema.get("properties", {})
                extra = [k for k in err.instance if k not in known]
                if extra:
                    path.append(extra[0])
            line = _node_line(root, path)
            dotted = ".".join(str(p) for p in path) or "<root>"
            lines.append(f"{source}:{line}: {dotted}: {err.message}")
        raise ConfigError("\n".join(lines))
    try:
        return from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), str(path))


def from_dict(data: dict) -> ExperimentConfig:
    data = copy.deepcopy(data)
    fd = data["fiber"]
    cores = []
    for c in fd["cores"]:
        c = dict(c)
        bire = c.pop("birefringence", None)
        cores.append(
            CoreSpec(
                core_id=str(c.pop("core_id")),
                position=tuple(c.pop("position", (0.0, 0.0))),
                birefringence=BirefringenceSpec(**bire) if bire else None,
                **c,
            )
        )
    fiber_kwargs = {k: v for k, v in fd.items() if k not in ("cores", "center_core_id")}
    fiber = FiberSpec(
        cores=tuple(cores),
        center_core_id=str(fd["center_core_id"]),
        name=data.get("name", ""),
        **fiber_kwargs,
    )
    acq_d = dict(data.get("acquisition", {}))
    if acq_d.get("full_scale") is not None:
        acq_d["full_scale"] = tuple(acq_d["full_scale"])
    acq = AcquisitionConfig(**acq_d)
    env = EnvironmentState(**data.get("environment", {}))
    temps = tuple(float(t) for t in data.get("sweep", {}).get("temperatures", (10, 20, 30, 40, 50)))
    pd = data.get("pmd", {})
    pmd = PmdSettings()
    if "band" in pd:
        pmd.band = tuple(float(v) for v in pd["band"])
    if "n_points" in pd:
        pmd.n_points = int(pd["n_points"])
    if "sops" in pd:
        pmd.sops = tuple(StokesVector(*map(float, s)) for s in pd["sops"])
    if "mod_freq" in pd:
        pmd.mod_freq = float(pd["mod_freq"])
    drift = float(data.get("consecutive", {}).get("drift_rms", 0.5))
    return ExperimentConfig(fiber, acq, env, temps, pmd, drift, data.get("name", ""), data)


def fiber_to_dict(fiber: FiberSpec) -> dict:
    cores = []
    for c in fiber.cores:
        d = {
            "core_id": c.core_id,
            "position": list(c.position),
            "length": c.length,
            "group_index": c.group_index,
            "skew_offset": c.skew_offset,
            "tdc": c.tdc,
            "end_reflectance": c.end_reflectance,
        }
        if c.birefringence is not None:
            b = c.birefringence
            d["birefringence"] = {"target_pmd": b.target_pmd, "n_segments": b.n_segments, "seed": b.seed}
        cores.append(d)
    return {
        "center_core_id": fiber.center_core_id,
        "reference_reflector_delay": fiber.reference_reflector_delay,
        "reference_reflectance": fiber.reference_reflectance,
        "splitter_excess_delay": fiber.splitter_excess_delay,
        "backscatter_level": fiber.backscatter_level,
        "attenuation_db_per_km": fiber.attenuation_db_per_km,
        "splitter_ports": fiber.splitter_ports,
        "delay_jitter_rms": fiber.delay_jitter_rms,
        "cores": cores,
    }


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.raw, sort_keys=False)


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``mcf7_10km``, ``mcf19_5km``, ``mcf4_5km``)."""
    path = Path(__file__).parent / "configs" / f"{name}.yaml"
    if not path.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return path
