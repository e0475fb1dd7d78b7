"""Experiment configuration: JSON files validated against a published schema."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from ..functions import lattice_spacing
from ..qssep_mc import (
    BoundaryParams,
    EnsembleConfig,
    LoopObservable,
    MomentObservable,
    TwoPointObservable,
    TwoTimeObservable,
)
from .compare import Policy

KINDS = ("nc", "fock-check", "simulate", "solve", "steady", "verify")
DEFAULT_FORMATS = ("csv", "json", "plotdata")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


def schema() -> dict:
    text = resources.files("qssep.harness").joinpath("schema.json").read_text()
    return json.loads(text)


def _field(path) -> str:
    parts = []
    for p in path:
        parts.append(f"[{p}]" if isinstance(p, int) else (("." if parts else "") + str(p)))
    return "".join(parts) or "<root>"


def validate(data: dict) -> None:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        deepest = max(errors, key=lambda e: len(e.absolute_path))
        raise ConfigError(f"{_field(deepest.absolute_path)}: {deepest.message}")


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


@dataclass
class ExperimentConfig:
    name: str
    kind: str
    task: str
    seed: int
    params: dict
    ensemble: dict | None
    pde: dict | None
    policy: Policy
    formats: tuple
    raw: dict = field(repr=False, default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        validate(data)
        try:
            policy = Policy.from_dict(data.get("tolerance"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"tolerance: {exc}") from None
        return cls(
            name=data["name"],
            kind=data["kind"],
            task=data.get("task", "default"),
            seed=int(data.get("seed", 0)),
            params=copy.deepcopy(data.get("params", {})),
            ensemble=copy.deepcopy(data.get("ensemble")),
            pde=copy.deepcopy(data.get("pde")),
            policy=policy,
            formats=tuple(data.get("formats", DEFAULT_FORMATS)),
            raw=copy.deepcopy(data),
        )

    def with_seed(self, seed: int) -> "ExperimentConfig":
        data = copy.deepcopy(self.raw)
        data["seed"] = int(seed)
        return ExperimentConfig.from_dict(data)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------
# Monte Carlo section


def ensemble_steps(ens: dict) -> tuple[int, float]:
    """Total steps and the per-step microscopic time of an ensemble section."""
    dt = float(ens.get("dt", 0.05 if ens.get("integrator", "exact") == "exact" else 0.9))
    if "steps" in ens:
        return int(ens["steps"]), dt
    N = _units(ens)
    if "T" in ens:
        return _to_step(ens["T"], N, dt), dt
    # two-time observables fix their own horizon
    last = []
    for o in ens.get("observables", ()):
        if o["type"] != "two_time":
            raise ConfigError("ensemble: give either steps or T")
        first = _to_step(o.get("origin", 0.0), N, dt)
        span = (int(o.get("origins", 1)) - 1) * int(o.get("origin_spacing", 1))
        last.append(first + span + max(int(g) for g in o.get("gaps", (1,))))
    if not last:
        raise ConfigError("ensemble: give either steps or T")
    return max(last), dt


def _units(ens: dict) -> float:
    """Number of lattice spacings per unit length for this ensemble."""
    return 1.0 / lattice_spacing(int(ens["N"]), ens.get("variant", "periodic"))


def _to_step(t: float, N: float, dt: float) -> int:
    return int(round(t * N * N / dt))


def _record_steps(rec: dict | None, N: float, dt: float, final: int) -> tuple[tuple | None, bool]:
    if not rec:
        return None, False
    average = bool(rec.get("average", False))
    if "steps" in rec:
        return tuple(int(s) for s in rec["steps"]), average
    start = _to_step(rec["start"], N, dt) if "start" in rec else final
    stop = _to_step(rec["stop"], N, dt) if "stop" in rec else final
    count = int(rec.get("count", 1))
    if count == 1:
        return (stop,), average
    span = stop - start
    return tuple(start + (span * k) // (count - 1) for k in range(count)), average


def build_observable(spec: dict, N: float, dt: float, final: int):
    name, kind = spec["name"], spec["type"]
    steps, average = _record_steps(spec.get("record"), N, dt, final)
    if kind == "moment":
        return MomentObservable(name, tuple(spec.get("deltas", ())), tuple(spec.get("probes", (0.5,))),
                                steps, average)
    if kind == "loop":
        return LoopObservable(name, tuple(spec.get("functions", (1.0,))), steps, average)
    if kind == "two_point":
        return TwoPointObservable(name, tuple(tuple(p) for p in spec.get("pairs", ((0.25, 0.75),))),
                                  steps, average)
    origin = _to_step(spec.get("origin", 0.0), N, dt)
    count, spacing = int(spec.get("origins", 1)), int(spec.get("origin_spacing", 1))
    origins = tuple(origin + k * spacing for k in range(count))
    return TwoTimeObservable(name, spec.get("delta", 1.0), tuple(spec.get("probes", (0.5,))),
                             origins, tuple(int(g) for g in spec.get("gaps", (1,))))


def build_ensemble(ens: dict, seed: int) -> EnsembleConfig:
    steps, dt = ensemble_steps(ens)
    N = int(ens["N"])
    boundary = None
    if ens.get("boundary") is not None:
        boundary = BoundaryParams(**ens["boundary"])
    observables = tuple(build_observable(o, _units(ens), dt, steps) for o in ens.get("observables", ()))
    kw = {}
    if "resource_cap" in ens:
        kw["resource_cap"] = float(ens["resource_cap"])
    try:
        return EnsembleConfig(
            variant=ens["variant"], N=N, dt=dt, steps=steps, trajectories=int(ens["trajectories"]),
            seed=seed, initial=ens.get("initial", 0.5), boundary=boundary, observables=observables,
            integrator=ens.get("integrator", "exact"), kernel=ens.get("kernel"),
            corrector=bool(ens.get("corrector", True)), **kw)
    except ValueError as exc:
        raise ConfigError(f"ensemble: {exc}") from None
