"""Plain-text run configuration: INI sections, scalars, and bracketed matrices."""

from __future__ import annotations

import ast
import configparser
import io
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .model import BUILTIN_PLANTS, ParamBox, SafePolytope
from .policy import TrainConfig
from .synthesis import SynthesisConfig


class ConfigError(ValueError):
    """One or more configuration problems; ``errors`` lists all of them."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _tuplify(value):
    if isinstance(value, (list, tuple, np.ndarray)):
        return tuple(_tuplify(v) for v in value)
    return float(value)


def format_matrix(value) -> str:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        return "[" + ", ".join(repr(float(v)) for v in arr) + "]"
    return "[" + ", ".join(format_matrix(row) for row in arr) + "]"


@dataclass(frozen=True)
class CertifyConfig:
    K: Optional[tuple] = None
    P: Optional[tuple] = None
    L: float = 0.0
    sigma: Optional[float] = None
    delta: float = 1.0

    def __post_init__(self):
        if self.L < 0:
            raise ValueError("L must be nonnegative")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.sigma is not None and self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class EvalConfig:
    n_runs: int = 40
    seed: int = 2023
    n_steps: int = 200
    tau: float = 0.1
    lqr_q: tuple = ((1.0, 0.0), (0.0, 1.0))
    lqr_r: tuple = ((1.0, 0.0), (0.0, 1.0))

    def __post_init__(self):
        errs = []
        if self.n_runs < 0:
            errs.append("n_runs must be nonnegative")
        if self.n_steps < 1:
            errs.append("n_steps must be positive")
        if self.tau <= 0:
            errs.append("tau must be positive")
        if errs:
            raise ValueError("; ".join(errs))


@dataclass(frozen=True)
class RunConfig:
    plant: str = "example"
    param_lower: tuple = (-0.05, -0.1)
    param_upper: tuple = (0.05, 0.1)
    vertices: Optional[tuple] = None
    faces_A: Optional[tuple] = None
    faces_b: Optional[tuple] = None
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    output_dir: str = "out"

    def model(self):
        return BUILTIN_PLANTS[self.plant]()

    def params(self) -> ParamBox:
        return ParamBox(self.param_lower, self.param_upper)

    def polytope(self) -> SafePolytope:
        if self.vertices is not None:
            return SafePolytope.from_vertices(self.vertices)
        return SafePolytope(self.faces_A, self.faces_b)

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        cp["plant"] = {"name": self.plant}
        cp["params"] = {"lower": format_matrix(self.param_lower), "upper": format_matrix(self.param_upper)}
        if self.vertices is not None:
            cp["polytope"] = {"vertices": format_matrix(self.vertices)}
        else:
            cp["polytope"] = {"A": format_matrix(self.faces_A), "b": format_matrix(self.faces_b)}
        cp["synthesis"] = {f.name: repr(getattr(self.synthesis, f.name)) for f in fields(SynthesisConfig)}
        cert = {}
        for f in fields(CertifyConfig):
            v = getattr(self.certify, f.name)
            if v is not None:
                cert[f.name] = format_matrix(v) if isinstance(v, tuple) else repr(v)
        cp["certify"] = cert
        cp["train"] = {f.name: (format_matrix(getattr(self.train, f.name)) if f.name == "exploration"
                                else repr(getattr(self.train, f.name))) for f in fields(TrainConfig)}
        cp["evaluate"] = {f.name: (format_matrix(getattr(self.evaluate, f.name))
                                   if isinstance(getattr(self.evaluate, f.name), tuple)
                                   else repr(getattr(self.evaluate, f.name))) for f in fields(EvalConfig)}
        cp["output"] = {"dir": self.output_dir}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_INT_KEYS = {"n_steps", "n_trajectories", "advantage_horizon", "hidden", "seed", "substeps", "n_runs"}


def _parse_value(raw: str, key: str):
    value = ast.literal_eval(raw.strip())
    if isinstance(value, (list, tuple)):
        return _tuplify(value)
    if key in _INT_KEYS:
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"{key} must be an integer")
        return int(value)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{key} must be numeric")
    return float(value)


def _section(cp, name, cls, errors):
    """Build dataclass ``cls`` from section ``name``; unknown keys are errors."""
    if not cp.has_section(name):
        return cls(), {}
    known = {f.name for f in fields(cls)}
    values = {}
    for key, raw in cp.items(name):
        if key not in known:
            errors.append(f"[{name}] unknown key {key!r}")
            continue
        try:
            values[key] = _parse_value(raw, key)
        except (ValueError, SyntaxError) as exc:
            errors.append(f"[{name}] {key}: cannot parse {raw!r} ({exc})")
    return None, values


def parse_config(text: str) -> RunConfig:
    """Parse configuration text; raises :class:`ConfigError` listing every problem."""
    errors: list[str] = []
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep key case (A, b, K, P, L)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed configuration: {exc}"]) from exc
    known_sections = {"plant", "params", "polytope", "synthesis", "certify", "train", "evaluate", "output"}
    for s in cp.sections():
        if s not in known_sections:
            errors.append(f"unknown section [{s}]")

    kwargs = {}
    plant = cp.get("plant", "name", fallback="example").strip()
    if plant not in BUILTIN_PLANTS:
        errors.append(f"[plant] name: unknown plant {plant!r} (available: {sorted(BUILTIN_PLANTS)})")
    kwargs["plant"] = plant

    for key, attr in (("lower", "param_lower"), ("upper", "param_upper")):
        if not cp.has_option("params", key):
            errors.append(f"[params] missing key {key!r}")
            continue
        try:
            kwargs[attr] = _tuplify(ast.literal_eval(cp.get("params", key)))
        except (ValueError, SyntaxError) as exc:
            errors.append(f"[params] {key}: cannot parse ({exc})")

    if cp.has_option("polytope", "vertices"):
        try:
            kwargs["vertices"] = _tuplify(ast.literal_eval(cp.get("polytope", "vertices")))
        except (ValueError, SyntaxError) as exc:
            errors.append(f"[polytope] vertices: cannot parse ({exc})")
    elif cp.has_option("polytope", "A") and cp.has_option("polytope", "b"):
        for key, attr in (("A", "faces_A"), ("b", "faces_b")):
            try:
                kwargs[attr] = _tuplify(ast.literal_eval(cp.get("polytope", key)))
            except (ValueError, SyntaxError) as exc:
                errors.append(f"[polytope] {key}: cannot parse ({exc})")
    else:
        errors.append("[polytope] needs either 'vertices' or both 'A' and 'b'")

    for name, cls, attr in (("synthesis", SynthesisConfig, "synthesis"), ("certify", CertifyConfig, "certify"),
                            ("train", TrainConfig, "train"), ("evaluate", EvalConfig, "evaluate")):
        default, values = _section(cp, name, cls, errors)
        if default is not None:
            kwargs[attr] = default
            continue
        if name == "train":
            probe = TrainConfig.__new__(TrainConfig)
            merged = {f.name: getattr(TrainConfig(), f.name) for f in fields(TrainConfig)}
            merged.update(values)
            for f in fields(TrainConfig):
                object.__setattr__(probe, f.name, merged[f.name])
            problems = probe.errors()
            errors.extend(f"[train] {p}" for p in problems)
            if not problems:
                kwargs[attr] = TrainConfig(**merged)
            continue
        try:
            kwargs[attr] = cls(**values)
        except (ValueError, TypeError) as exc:
            errors.append(f"[{name}] {exc}")

    kwargs["output_dir"] = cp.get("output", "dir", fallback="out").strip()

    config = None
    if not errors:
        config = RunConfig(**kwargs)
        for check in (config.params, config.polytope):
            try:
                check()
            except (ValueError, TypeError) as exc:
                errors.append(str(exc))
        if not errors:
            model = config.model()
            if config.params().dim != model.d:
                errors.append(f"[params] expected {model.d} bounds for plant {plant!r}")
            if config.polytope().dim != model.n:
                errors.append(f"[polytope] expected dimension {model.n} for plant {plant!r}")
            if len(config.train.exploration) != model.m:
                errors.append(f"[train] exploration needs {model.m} entries")
    if errors:
        raise ConfigError(errors)
    return config


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from exc
    return parse_config(text)
