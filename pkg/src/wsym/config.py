"""Flat ``key = value`` configuration files."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .material import MaterialParams
from .mesh import SIDES, Mesh, generate_structured_alfeld, read_mesh
from .source_driver import CASE_NAMES


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(",", " ").split()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.replace(",", " ").split()]


def _sides(text: str) -> frozenset:
    items = [t.strip() for t in text.replace(",", " ").split() if t.strip()]
    if items in (["none"], []):
        return frozenset()
    return frozenset(items)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class StudyConfig:
    k: int = 1
    mesh: str = "builtin:4"
    gamma1: frozenset = frozenset()
    mu_s: float = 1.0
    lambda_s: float = 1.0
    rho_s: float = 1.0
    problem: str = "source"
    case: str = "smooth"
    num_eigs: int = 3
    multiplicity: int = 1
    newton_rtol: float = 1e-10
    residual_tol: float = 1e-10
    levels: list = field(default_factory=lambda: [2, 4, 8, 16])
    out: str = "out"
    threads: int = 1
    seed: int = 0
    lambda_list: list = field(default_factory=lambda: [1.0, 1e2, 1e4, 1e6])
    postprocess: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def params(self) -> MaterialParams:
        return MaterialParams(self.mu_s, self.lambda_s, self.rho_s)

    def validate(self) -> None:
        if self.k not in (1, 2):
            raise ConfigError(f"k must be 1 or 2 (got {self.k})")
        for name in ("mu_s", "lambda_s", "rho_s"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ConfigError(f"{name} must be finite")
            if v <= 0:
                raise ConfigError(f"{name} must be positive")
        bad = set(self.gamma1) - set(SIDES)
        if bad:
            raise ConfigError(f"unknown gamma1 side(s): {sorted(bad)}")
        if set(self.gamma1) == set(SIDES):
            raise ConfigError("Gamma_0 must be nonempty: gamma1 covers every side")
        if self.case not in CASE_NAMES:
            raise ConfigError(f"unknown case {self.case!r}; choose from {', '.join(CASE_NAMES)}")
        if self.problem not in ("source", "eigen"):
            raise ConfigError("problem must be 'source' or 'eigen'")
        if not self.mesh.startswith("builtin:") and not self.mesh:
            raise ConfigError("mesh must be builtin:<n> or a file path")
        if self.mesh.startswith("builtin:"):
            try:
                n = int(self.mesh.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad builtin mesh value {self.mesh!r}") from None
            if n < 1:
                raise ConfigError("builtin mesh needs at least one cell per side")
        for name in ("num_eigs", "multiplicity", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if any(n < 1 for n in self.levels):
            raise ConfigError("levels must be positive cell counts")
        if any(not (math.isfinite(v) and v > 0) for v in self.lambda_list):
            raise ConfigError("lambda_list entries must be positive and finite")
        for name in ("newton_rtol", "residual_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    def build_mesh(self, cells: int | None = None) -> Mesh:
        if cells is not None:
            return generate_structured_alfeld(cells, self.gamma1)
        if self.mesh.startswith("builtin:"):
            return generate_structured_alfeld(int(self.mesh.split(":", 1)[1]), self.gamma1)
        return read_mesh(self.mesh)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, frozenset):
                v = ",".join(sorted(v)) or "none"
            elif isinstance(v, list):
                v = ", ".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_CONVERTERS = {
    "k": int,
    "mesh": str,
    "gamma1": _sides,
    "mu_s": float,
    "lambda_s": float,
    "rho_s": float,
    "problem": str,
    "case": str,
    "num_eigs": int,
    "multiplicity": int,
    "newton_rtol": float,
    "residual_tol": float,
    "levels": _ints,
    "out": str,
    "threads": int,
    "seed": int,
    "lambda_list": _floats,
    "postprocess": _bool,
}


def parse_config_text(text: str, overrides: dict | None = None) -> StudyConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _CONVERTERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _CONVERTERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    for key, val in (overrides or {}).items():
        if key not in _CONVERTERS:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = _CONVERTERS[key](val) if isinstance(val, str) else val
    return StudyConfig(**values)


def parse_config(path=None, overrides: dict | None = None) -> StudyConfig:
    text = "" if path is None else Path(path).read_text()
    return parse_config_text(text, overrides)
