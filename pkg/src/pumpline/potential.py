"""Doubly periodic potentials V(x, s) stored as truncated Fourier data.

A potential is a sum of terms ``coeff(s) * cos(2 pi m x / L)`` (or ``sin``),
where each ``coeff`` is itself a real truncated Fourier series in
``2 pi s / T``.  Periodicity in both arguments therefore holds by
construction, and the spatial Fourier coefficients needed by the
plane-wave Bloch Hamiltonian are available in closed form.

Units: hbar^2 / 2m = 1, so H(s) = -d^2/dx^2 + V(x, s).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import jsonschema
import numpy as np
import yaml

from .errors import ConfigError

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CoeffSeries:
    """Real s-periodic coefficient ``const + sum_j cos[j] cos(2 pi (j+1) s/T) + sin[j] sin(...)``."""

    const: float = 0.0
    cos: tuple[float, ...] = ()
    sin: tuple[float, ...] = ()

    def __call__(self, s, T: float):
        s = np.asarray(s, dtype=float)
        out = np.full(s.shape, float(self.const))
        phase = TWO_PI * s / T
        for j, c in enumerate(self.cos, start=1):
            if c:
                out = out + c * np.cos(j * phase)
        for j, c in enumerate(self.sin, start=1):
            if c:
                out = out + c * np.sin(j * phase)
        return out

    @property
    def is_static(self) -> bool:
        return not any(self.cos) and not any(self.sin)


@dataclass(frozen=True)
class Term:
    m: int
    kind: str  # "cos" | "sin"
    coeff: CoeffSeries

    def spatial(self, x, L: float):
        arg = TWO_PI * self.m * np.asarray(x, dtype=float) / L
        return np.cos(arg) if self.kind == "cos" else np.sin(arg)


@dataclass(frozen=True)
class PotentialSpec:
    L: float = 1.0
    T: float = 1.0
    terms: tuple[Term, ...] = ()
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ConfigError(f"L must be positive, got {self.L!r}")
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ConfigError(f"T must be positive, got {self.T!r}")

    @property
    def max_harmonic(self) -> int:
        return max((t.m for t in self.terms), default=0)

    @property
    def is_static(self) -> bool:
        return all(t.coeff.is_static for t in self.terms)

    def coefficients(self, s) -> np.ndarray:
        """Term coefficients, shape ``(n_terms,) + shape(s)``."""
        s = np.asarray(s, dtype=float)
        if not self.terms:
            return np.zeros((0,) + s.shape)
        return np.stack([t.coeff(s, self.T) for t in self.terms])

    def grid(self, x, s) -> np.ndarray:
        """V on the outer product of 1-d arrays ``x`` and ``s``: shape (len(x), len(s))."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if not self.terms:
            return np.zeros((x.size, s.size))
        basis = np.stack([t.spatial(x, self.L) for t in self.terms], axis=-1)
        return basis @ self.coefficients(s)

    def __call__(self, x, s):
        return eval_potential(self, x, s)

    def reversed_loop(self) -> "PotentialSpec":
        """The same family traversed backwards: V'(x, s) = V(x, T - s)."""
        terms = tuple(Term(t.m, t.kind, CoeffSeries(t.coeff.const, t.coeff.cos,
                                                    tuple(-c for c in t.coeff.sin)))
                      for t in self.terms)
        return PotentialSpec(L=self.L, T=self.T, terms=terms, name=self.name + "_reversed")

    def lower_bound(self) -> float:
        """A value certainly below min V (sum of absolute Fourier amplitudes)."""
        amp = sum(abs(t.coeff.const) + sum(map(abs, t.coeff.cos)) + sum(map(abs, t.coeff.sin))
                  for t in self.terms)
        return -float(amp)


def eval_potential(spec: PotentialSpec, x, s):
    """V(x, s) with numpy broadcasting between ``x`` and ``s``."""
    x, s = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(s, dtype=float))
    out = np.zeros(x.shape)
    for t in spec.terms:
        out = out + t.coeff(s, spec.T) * t.spatial(x, spec.L)
    return out if out.ndim else float(out)


def fourier_coefficient(spec: PotentialSpec, s, m: int):
    """Complex coefficient V_m(s) in V(x, s) = sum_m V_m(s) exp(2 pi i m x / L)."""
    s = np.asarray(s, dtype=float)
    out = np.zeros(s.shape, dtype=complex)
    for t in spec.terms:
        if t.m == 0:
            if m == 0 and t.kind == "cos":
                out = out + t.coeff(s, spec.T)
            continue
        if abs(m) != t.m:
            continue
        c = t.coeff(s, spec.T)
        if t.kind == "cos":
            out = out + 0.5 * c
        else:
            out = out + (-0.5j if m > 0 else 0.5j) * c
    return out if out.ndim else complex(out)


def fourier_table(spec: PotentialSpec, s, max_m: int) -> np.ndarray:
    """Coefficients for m = -max_m..max_m, shape ``(2 max_m + 1,) + shape(s)``."""
    return np.stack([np.asarray(fourier_coefficient(spec, s, m)) for m in range(-max_m, max_m + 1)])


# ---------------------------------------------------------------------------
# presets

def sliding_cosine(V0: float = 2.0, L: float = 1.0, T: float = 1.0) -> PotentialSpec:
    """V0 cos(2 pi (x - s L / T) / L): a cosine dragged one cell per cycle."""
    return PotentialSpec(
        L=L,
        T=T,
        terms=(
            Term(1, "cos", CoeffSeries(cos=(V0,))),
            Term(1, "sin", CoeffSeries(sin=(V0,))),
        ),
        name="sliding_cosine",
    )


def two_harmonic_pump(a0: float = 4.0, a1: float = 2.0, b: float = 12.0,
                      L: float = 1.0, T: float = 1.0) -> PotentialSpec:
    """a(s) cos(2 pi x / L) + b cos(4 pi x / L + phi(s)).

    a(s) = a0 + a1 cos(2 pi s / T) and phi(s) = 2 pi s / T, so (a, phi)
    traces a closed loop while the second harmonic slides half a cell per
    cycle.
    """
    return PotentialSpec(
        L=L,
        T=T,
        terms=(
            Term(1, "cos", CoeffSeries(const=a0, cos=(a1,))),
            Term(2, "cos", CoeffSeries(cos=(b,))),
            Term(2, "sin", CoeffSeries(sin=(-b,))),
        ),
        name="two_harmonic_pump",
    )


def static_cosine(V0: float = 2.0, L: float = 1.0, T: float = 1.0) -> PotentialSpec:
    return PotentialSpec(L=L, T=T, terms=(Term(1, "cos", CoeffSeries(const=V0)),), name="static_cosine")


def constant_barrier(V0: float = 2.0, L: float = 1.0, T: float = 1.0) -> PotentialSpec:
    return PotentialSpec(L=L, T=T, terms=(Term(0, "cos", CoeffSeries(const=V0)),), name="constant_barrier")


PRESETS = {
    "sliding_cosine": sliding_cosine,
    "two_harmonic_pump": two_harmonic_pump,
    "static_cosine": static_cosine,
    "constant_barrier": constant_barrier,
}


# ---------------------------------------------------------------------------
# configuration

_COEFF_SCHEMA = {
    "type": "object",
    "properties": {
        "const": {"type": "number"},
        "cos": {"type": "array", "items": {"type": "number"}},
        "sin": {"type": "array", "items": {"type": "number"}},
    },
    "additionalProperties": False,
}

POTENTIAL_SCHEMA = {
    "type": "object",
    "properties": {
        "L": {"type": "number"},
        "T": {"type": "number"},
        "preset": {"type": "string", "enum": sorted(PRESETS)},
        "params": {"type": "object", "additionalProperties": {"type": "number"}},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "m": {"type": "integer", "minimum": 0},
                    "kind": {"enum": ["cos", "sin"]},
                    "coeff_fourier": _COEFF_SCHEMA,
                },
                "required": ["m", "kind", "coeff_fourier"],
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def _parse_text(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"could not parse configuration: {exc}") from exc


def schema_error(exc: jsonschema.ValidationError, prefix: str = "") -> ConfigError:
    path = ".".join(str(p) for p in exc.absolute_path)
    if exc.validator == "additionalProperties":
        where = path or "<root>"
        return ConfigError(f"{prefix}unknown key in {where}: {exc.message}")
    if exc.validator == "required":
        return ConfigError(f"{prefix}{exc.message} (in {path or '<root>'})")
    return ConfigError(f"{prefix}invalid value for key '{path}': {exc.message}")


def load_spec(config: str | Mapping[str, Any]) -> PotentialSpec:
    """Build a validated PotentialSpec from a JSON/YAML document or mapping.

    A ``preset`` key selects a named family; its keyword arguments come from
    ``params`` and from ``L``/``T``.  Explicit ``terms`` are appended to the
    preset's terms.
    """
    doc = _parse_text(config) if isinstance(config, str) else config
    if not isinstance(doc, Mapping):
        raise ConfigError("potential configuration must be a mapping")
    try:
        jsonschema.validate(doc, POTENTIAL_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise schema_error(exc) from None

    L = float(doc.get("L", 1.0))
    T = float(doc.get("T", 1.0))
    if L <= 0:
        raise ConfigError(f"invalid value for key 'L': must be > 0, got {L}")
    if T <= 0:
        raise ConfigError(f"invalid value for key 'T': must be > 0, got {T}")

    terms = []
    name = "custom"
    if "preset" in doc:
        name = doc["preset"]
        params = dict(doc.get("params", {}))
        try:
            base = PRESETS[name](L=L, T=T, **params)
        except TypeError as exc:
            raise ConfigError(f"invalid params for preset '{name}': {exc}") from None
        terms.extend(base.terms)
    elif "params" in doc:
        raise ConfigError("key 'params' requires a 'preset'")

    for item in doc.get("terms", []):
        cf = item["coeff_fourier"]
        terms.append(Term(
            int(item["m"]),
            item["kind"],
            CoeffSeries(
                const=float(cf.get("const", 0.0)),
                cos=tuple(float(c) for c in cf.get("cos", [])),
                sin=tuple(float(c) for c in cf.get("sin", [])),
            ),
        ))
    return PotentialSpec(L=L, T=T, terms=tuple(terms), name=name)


def spec_to_dict(spec: PotentialSpec) -> dict:
    """Inverse of :func:`load_spec` (always in explicit ``terms`` form)."""
    return {
        "L": spec.L,
        "T": spec.T,
        "terms": [
            {
                "m": t.m,
                "kind": t.kind,
                "coeff_fourier": {"const": t.coeff.const, "cos": list(t.coeff.cos), "sin": list(t.coeff.sin)},
            }
            for t in spec.terms
        ],
    }


@dataclass(frozen=True)
class FermiPoint:
    E_F: float

    def __post_init__(self):
        if not (self.E_F > 0 and math.isfinite(self.E_F)):
            raise ConfigError(f"E_F must be positive (open leads need a propagating momentum), got {self.E_F!r}")

    @property
    def p(self) -> float:
        return math.sqrt(self.E_F)
