"""Command-line front end.

    pumpline <bands|chern|winding|scatter|pump|compare> [--config FILE] [--preset NAME]
             [--override key=value ...] [--out DIR]

Exit codes: 0 success, 1 configuration error, 2 gap closure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np
import yaml

from . import __version__
from .bands import band_table, certify_gap, common_gap
from .chern import chern_numbers
from .errors import ConfigError, PumplineError
from .gapstates import gap_states, node_tracks, phase_loop
from .potential import POTENTIAL_SCHEMA, FermiPoint, _parse_text, load_spec, schema_error
from .scattering import convergence_study, s_matrix_closed_form
from .transport import DEFAULT_N_LIST, Grids, charge_variance, compare, pumped_charge, s_loop

PRESET_GAP = {"sliding_cosine": 1, "two_harmonic_pump": 2, "static_cosine": 1, "constant_barrier": 0}

RUN_SCHEMA = {
    "type": "object",
    "properties": {
        "potential": POTENTIAL_SCHEMA,
        "E_F": {"type": "number", "exclusiveMinimum": 0},
        "n_filled": {"type": "integer", "minimum": 0},
        "N_list": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "grids": {
            "type": "object",
            "properties": {
                "n_s": {"type": "integer", "minimum": 16, "multipleOf": 4},
                "N_k": {"type": "integer", "minimum": 4},
                "N_s": {"type": "integer", "minimum": 4},
                "M_pw": {"type": "integer", "minimum": 2},
                "n_steps": {"type": "integer", "minimum": 16, "multipleOf": 2},
                "n_s_cert": {"type": "integer", "minimum": 16},
            },
            "additionalProperties": False,
        },
        "output_dir": {"type": "string"},
        "seed": {"type": "integer"},
    },
    "required": ["potential", "E_F"],
    "additionalProperties": False,
}


# ---------------------------------------------------------------------------
# deterministic output

def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj: Any, indent: int = 0) -> str:
    """JSON with sorted keys and every real printed with 17 significant digits."""
    obj = _plain(obj)
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {dumps(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, obj: Any) -> None:
    path.write_text(dumps(obj) + "\n")


def write_csv(path: Path, rows: list[dict], header: list[str]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        vals = []
        for k in header:
            v = _plain(row[k])
            vals.append("" if v is None else _fmt(v) if isinstance(v, float) else v)
        w.writerow(vals)
    path.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# configuration

def _set_path(doc: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    node = doc
    for p in parts[:-1]:
        if not isinstance(node.get(p, {}), dict):
            raise ConfigError(f"override '{key}': '{p}' is not a mapping")
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    doc = copy.deepcopy(doc)
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override '{item}': {exc}") from None
        _set_path(doc, key.strip(), value)
    return doc


def default_fermi_energy(potential_doc: dict) -> float:
    """Middle of the preset's working gap along the whole cycle."""
    spec = load_spec(potential_doc)
    n = PRESET_GAP.get(potential_doc.get("preset"), 1)
    top, bottom = common_gap(spec, n)
    if n == 0:
        if bottom <= 0:
            raise ConfigError("no positive energy below the lowest band; set E_F explicitly")
        return 0.5 * bottom
    return 0.5 * (top + bottom)


def build_config(config_path: str | None, preset: str | None, overrides: list[str]) -> dict:
    doc: dict = {}
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        doc = _parse_text(text)
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
    if preset:
        pot = dict(doc.get("potential", {}))
        pot = {k: v for k, v in pot.items() if k in ("L", "T", "params")}
        pot["preset"] = preset
        doc["potential"] = pot
    if not doc:
        raise ConfigError("either --config or --preset is required")
    doc = apply_overrides(doc, overrides)
    if preset and "E_F" not in doc and isinstance(doc.get("potential"), dict):
        try:
            jsonschema.validate(doc["potential"], POTENTIAL_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise schema_error(exc, "potential: ") from None
        doc["E_F"] = default_fermi_energy(doc["potential"])
    try:
        jsonschema.validate(doc, RUN_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise schema_error(exc) from None
    N_list = doc.get("N_list", list(DEFAULT_N_LIST))
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ConfigError("invalid value for key 'N_list': must be strictly ascending")
    doc["N_list"] = N_list
    return doc


class Run:
    def __init__(self, doc: dict, out: str | None):
        self.doc = doc
        self.spec = load_spec(doc["potential"])
        self.fermi = FermiPoint(float(doc["E_F"]))
        try:
            self.grids = Grids(**doc.get("grids", {}))
        except ValueError as exc:
            raise ConfigError(f"invalid value in 'grids': {exc}") from None
        if self.grids.M_pw < self.spec.max_harmonic + 2:
            raise ConfigError(f"invalid value for key 'grids.M_pw': must be >= {self.spec.max_harmonic + 2}")
        self.N_list = doc["N_list"]
        self.seed = doc.get("seed")
        self.out = Path(out or doc.get("output_dir", "."))
        self.out.mkdir(parents=True, exist_ok=True)

    def certify(self):
        return certify_gap(self.spec, self.fermi.E_F, self.grids.n_s_cert, n_steps=self.grids.n_steps)

    def n_filled(self, cert) -> int:
        n = self.doc.get("n_filled", cert.n)
        if n != cert.n:
            raise ConfigError(f"n_filled={n} but E_F={self.fermi.E_F} lies in gap {cert.n}")
        return n


# ---------------------------------------------------------------------------
# subcommands

def cmd_bands(run: Run) -> dict:
    cert = run.certify()
    rows = band_table(run.spec, max(cert.n + 1, 3), n_s=16, n_steps=run.grids.n_steps)
    write_csv(run.out / "bands.csv", rows, ["n", "s", "E_minus", "E_plus"])
    write_json(run.out / "certificate.json", cert.to_dict())
    return cert.to_dict()


def cmd_chern(run: Run) -> dict:
    cert = run.certify()
    n = run.n_filled(cert)
    g = run.grids
    if n == 0:
        result = {"per_band": [], "total": 0, "plaquette_residual": 0.0, "integer_residual": 0.0,
                  "stable": True}
    else:
        base = chern_numbers(run.spec, n, g.N_k, g.N_s, g.M_pw, cert=cert)
        doubled = chern_numbers(run.spec, n, 2 * g.N_k, 2 * g.N_s, g.M_pw, cert=cert)
        more_pw = chern_numbers(run.spec, n, g.N_k, g.N_s, g.M_pw + 4, cert=cert)
        result = base.to_dict()
        result["stable"] = base.per_band == doubled.per_band == more_pw.per_band
        result["doubled_grid"] = doubled.to_dict()
        result["larger_cutoff"] = more_pw.to_dict()
    result["grid"] = {"N_k": g.N_k, "N_s": g.N_s, "M_pw": g.M_pw}
    result["n_filled"] = n
    write_json(run.out / "chern.json", result)
    return result


def cmd_winding(run: Run) -> dict:
    cert = run.certify()
    track = phase_loop(run.spec, run.fermi, cert, n_steps=run.grids.n_steps)
    nodes = node_tracks(run.spec, run.fermi, cert, n_steps=run.grids.n_steps)
    result = {"winding_u_minus": track.winding, "node_count": nodes.count,
              "crossings": [list(c) for c in nodes.crossings], "n_s_phase": int(track.s_samples.size),
              "max_step_arg": track.max_step_arg, "rounding_residual": track.rounding_residual}
    write_csv(run.out / "u_minus.csv", track.rows(), ["s", "Re_u", "Im_u"])
    write_json(run.out / "winding.json", result)
    return result


def cmd_scatter(run: Run) -> dict:
    cert = run.certify()
    s = np.arange(run.grids.n_s) * run.spec.T / run.grids.n_s
    gaps = gap_states(run.spec, run.fermi, cert, s, run.grids.n_steps)
    rows = []
    for N in run.N_list:
        for g in gaps:
            m = s_matrix_closed_form(g, run.fermi, N, run.spec.L)
            rows.append({"N": N, "s": g.s, "abs_r": abs(m.r), "arg_r": math.atan2(m.r.imag, m.r.real),
                         "abs_t": abs(m.t), "dev_r": abs(m.r + g.u_minus),
                         "unitarity": m.unitarity_residual()})
    write_csv(run.out / "scatter.csv", rows, ["N", "s", "abs_r", "arg_r", "abs_t", "dev_r", "unitarity"])
    study = convergence_study(run.spec, run.fermi, cert, run.N_list, s, run.grids.n_steps)
    write_csv(run.out / "convergence.csv", study.rows,
              ["N", "max_dev_r", "max_abs_t", "mean_log_dev_r", "mean_log_abs_t"])
    result = study.to_dict()
    write_json(run.out / "convergence.json", result)
    return result


def cmd_pump(run: Run) -> dict:
    cert = run.certify()
    s = np.linspace(0.0, run.spec.T, run.grids.n_s + 1)
    gaps = gap_states(run.spec, run.fermi, cert, s, run.grids.n_steps)
    rows = []
    for N in run.N_list:
        loop = s_loop(gaps, run.fermi, N, run.spec.L)
        q = pumped_charge(loop)
        rows.append({"N": N, "Q1": q.value, "Q1_error": q.error_estimate,
                     "varQ1": charge_variance(loop, run.spec.T)})
    limit = s_loop(gaps, run.fermi, None, run.spec.L)
    result = {"series": rows, "Q1_limit": pumped_charge(limit).value,
              "varQ1_limit": charge_variance(limit, run.spec.T)}
    write_csv(run.out / "pump.csv", rows, ["N", "Q1", "Q1_error", "varQ1"])
    write_json(run.out / "pump.json", result)
    return result


def cmd_compare(run: Run) -> dict:
    cert = run.certify()
    report = compare(run.spec, run.fermi, run.n_filled(cert), run.N_list, run.grids, seed=run.seed)
    result = report.to_dict()
    conv = {r["N"]: r for r in report.convergence.get("rows", [])}
    rows = [{"N": N, "Q1": q, "varQ1": v, "max_dev_r": conv.get(N, {}).get("max_dev_r"),
             "max_abs_t": conv.get(N, {}).get("max_abs_t")}
            for (N, q), (_, v) in zip(report.Q1_of_N, report.varQ1_of_N)]
    write_csv(run.out / "series.csv", rows, ["N", "Q1", "varQ1", "max_dev_r", "max_abs_t"])
    write_json(run.out / "report.json", result)
    return result


COMMANDS = {
    "bands": (cmd_bands, "band edges along the cycle and the gap certificate at E_F"),
    "chern": (cmd_chern, "lattice Chern numbers of the filled bands, with a stability check"),
    "winding": (cmd_winding, "winding of u_minus and signed node count"),
    "scatter": (cmd_scatter, "truncated-pump scattering matrices and their convergence"),
    "pump": (cmd_pump, "pumped charge and variance versus N"),
    "compare": (cmd_compare, "full comparison of all routes to the pumped charge"),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pumpline", description="Adiabatic charge pumping in 1D periodic potentials.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON or YAML run configuration")
        sp.add_argument("--preset", help="named potential; E_F defaults to the middle of its working gap")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a dotted config key, e.g. grids.n_s=128 (repeatable)")
        sp.add_argument("--out", help="output directory (default: config output_dir or .)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        doc = build_config(args.config, args.preset, args.override)
        run = Run(doc, args.out)
        result = COMMANDS[args.command][0](run)
    except PumplineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    summary = {k: result[k] for k in ("n", "total", "winding_u_minus", "node_count", "identity_verdict",
                                        "Q1_limit", "rate_r") if k in result}
    print(dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
