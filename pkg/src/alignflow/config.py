"""Scenario configuration: parsing, schema checks with line numbers, defaults."""
from __future__ import annotations

import copy
import hashlib
import json
import re
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .kernels import from_spec
from .particles import dt_max

_NUMBER = re.compile(r"-?(?:0|[1-9]\d*)(?:\.\d+)?(?:[eE][-+]?\d+)?")


def load_schema() -> dict:
    text = resources.files("alignflow").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def _value_lines(text: str) -> dict:
    """Map each JSON path (tuple of keys/indices) to the line its value starts on."""
    lines = {}
    pos = 0

    def ws():
        nonlocal pos
        while pos < len(text) and text[pos] in " \t\r\n":
            pos += 1

    def line_of(p):
        return text.count("\n", 0, p) + 1

    def value(path):
        nonlocal pos
        ws()
        lines[path] = line_of(pos)
        ch = text[pos]
        if ch == "{":
            pos += 1
            ws()
            if text[pos] == "}":
                pos += 1
                return
            while True:
                ws()
                key, pos = json.decoder.scanstring(text, pos + 1)
                ws()
                pos += 1  # colon
                value(path + (key,))
                ws()
                if text[pos] == ",":
                    pos += 1
                    continue
                pos += 1
                return
        if ch == "[":
            pos += 1
            ws()
            if text[pos] == "]":
                pos += 1
                return
            i = 0
            while True:
                value(path + (i,))
                i += 1
                ws()
                if text[pos] == ",":
                    pos += 1
                    continue
                pos += 1
                return
        if ch == '"':
            _, pos = json.decoder.scanstring(text, pos + 1)
            return
        for lit in ("true", "false", "null"):
            if text.startswith(lit, pos):
                pos += len(lit)
                return
        m = _NUMBER.match(text, pos)
        pos = m.end()

    value(())
    return lines


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse and schema-check a scenario; errors carry ``source:line``."""
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        lines = _value_lines(text)
        msgs = []
        for err in errors:
            path = tuple(err.absolute_path)
            while path not in lines and path:
                path = path[:-1]
            where = "/".join(map(str, err.absolute_path)) or "<root>"
            msgs.append(f"{source}:{lines.get(path, 1)}: {where}: {err.message}")
        raise ConfigError("\n".join(msgs))
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError:
        raise
    return parse_config(text, str(path))


_PARTICLE_DEFAULTS = {"dt": 1e-3, "t_end": 1.0, "record_every": 10, "scheme": "rk4",
                      "formulation": "velocity_u"}


def resolve(cfg: dict, seed: int | None = None) -> dict:
    """Fill defaults and check cross-field constraints; returns a new dict.

    The output directory is not part of the resolved config so that reruns
    into different directories produce identical manifests.
    """
    cfg = copy.deepcopy(cfg)
    cfg.pop("output_dir", None)
    if seed is not None:
        cfg["seed"] = int(seed)
    mode = cfg["mode"]
    cfg.setdefault("description", "")
    if mode == "metrics":
        if "metrics" not in cfg:
            raise ConfigError("mode 'metrics' needs a 'metrics' block with measures 'a' and 'b'")
        return cfg
    cfg.setdefault("kernel", {"name": "quadratic", "params": {}, "dim": 1})
    cfg["kernel"].setdefault("params", {})
    cfg["kernel"].setdefault("dim", 1)
    k = from_spec(cfg["kernel"])
    if mode == "particles":
        init = cfg.setdefault("initial", {})
        init.setdefault("generator", "uniform")
        if init["generator"] != "explicit":
            init.setdefault("n", 16)
            if "seed" not in cfg:
                raise ConfigError(f"generator '{init['generator']}' is random; a 'seed' is required")
        integ = cfg.setdefault("integrator", {})
        for key, val in _PARTICLE_DEFAULTS.items():
            integ.setdefault(key, val)
        if integ["dt"] is None or integ["dt"] > dt_max(k) * (1 + 1e-12):
            raise ConfigError(f"integrator.dt={integ['dt']} exceeds the stability guard {dt_max(k)}")
    elif mode in ("grid", "vanishing_viscosity"):
        if k.dim != 1:
            raise ConfigError("grid modes need a 1D kernel")
        init = cfg.setdefault("initial", {})
        init.setdefault("profile", "gaussian_bump_density")
        init.setdefault("params", {})
        init.setdefault("L", 8.0)
        init.setdefault("M", 256)
        init.setdefault("inv_N", 0.01)
        init.setdefault("rho_floor", None)
        integ = cfg.setdefault("integrator", {})
        integ.setdefault("t_end", 1.0)
        integ.setdefault("record_every", 10)
        integ.setdefault("cfl", 0.4)
        integ.setdefault("dt", None)
        if mode == "vanishing_viscosity":
            study = cfg.get("study")
            if study is None:
                raise ConfigError("mode 'vanishing_viscosity' needs a 'study' block")
            study.setdefault("reference", "inviscid")
            study.setdefault("n_reference_particles", 256)
    elif mode == "stability":
        if cfg["kernel"]["name"] != "quadratic" or k.dim != 1:
            raise ConfigError("stability mode uses the exact 1D quadratic-kernel strong solution")
        st = cfg.get("stability")
        if st is None:
            raise ConfigError("mode 'stability' needs a 'stability' block")
        for key, val in {"n": 200, "t_end": 1.0, "dt": 1e-3, "record_every": 50,
                         "perturbation": "velocity", "r0": {"kind": "uniform", "a": -1.0, "b": 1.0},
                         "v0": {"kind": "tanh", "amplitude": 0.5}, "c0": 16.0,
                         "C_v": 16.0, "C_T": 16.0, "C_m": 16.0}.items():
            st.setdefault(key, val)
        if st["dt"] > dt_max(k):
            raise ConfigError(f"stability.dt exceeds the stability guard {dt_max(k)}")
    return cfg


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]
