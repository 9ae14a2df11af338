"""Experiment configuration: function-string parsing, defaults and validation."""
from __future__ import annotations

import copy
import json
import re
from typing import Any

from .dimfun import (ApproxFunction, Clamped, DimensionFunction, DomainError, MultiApproxFunction,
                     PowerLaw, Table, Zero)
from .diophantine import Partition, SceneConfig

COMMANDS = ("predict", "classify", "witnesses", "measure", "boxdim", "transfer-check",
            "mtp-build", "mtp-verify")


class ConfigError(ValueError):
    """Invalid configuration; ``where`` is the dotted key path of the offending entry."""

    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def _kv(body: str, where: str, allowed: set[str]) -> dict[str, str]:
    out = {}
    for tok in body.split():
        if "=" not in tok:
            raise ConfigError(where, f"expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        if key not in allowed:
            raise ConfigError(where, f"unknown key {key!r}")
        out[key] = val
    return out


def _num(val: str, where: str) -> float:
    if not re.fullmatch(_NUM, val):
        raise ConfigError(where, f"not a number: {val!r}")
    return float(val)


def parse_approx(text: str, where: str = "psi") -> ApproxFunction:
    """'powerlaw c=1 tau=3', 'zero', 'table default=0 values=1:0.5,2:0.25', 'clamped cap=1 (...)'."""
    if not isinstance(text, str):
        raise ConfigError(where, "function description must be a string")
    s = text.strip()
    try:
        if s == "zero":
            return Zero()
        if s.startswith("powerlaw"):
            kv = _kv(s[len("powerlaw"):], where, {"c", "tau"})
            return PowerLaw(_num(kv.get("c", "1"), where), _num(kv["tau"], where))
        if s.startswith("table"):
            kv = _kv(s[len("table"):], where, {"default", "values"})
            pairs = []
            for item in filter(None, kv.get("values", "").split(",")):
                q, _, v = item.partition(":")
                if not q.isdigit():
                    raise ConfigError(where, f"bad table key {q!r}")
                pairs.append((int(q), _num(v, where)))
            return Table.from_pairs(pairs, _num(kv.get("default", "0"), where))
        m = re.fullmatch(r"clamped\s+cap=(\S+)\s*\((.*)\)", s)
        if m:
            return Clamped(parse_approx(m.group(2), where), _num(m.group(1), where))
    except KeyError as exc:
        raise ConfigError(where, f"missing key {exc.args[0]!r}") from None
    except DomainError as exc:
        raise ConfigError(where, str(exc)) from None
    raise ConfigError(where, f"unrecognised function description {text!r}")


def parse_dimfun(text: str, where: str = "f") -> DimensionFunction:
    """'dimfun c=1 s=1.75 a=0' with optional 'rcap=...'."""
    if not isinstance(text, str) or not text.strip().startswith("dimfun"):
        raise ConfigError(where, f"expected 'dimfun c=.. s=.. a=..', got {text!r}")
    kv = _kv(text.strip()[len("dimfun"):], where, {"c", "s", "a", "rcap"})
    if "s" not in kv:
        raise ConfigError(where, "missing key 's'")
    try:
        args = [_num(kv.get("c", "1"), where), _num(kv["s"], where), _num(kv.get("a", "0"), where)]
        if "rcap" in kv:
            args.append(_num(kv["rcap"], where))
        return DimensionFunction(*args)
    except DomainError as exc:
        raise ConfigError(where, str(exc)) from None


def parse_partition(text: str | None, d: int, where: str = "scene.partition") -> Partition | None:
    """Blocks of 1-based indices: '1,2;3,4'."""
    if text in (None, ""):
        return None
    try:
        blocks = [tuple(int(v) for v in b.split(",")) for b in text.split(";")]
        return Partition(d, tuple(blocks))
    except (ValueError, DomainError) as exc:
        raise ConfigError(where, str(exc)) from None


DEFAULTS: dict[str, Any] = {
    "command": None,
    "scene": {"n": 1, "m": 1, "psi": "powerlaw c=1 tau=1", "y": None, "Phi": None, "partition": None,
              "norm": "column", "mask": False},
    "f": None,
    "truncation": {"Q": 100, "G": 1, "J_max": None},
    "estimator": {"N": 4000, "seed": 0, "grid": 12, "schedule": None, "lower": "shell", "samples": 20000,
                  "x": None, "q_max": 10000},
    "engine": {"scene": "dyadic", "k": 1, "eta": 10.0, "depth": 2, "G_res": 10, "overrides": {},
               "max_sublevels": 64, "max_balls": 2000000, "samples": 1000, "seeds": [0, 1, 2], "tree": None},
    "output": {"dir": "out"},
}


def _merge(base: dict, extra: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        path = f"{where}.{key}" if where else key
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict) and key != "overrides":
            if not isinstance(val, dict):
                raise ConfigError(path, "expected a table of keys")
            out[key] = _merge(base[key], val, path)
        else:
            out[key] = val
    return out


def load_config(data: dict | str) -> dict:
    """Fill defaults and validate; the result echoes every setting explicitly."""
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}", exc.msg) from None
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a table")
    cfg = _merge(DEFAULTS, data, "")
    if cfg["command"] not in COMMANDS:
        raise ConfigError("command", f"must be one of {', '.join(COMMANDS)}")
    sc = cfg["scene"]
    for key in ("n", "m"):
        if not isinstance(sc[key], int) or sc[key] < 1:
            raise ConfigError(f"scene.{key}", "must be a positive integer")
    parse_approx(sc["psi"], "scene.psi")
    parse_partition(sc["partition"], sc["n"] + sc["m"])
    if cfg["f"] is not None:
        parse_dimfun(cfg["f"], "f")
    for key in ("Q", "G"):
        if not isinstance(cfg["truncation"][key], int) or cfg["truncation"][key] < 0:
            raise ConfigError(f"truncation.{key}", "must be a non-negative integer")
    est = cfg["estimator"]
    if not isinstance(est["seed"], int) or est["seed"] < 0:
        raise ConfigError("estimator.seed", "must be a non-negative integer")
    if not isinstance(est["N"], int) or est["N"] < 1:
        raise ConfigError("estimator.N", "must be a positive integer")
    eng = cfg["engine"]
    if eng["scene"] not in ("dyadic", "diophantine"):
        raise ConfigError("engine.scene", "must be 'dyadic' or 'diophantine'")
    if not isinstance(eng["depth"], int) or eng["depth"] < 1:
        raise ConfigError("engine.depth", "must be a positive integer")
    return cfg


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, indent=2) + "\n"


def scene_config(cfg: dict) -> SceneConfig:
    sc = cfg["scene"]
    n, m = sc["n"], sc["m"]
    psi = parse_approx(sc["psi"], "scene.psi")
    part = parse_partition(sc["partition"], n + m)
    if sc["mask"]:
        psi = MultiApproxFunction(psi, part)
    try:
        return SceneConfig(n, m, psi, sc["y"], sc["Phi"], part, sc["norm"])
    except DomainError as exc:
        raise ConfigError("scene", str(exc)) from None
