"""Experiment configuration: JSON schema, dotted overrides, problem assembly.

A config file is a JSON object with the sections below; every key is
optional and unknown keys are rejected::

    {
      "seed": 0,
      "graph":    {"kind": "KRegularRandom", "m": 32, "degree": 20, "max_retries": 1000, "file": null},
      "data":     {"example": "LinearRegression", "n": 100, "samples_per_node": 400, ...},
      "engine":   {"nu": 0.2, "transmission_rate": 0.2, "gamma": 1.005, ...},
      "validate": {"eps_trials": 200},
      "sweep":    {"axis": "transmission_rate", "values": [0.1, 0.2], "seeds": [0, 1]}
    }
"""

from __future__ import annotations

import copy
import dataclasses
import json
import os
import re
from pathlib import Path

from pame.engine import Mode, Problem, RunConfig
from pame.errors import ConfigError
from pame.losses import LossKind, LossSpec, gen_linear_regression, gen_logistic, load_datasets
from pame.topology import Graph, GraphKind, build_graph

SEED_ENV = "PAME_SEED"

_ENGINE_DEFAULTS = {
    f.name: f.default
    for f in dataclasses.fields(RunConfig)
    if f.name != "seed"
}
_ENGINE_DEFAULTS["mode"] = Mode.PAME.value

DEFAULTS: dict = {
    "seed": 0,
    "graph": {
        "kind": GraphKind.K_REGULAR_RANDOM.value,
        "m": 32,
        "degree": 20,
        "max_retries": 1000,
        "file": None,
    },
    "data": {
        "example": LossKind.LINEAR_REGRESSION.value,
        "n": 100,
        "samples_per_node": 400,
        "sparsity": None,
        "noise_scale": 0.5,
        "heterogeneous": False,
        "label_skew": None,
        "ridge": 0.001,
        "dir": None,
    },
    "engine": _ENGINE_DEFAULTS,
    "validate": {"eps_trials": 200},
    "sweep": {"axis": "transmission_rate", "values": [0.1, 0.2, 1.0], "seeds": [0, 1, 2, 3, 4]},
}

__all__ = [
    "DEFAULTS",
    "SEED_ENV",
    "apply_override",
    "build_problem",
    "load_config",
    "merge",
    "run_config",
]


def _line_of(text: str | None, key: str) -> str:
    if not text:
        return ""
    match = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if match is None:
        return ""
    return f" (line {text.count(chr(10), 0, match.start()) + 1})"


def merge(base: dict, update: dict, text: str | None = None, prefix: str = "") -> dict:
    """Overlay ``update`` on a deep copy of ``base``, rejecting unknown keys."""
    out = copy.deepcopy(base)
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}{_line_of(text, key)}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object{_line_of(text, key)}")
            out[key] = merge(base[key], value, text, prefix=f"{path}.")
        else:
            out[key] = value
    return out


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(cfg: dict, item: str) -> dict:
    """Apply one ``dotted.key=value`` override; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if len(parts) == 1 and parts[0] in DEFAULTS["engine"] and parts[0] not in DEFAULTS:
        parts = ["engine", parts[0]]
    node = cfg
    for depth, part in enumerate(parts[:-1]):
        if part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"unknown config key {'.'.join(parts[: depth + 1])!r} in override {item!r}")
        node = node[part]
    if parts[-1] not in node or isinstance(node[parts[-1]], dict):
        raise ConfigError(f"unknown config key {'.'.join(parts)!r} in override {item!r}")
    out = copy.deepcopy(cfg)
    target = out
    for part in parts[:-1]:
        target = target[part]
    target[parts[-1]] = _parse_value(raw)
    return out


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | tuple[str, ...] = (),
    env: dict | None = None,
) -> dict:
    """Defaults, then the file, then ``PAME_SEED``, then ``overrides``.

    The result is a complete config: writing it out and loading it again
    reproduces the same run.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(p)!r} does not exist")
        text = p.read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be a JSON object")
        cfg = merge(cfg, doc, text)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from exc
    for item in overrides:
        cfg = apply_override(cfg, item)
    run_config(cfg)
    return cfg


def run_config(cfg: dict, **changes) -> RunConfig:
    """The engine section as a validated ``RunConfig``."""
    engine = dict(cfg["engine"])
    for key in ("kappa", "nu", "s"):
        if isinstance(engine.get(key), list):
            engine[key] = tuple(engine[key])
    engine.update(changes)
    seed = engine.pop("seed", cfg["seed"])
    try:
        return RunConfig(seed=int(seed), **engine)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"engine: {exc}") from exc


def _build_graph(cfg: dict, degree: int | None = None):
    g = cfg["graph"]
    if g["file"]:
        return Graph.load(g["file"])
    kind = GraphKind(g["kind"])
    if degree is None and kind is GraphKind.K_REGULAR_RANDOM:
        degree = g["degree"]
    return build_graph(kind, int(g["m"]), degree, seed=cfg["seed"], max_retries=int(g["max_retries"]))


def build_problem(cfg: dict, degree: int | None = None) -> Problem:
    """Graph and node datasets described by ``cfg``.

    ``degree`` replaces ``graph.degree`` (used by degree sweeps).
    """
    try:
        kind = LossKind(cfg["data"]["example"])
    except ValueError as exc:
        raise ConfigError(f"data.example: {exc}") from exc
    graph = _build_graph(cfg, degree)
    d = cfg["data"]
    spec = LossSpec(kind, ridge=float(d["ridge"]))
    if d["dir"]:
        datasets, truth = load_datasets(d["dir"])
    elif kind is LossKind.LINEAR_REGRESSION:
        extra = {} if d["sparsity"] is None else {"sparsity": float(d["sparsity"])}
        truth, datasets = gen_linear_regression(
            int(d["n"]),
            int(d["samples_per_node"]),
            graph.m,
            seed=cfg["seed"],
            noise_scale=float(d["noise_scale"]),
            heterogeneous=bool(d["heterogeneous"]),
            **extra,
        )
    else:
        extra = {} if d["sparsity"] is None else {"sparsity": float(d["sparsity"])}
        truth, datasets = gen_logistic(
            int(d["n"]),
            int(d["samples_per_node"]),
            graph.m,
            seed=cfg["seed"],
            label_skew=d["label_skew"],
            **extra,
        )
    return Problem(graph=graph, loss=spec, datasets=datasets, truth=truth)
