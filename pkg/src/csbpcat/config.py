"""Model files (YAML or JSON).

Either ``environment`` + ``mechanism`` or a ``cell`` block::

    environment:
      drift: 0.1                  # optional, must agree with mechanism.g
      atoms: [{m: 0.5, rate: 1.0}]
      components: [{family: beta, params: {a: 2, b: 2}, rate: 1.0}]
    mechanism:
      kind: stable                # or general
      g: 0.1
      c_plus: 1.0
      beta: 1.0
      # general: sigma2, mu_atoms: [{z, rate}], mu_density: {family, params, rate}
    x0: 1.0

    cell:
      g: 1.8
      sigma2: 1.0
      r: 1.0
      theta: {law: two_point, theta: 0.25}   # or {law: beta, a: 2, b: 2}
      biased: true
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import yaml

from .cellmodel import BetaTheta, CellModel, TwoPointTheta, to_environment
from .env import Atom, EnvironmentSpec, make_component
from .mechanisms import GeneralMechanism, MuDensity, StableMechanism

__all__ = ["ConfigError", "Model", "load_model", "parse_model"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Model:
    spec: EnvironmentSpec
    mech: StableMechanism | GeneralMechanism
    x0: float
    cell: CellModel | None
    raw: dict

    @property
    def g(self) -> float:
        return self.mech.g


def _num(block: dict, key: str, where: str, default=None) -> float:
    if key not in block:
        if default is None:
            raise ConfigError(f"{where}: missing key {key!r}")
        return float(default)
    try:
        return float(block[key])
    except (TypeError, ValueError):
        raise ConfigError(f"{where}.{key}: expected a number, got {block[key]!r}") from None


def _check_keys(block, allowed: set, where: str) -> None:
    if not isinstance(block, dict):
        raise ConfigError(f"{where}: expected a mapping")
    extra = set(block) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")


def _mechanism(block: dict) -> StableMechanism | GeneralMechanism:
    kind = block.get("kind", "stable")
    if kind == "stable":
        _check_keys(block, {"kind", "g", "c_plus", "beta"}, "mechanism")
        return StableMechanism(_num(block, "g", "mechanism"), _num(block, "c_plus", "mechanism"),
                               _num(block, "beta", "mechanism", 1.0))
    if kind == "general":
        _check_keys(block, {"kind", "g", "sigma2", "mu_atoms", "mu_density"}, "mechanism")
        atoms = tuple((_num(a, "z", "mechanism.mu_atoms"), _num(a, "rate", "mechanism.mu_atoms"))
                      for a in block.get("mu_atoms") or [])
        dens = None
        if block.get("mu_density"):
            d = block["mu_density"]
            _check_keys(d, {"family", "params", "rate"}, "mechanism.mu_density")
            dens = MuDensity(str(d.get("family")), dict(d.get("params") or {}),
                             _num(d, "rate", "mechanism.mu_density"))
        return GeneralMechanism(_num(block, "g", "mechanism"),
                                _num(block, "sigma2", "mechanism", 0.0), atoms, dens)
    raise ConfigError(f"mechanism.kind must be 'stable' or 'general', got {kind!r}")


def _environment(block: dict, g: float) -> EnvironmentSpec:
    _check_keys(block, {"drift", "atoms", "components"}, "environment")
    if "drift" in block and abs(_num(block, "drift", "environment") - g) > 1e-12 * max(1.0, abs(g)):
        raise ConfigError(f"environment.drift={block['drift']} contradicts mechanism.g={g}")
    atoms = []
    for a in block.get("atoms") or []:
        _check_keys(a, {"m", "rate"}, "environment.atoms")
        atoms.append(Atom(_num(a, "m", "environment.atoms"), _num(a, "rate", "environment.atoms")))
    comps = []
    for c in block.get("components") or []:
        _check_keys(c, {"family", "params", "rate"}, "environment.components")
        comps.append(make_component(str(c.get("family")), dict(c.get("params") or {}),
                                    _num(c, "rate", "environment.components")))
    return EnvironmentSpec(g, tuple(atoms), tuple(comps))


def _cell(block: dict) -> tuple[CellModel, bool]:
    _check_keys(block, {"g", "sigma2", "r", "theta", "biased"}, "cell")
    th = block.get("theta")
    if not isinstance(th, dict):
        raise ConfigError("cell.theta: expected a mapping with a 'law' key")
    law = th.get("law")
    if law == "two_point":
        theta = TwoPointTheta(_num(th, "theta", "cell.theta"))
    elif law == "beta":
        theta = BetaTheta(_num(th, "a", "cell.theta"), _num(th, "b", "cell.theta"))
    else:
        raise ConfigError(f"cell.theta.law must be 'two_point' or 'beta', got {law!r}")
    model = CellModel(_num(block, "g", "cell"), _num(block, "sigma2", "cell"),
                      _num(block, "r", "cell"), theta)
    return model, bool(block.get("biased", True))


def parse_model(raw) -> Model:
    if not raw:
        raise ConfigError("empty configuration")
    _check_keys(raw, {"environment", "mechanism", "cell", "x0"}, "config")
    x0 = _num(raw, "x0", "config", 1.0)
    if not x0 > 0:
        raise ConfigError("x0 must be positive")
    try:
        if "cell" in raw:
            if "environment" in raw or "mechanism" in raw:
                raise ConfigError("a cell block cannot be combined with environment/mechanism")
            cell, biased = _cell(raw["cell"])
            spec, mech = to_environment(cell, biased)
            return Model(spec, mech, x0, cell, raw)
        if "mechanism" not in raw:
            raise ConfigError("config needs a 'mechanism' (or a 'cell') block")
        _check_keys(raw["mechanism"], set(raw["mechanism"]), "mechanism")
        mech = _mechanism(raw["mechanism"])
        spec = _environment(raw.get("environment") or {}, mech.g)
        return Model(spec, mech, x0, None, raw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def load_model(path) -> Model:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return parse_model(raw)
