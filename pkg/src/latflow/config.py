"""JSON config parsing: models, states, observables, samplers, integrators.

The on-disk formats:

model          {"dim_n": n, "sites": [{"id", "mass", "nu"}...],
                "interactions": [{"k", "l", "family", "params"}...], "global_C": c}
state          [{"site", "p": [...], "q": [...]}, ...]
observable     {"projection": <functional or list of functionals>,
                "core": {"family", "params"}}
               where a functional is a list of {"site", "component": "p"|"q",
               "index", "coeff"}; a flat list of coefficient entries denotes a
               single functional.
sampler        {"box", "axis_points", "mc_samples", "seed"}
integrator     {"method", "step", "oracle_tol"}
region         [site, site, ...]
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .cores import ConstCore, ResolventCore, gaussian_core
from .dynamics import IntegratorConfig
from .model import LatticeModel, Region, SampleSpec
from .observables import LinearFunctional, Observable, SmoothCore, SupSampler
from .phase_space import State
from .potentials import potential_from_family
from .thermo import RegionNet, SamplerSettings


class ConfigError(ValueError):
    """A structurally valid JSON document with invalid content."""


def model_from_config(cfg: dict) -> LatticeModel:
    try:
        dim = int(cfg["dim_n"])
        masses = {int(s["id"]): float(s["mass"]) for s in cfg["sites"]}
        nus = {int(s["id"]): float(s["nu"]) for s in cfg["sites"]}
        interactions = {}
        for row in cfg.get("interactions", []):
            k, l = int(row["k"]), int(row["l"])
            spec = potential_from_family(row["family"], dim, row.get("params", {}))
            interactions[(k, l)] = spec
        global_C = float(cfg.get("global_C", float("inf")))
        return LatticeModel(dim, masses, nus, interactions, global_C)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model config: {exc}") from exc


def model_to_config(model: LatticeModel) -> dict:
    return {
        "dim_n": model.dim_n,
        "sites": [{"id": s, "mass": model.mass(s), "nu": model.nu(s)}
                  for s in model.sites()],
        "interactions": [{"k": k, "l": l, "family": spec.family,
                          "params": {kk: vv for kk, vv in spec.params.items()
                                     if isinstance(vv, (int, float, list, str))}}
                         for (k, l), spec in sorted(model.interactions.items())],
        "global_C": model.global_C,
    }


def region_from_config(sites: Sequence) -> Region:
    return Region(tuple(int(s) for s in sites))


def state_from_config(rows: Sequence, dim: int) -> State:
    return State.from_json(dim, rows)


def functional_from_config(entries: Sequence) -> LinearFunctional:
    coeffs = {}
    for e in entries:
        key = (int(e["site"]), str(e["component"]), int(e.get("index", 0)))
        coeffs[key] = coeffs.get(key, 0.0) + float(e.get("coeff", 1.0))
    return LinearFunctional.of(coeffs)


def observable_from_config(cfg: dict) -> Observable:
    proj_cfg = cfg.get("projection", [])
    if proj_cfg and isinstance(proj_cfg[0], dict):
        functionals = [functional_from_config(proj_cfg)]
    else:
        functionals = [functional_from_config(f) for f in proj_cfg]
    core_cfg = cfg["core"]
    family = core_cfg["family"]
    params = core_cfg.get("params", {})
    arity = len(functionals)
    if family == "gaussian":
        core = SmoothCore(gaussian_core(arity, params.get("widths"),
                                        amplitude=params.get("amplitude", 1.0)))
    elif family == "resolvent":
        if arity != 1:
            raise ConfigError("resolvent core requires exactly one functional")
        core = SmoothCore(ResolventCore(float(params["lam"]), arity=1))
    elif family == "constant":
        if arity != 0:
            raise ConfigError("constant core requires an empty projection")
        val = params.get("value", 1.0)
        if isinstance(val, (list, tuple)):
            val = complex(val[0], val[1])
        core = SmoothCore(ConstCore(val, 0))
    else:
        raise ConfigError(f"unknown observable core family '{family}'")
    return Observable(tuple(functionals), core)


def integrator_from_config(cfg: dict | None) -> IntegratorConfig:
    cfg = cfg or {}
    return IntegratorConfig(method=cfg.get("method", "strang_splitting"),
                            step=float(cfg.get("step", 1e-3)),
                            oracle_tol=float(cfg.get("oracle_tol", 1e-10)))


def sampler_from_config(cfg: dict | None, seed: int) -> SamplerSettings:
    cfg = cfg or {}
    return SamplerSettings(box=float(cfg.get("box", 6.0)),
                           axis_points=int(cfg.get("axis_points", 17)),
                           mc_samples=int(cfg.get("mc_samples", 256)),
                           seed=int(cfg.get("seed", seed)))


def sample_spec_from_config(cfg: dict | None, seed: int) -> SampleSpec:
    cfg = cfg or {}
    return SampleSpec(box_radius=float(cfg.get("box_radius", 4.0)),
                      samples=int(cfg.get("samples", 1024)),
                      seed=int(cfg.get("seed", seed)),
                      decay_tol=float(cfg.get("decay_tol", 1e-6)))


def net_from_config(cfg: Sequence) -> RegionNet:
    return RegionNet(tuple(region_from_config(r) for r in cfg))
