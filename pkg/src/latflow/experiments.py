"""Experiment kinds: the dispatch layer shared by the HTTP service and the CLI.

Each runner takes (model, params, seed, workers) and returns a dict of
artifact filename -> text content. CSV payloads are byte-stable for a fixed
seed: floats are written in shortest round-trip decimal form and all sampling
is seeded. Every run also produces a manifest echoing the resolved spec.
"""

from __future__ import annotations

import io
import json
import math
import time

import numpy as np

from . import __version__
from .config import (ConfigError, integrator_from_config, model_from_config,
                     net_from_config, observable_from_config, region_from_config,
                     sample_spec_from_config, sampler_from_config,
                     state_from_config)
from .dynamics import (IntegratorConfig, energy, estimate_D, flow, flow_gap,
                       occupation_fraction)
from .dyson import (DysonConfig, c0_constant, dyson_radius, gamma_direct,
                    gamma_truncated, tail_bound)
from .model import (GridSpec, LatticeModel, Region, SampleSpec,
                    interaction_constant, mollify, validate_assumptions)
from .observables import SupSampler, grad_sup_estimate, sup_distance
from .phase_space import State, StateBatch
from .potentials import potential_from_family
from .thermo import RegionNet, convergence_sweep, strong_continuity_probe

KINDS = ("validate", "simulate", "occupation", "flow_gap", "estimate_D",
         "dyson_compare", "thermo_sweep", "continuity", "mollify_study")


class ValidationFailure(Exception):
    def __init__(self, report):
        super().__init__("model failed assumption validation")
        self.report = report


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(x) for x in row) + "\n")
    return buf.getvalue()


def _json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _region_or_all(model: LatticeModel, params: dict, key: str = "region") -> Region:
    if key in params and params[key] is not None:
        return region_from_config(params[key])
    return model.sites()


def _pairs_or_all(model: LatticeModel, region: Region, params: dict):
    pairs = params.get("pairs", "all")
    if pairs == "all" or pairs is None:
        return model.pairs_within(region)
    return tuple((int(k), int(l)) for k, l in pairs)


# ---------------------------------------------------------------------------
# kind runners
# ---------------------------------------------------------------------------

def _run_validate(model, params, seed, workers):
    region = _region_or_all(model, params)
    spec = sample_spec_from_config(params.get("sample"), seed)
    report = validate_assumptions(model, region, spec)
    payload = report.to_json()
    payload["sample"] = {"box_radius": spec.box_radius, "samples": spec.samples,
                         "seed": spec.seed, "decay_tol": spec.decay_tol}
    payload["region"] = list(region)
    return {"report.json": _json(payload)}, report.passed


def _run_simulate(model, params, seed, workers):
    region = _region_or_all(model, params)
    pairs = _pairs_or_all(model, region, params)
    state = state_from_config(params["state"], model.dim_n)
    t_final = float(params["t_final"])
    record_dt = float(params.get("record_dt", t_final / 100.0 if t_final else 1.0))
    cfg = integrator_from_config(params.get("integrator"))
    n = model.dim_n
    header = (["t", "site"] + [f"p{i}" for i in range(n)]
              + [f"q{i}" for i in range(n)] + ["energy"])
    rows = []
    steps = max(1, int(round(t_final / record_dt))) if t_final else 0
    cur = state
    times = [0.0] + [record_dt * (i + 1) for i in range(steps)]
    for idx, t in enumerate(times):
        if idx:
            cur = flow(model, region, pairs, cur, times[idx] - times[idx - 1], cfg)
        e = energy(model, region, pairs, cur)
        for site in region:
            rows.append([t, site] + list(cur.p(site)) + list(cur.q(site)) + [e])
    return {"trajectory.csv": _csv(header, rows)}


def _run_occupation(model, params, seed, workers):
    k, l = int(params["k"]), int(params["l"])
    state = state_from_config(params["state"], model.dim_n)
    R = float(params["R"])
    samples = int(params.get("samples", 4096))
    frac = occupation_fraction(model, k, l, state, R, samples)
    return {"occupation.json": _json({"k": k, "l": l, "R": R, "samples": samples,
                                      "fraction": frac, "seed": seed})}


def _run_flow_gap(model, params, seed, workers):
    region = _region_or_all(model, params)
    pairs = _pairs_or_all(model, region, params)
    drop = tuple(int(s) for s in params["drop"])
    t = float(params["t"])
    cfg = integrator_from_config(params.get("integrator"))
    rows = []
    if "separations" in params:
        for s in params["separations"]:
            s = float(s)
            q = np.zeros(model.dim_n)
            q[0] = s / 2.0
            state = State.of(model.dim_n, {drop[0]: (np.zeros(model.dim_n), q),
                                           drop[1]: (np.zeros(model.dim_n), -q)})
            rep = flow_gap(model, region, pairs, drop, state, t, cfg)
            rows.append([s, rep.gap, rep.rel_separation, rep.occupation])
    else:
        for i, st in enumerate(params["states"]):
            state = state_from_config(st, model.dim_n)
            rep = flow_gap(model, region, pairs, drop, state, t, cfg)
            rows.append([float(i), rep.gap, rep.rel_separation, rep.occupation])
    return {"flow_gap.csv": _csv(["separation", "gap", "rel_separation",
                                  "occupation"], rows)}


def _run_estimate_d(model, params, seed, workers):
    k, l = int(params["k"]), int(params["l"])
    R = float(params["R"])
    eps = float(params["eps"])
    nd = int(params.get("direction_samples", 64))
    occ_samples = int(params.get("occupation_samples", 4096))
    D = estimate_D(model, k, l, R, eps, nd, seed=seed,
                   occupation_samples=occ_samples)
    from .dynamics import _direction_states, _scale_state
    dirs = _direction_states(model, k, l, nd, seed)
    worst_at = {}
    for label, scale in (("at_D", D), ("at_2D", 2.0 * D)):
        if scale > 0:
            worst_at[label] = max(occupation_fraction(model, k, l,
                                                      _scale_state(d, scale), R,
                                                      occ_samples) for d in dirs)
        else:
            worst_at[label] = None
    return {"estimate_d.json": _json({"k": k, "l": l, "R": R, "eps": eps,
                                      "direction_samples": nd, "seed": seed,
                                      "D": D, "worst_occupation": worst_at})}


def _dyson_states(model, region, count, box, seed):
    rng = np.random.default_rng(seed)
    states = []
    n = model.dim_n
    for _ in range(count):
        entries = {s: (rng.uniform(-box, box, n), rng.uniform(-box, box, n))
                   for s in region}
        states.append(State.of(n, entries))
    return states


def _run_dyson_compare(model, params, seed, workers):
    lambda0 = region_from_config(params["lambda0"])
    region = _region_or_all(model, params)
    pairs = _pairs_or_all(model, region, params)
    f = observable_from_config(params["observable"])
    t0 = dyson_radius(model, lambda0, region)
    if "t" in params and params["t"] is not None:
        t = float(params["t"])
    else:
        frac = float(params.get("t_fraction_of_t0", 0.5))
        if not math.isfinite(t0):
            raise ConfigError("t_fraction_of_t0 requires a finite Dyson radius")
        t = frac * t0
    orders = [int(m) for m in params.get("orders", [1, 2, 3, 4])]
    qp = int(params.get("quadrature_points", 8))
    scfg = params.get("state_samples", {})
    states = _dyson_states(model, region, int(scfg.get("count", 50)),
                           float(scfg.get("box", 2.0)), seed)
    batch = StateBatch.from_states(states, model.dim_n)
    cfg = integrator_from_config(params.get("integrator")
                                 or {"method": "oracle_rk", "oracle_tol": 1e-12})
    direct = gamma_direct(model, f, region, pairs, t, cfg)
    dvals = direct.eval_batch(batch)
    gsamp = SupSampler.for_region(region, model.dim_n, box=6.0,
                                  axis_points=201, mc_samples=512, seed=seed)
    gsup = grad_sup_estimate(f, gsamp)
    out = []
    for order in orders:
        dc = DysonConfig(lambda0=lambda0, region=region, order=order, t=t,
                         quadrature_points=qp)
        gt = gamma_truncated(model, f, dc)
        partials = gt.order_partials(batch)
        err = float(np.max(np.abs(partials[order] - dvals)))
        out.append({
            "order": order,
            "term_count": sum(gt.term_count(nn) for nn in range(1, order + 1)),
            "t": t, "t0": t0,
            "tail_bound": tail_bound(model, lambda0, region, t, order + 1) * gsup,
            "sampled_max_error": err,
            "quadrature_error_estimate": gt.quadrature_error_estimate(batch),
        })
    payload = {"orders": out, "t": t, "t0": t0,
               "c0": c0_constant(model, region),
               "interaction_constant": interaction_constant(model, region),
               "grad_sup_f": gsup, "state_count": len(states), "seed": seed}
    return {"dyson.json": _json(payload)}


def _run_thermo_sweep(model, params, seed, workers):
    net = net_from_config(params["net"])
    f = observable_from_config(params["observable"])
    if "t" in params and params["t"] is not None:
        t = float(params["t"])
    else:
        lam0 = Region(tuple(sorted({s for fn in f.projection for s in fn.sites()})))
        t0 = dyson_radius(model, lam0, net.largest)
        t = float(params.get("t_fraction_of_t0", 0.5)) * t0
    sampler = sampler_from_config(params.get("sampler"), seed)
    cfg = integrator_from_config(params.get("integrator"))
    res = convergence_sweep(model, net, f, t, sampler, cfg, workers)
    rows = []
    for (size, gap) in zip(res.region_sizes[1:], res.step_gaps):
        rows.append([size, t, gap, "", sampler.box,
                     sampler.axis_points * 2 * model.dim_n * size + sampler.mc_samples,
                     sampler.seed])
    return {"sweep.csv": _csv(["region_size", "t", "gap", "envelope", "box",
                               "samples", "seed"], rows)}


def _run_continuity(model, params, seed, workers):
    f = observable_from_config(params["observable"])
    base = region_from_config(params["base_region"])
    net = net_from_config(params["net"])
    t_grid = [float(t) for t in params["t_grid"]]
    sampler = sampler_from_config(params.get("sampler"), seed)
    cfg = integrator_from_config(params.get("integrator"))
    prof = strong_continuity_probe(model, f, base, net, t_grid, sampler, cfg)
    size = len(net.largest)
    rows = [[size, t, g, e, sampler.box,
             sampler.axis_points * 2 * model.dim_n * size + sampler.mc_samples,
             sampler.seed]
            for t, g, e in zip(prof.times, prof.gaps, prof.envelopes)]
    return {"continuity.csv": _csv(["region_size", "t", "gap", "envelope", "box",
                                    "samples", "seed"], rows)}


def _run_mollify_study(model, params, seed, workers):
    family = params.get("family", "poly_bump")
    fam_params = params.get("params", {"amplitude": 1.0, "radius": 1.0, "power": 3})
    grid_cfg = params.get("grid", {})
    dim = int(grid_cfg.get("dim", model.dim_n))
    base = potential_from_family(family, dim, fam_params)
    if base.support_radius is None:
        raise ConfigError("mollify_study requires a compactly supported base")
    radius = float(grid_cfg.get("radius", base.support_radius + 1.5))
    points = int(grid_cfg.get("points", 801))
    grid = GridSpec(radius=radius, points=points, dim=dim)
    axes = [np.linspace(-radius, radius, points) for _ in range(dim)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    dx = axes[0][1] - axes[0][0]
    base_vals = np.asarray(base.eval(mesh))
    base_grad = np.asarray(base.grad(mesh))
    rows = []
    for m in params.get("m_list", [4, 8, 16, 32]):
        mol = mollify(base, int(m), grid)
        mol_grad = np.asarray(mol.grad(mesh))
        grad_err = float(np.max(np.linalg.norm(mol_grad - base_grad, axis=-1)))
        mass_err = float(abs((np.asarray(mol.eval(mesh)) - base_vals).sum()) * dx ** dim)
        rows.append([int(m), grad_err, mass_err, mol.support_radius])
    return {"mollify.csv": _csv(["m", "grad_error", "mass_error",
                                 "support_radius"], rows)}


_RUNNERS = {
    "validate": _run_validate,
    "simulate": _run_simulate,
    "occupation": _run_occupation,
    "flow_gap": _run_flow_gap,
    "estimate_D": _run_estimate_d,
    "dyson_compare": _run_dyson_compare,
    "thermo_sweep": _run_thermo_sweep,
    "continuity": _run_continuity,
    "mollify_study": _run_mollify_study,
}


def run_experiment(kind: str, model_cfg: dict, params: dict, seed: int,
                   workers: int | None = None) -> dict:
    """Run one experiment; returns artifact filename -> content.

    Raises ConfigError for bad content, ValidationFailure when the model fails
    the assumption check (for kinds other than ``validate``), and BlowUpError
    on numerical blow-up.
    """
    if kind not in _RUNNERS:
        raise ConfigError(f"unknown experiment kind '{kind}'")
    params = params or {}
    model = model_from_config(model_cfg)
    start = time.monotonic()
    if kind == "validate":
        artifacts, _ = _run_validate(model, params, seed, workers)
    else:
        if model.interactions and not params.get("skip_validation", False):
            pre = validate_assumptions(
                model, model.sites(),
                sample_spec_from_config(params.get("validate_sample"), seed))
            if not pre.passed:
                raise ValidationFailure(pre.to_json())
        artifacts = _RUNNERS[kind](model, params, seed, workers)
    manifest = {
        "kind": kind,
        "seed": seed,
        "workers": workers,
        "spec": {"model": model_cfg, "params": params},
        "library_version": __version__,
        "wall_time_s": time.monotonic() - start,
    }
    artifacts = dict(artifacts)
    artifacts["manifest.json"] = _json(manifest)
    return artifacts
