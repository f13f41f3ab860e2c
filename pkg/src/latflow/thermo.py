"""Thermodynamic-limit experiments.

Desk-scale meaning of the limit: along an increasing net of finite regions,
the pulled-back observables α_Λ^t(f) = f ∘ Φ^t_{H_Λ} form a Cauchy net in sup
norm — we exhibit decreasing Cauchy gaps, never a limit object. Free boundary
conditions throughout: a region's Hamiltonian contains exactly the pairs
internal to it, and sites outside the region do not move.

The strong-continuity probe measures |α^t(f) - f| on the largest region of a
net and reports the analytic envelope base(t) + |∇f|·c·t·e^{c₁ t}, where
base(t) is the measured small-region gap (the ε of the estimate), c bounds
the gradient of the potential difference between the regions, and c₁ is the
Gronwall Lipschitz constant.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import IntegratorConfig, gronwall_lipschitz
from .model import LatticeModel, Region
from .observables import (LatticeFlow, Observable, ObservableBase, SupSampler,
                          grad_sup_estimate, pullback, sup_distance)

C0_FAMILIES = ("gaussian", "poly_gaussian", "constant")


@dataclass(frozen=True)
class RegionNet:
    """An increasing list of finite regions Λ_0 ⊆ Λ_1 ⊆ ... ⊆ Λ_K."""

    regions: tuple

    def __post_init__(self):
        regions = tuple(self.regions)
        for a, b in zip(regions, regions[1:]):
            if not a.issubset(b):
                raise ValueError("regions must be increasing under inclusion")
        object.__setattr__(self, "regions", regions)

    def __len__(self):
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)

    @property
    def largest(self) -> Region:
        return self.regions[-1]

    def strict_flags(self) -> tuple:
        return tuple(len(b) > len(a) for a, b in zip(self.regions, self.regions[1:]))


@dataclass
class SamplerSettings:
    """Box and counts for sup estimates; directions grow with the region."""

    box: float = 6.0
    axis_points: int = 17
    mc_samples: int = 256
    seed: int = 0

    def for_region(self, region: Region, dim: int) -> SupSampler:
        return SupSampler.for_region(region, dim, box=self.box,
                                     axis_points=self.axis_points,
                                     mc_samples=self.mc_samples, seed=self.seed)


@dataclass
class ContinuityProfile:
    times: list
    gaps: list
    envelopes: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.times) != len(self.gaps):
            raise ValueError("times and gaps must have the same length")


def alpha(model: LatticeModel, region: Region, f: Observable, t: float,
          cfg: IntegratorConfig) -> ObservableBase:
    """α_Λ^t(f) = f ∘ Φ^t_{H_Λ} with all pairs internal to Λ (free boundary)."""
    pairs = model.pairs_within(region)
    return pullback(f, LatticeFlow(model, region, pairs, cfg), t)


def cauchy_gap(model: LatticeModel, region: Region, region2: Region,
               f: Observable, t: float, sampler: SupSampler,
               cfg: IntegratorConfig) -> float:
    """Estimate of |α_Λ^t(f) - α_Λ'^t(f)|_∞ over the sampler box (Λ ⊆ Λ')."""
    if not region.issubset(region2):
        raise ValueError("cauchy_gap requires region ⊆ region2")
    fa = alpha(model, region, f, t, cfg)
    fb = alpha(model, region2, f, t, cfg)
    return sup_distance(fa, fb, sampler).value


@dataclass
class SweepResult:
    step_gaps: list          # gap(Λ_j, Λ_{j+1})
    cumulative: list         # Σ_{i>=j} step_gaps[i]: bound on the gap to Λ_K
    region_sizes: list
    sampler: dict


def convergence_sweep(model: LatticeModel, net: RegionNet, f: Observable,
                      t: float, sampler: SamplerSettings, cfg: IntegratorConfig,
                      workers: int | None = None) -> SweepResult:
    """Successive Cauchy gaps along the net, plus triangle-inequality tails."""
    jobs = list(zip(net.regions[:-1], net.regions[1:]))

    def one(pair):
        small, big = pair
        samp = sampler.for_region(big, model.dim_n)
        return cauchy_gap(model, small, big, f, t, samp, cfg)

    if workers and workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            gaps = list(pool.map(one, jobs))
    else:
        gaps = [one(j) for j in jobs]
    cumulative = list(np.cumsum(gaps[::-1])[::-1])
    return SweepResult(step_gaps=gaps,
                       cumulative=[float(c) for c in cumulative],
                       region_sizes=[len(r) for r in net.regions],
                       sampler=sampler.for_region(net.largest, model.dim_n).describe())


def _extra_pair_gradient_bound(model: LatticeModel, small: Region, big: Region) -> float:
    """Upper bound on |∇(V_Λ' - V_Λ)|_∞: √2 Σ grad_sup over pairs of Λ' not in Λ."""
    extra = set(model.pairs_within(big)) - set(model.pairs_within(small))
    total = 0.0
    for (k, l) in sorted(extra):
        g = model.pair_spec(k, l).grad_sup
        if g is None:
            raise ValueError(f"pair ({k},{l}) has no declared grad_sup")
        total += g
    return math.sqrt(2.0) * total


def strong_continuity_probe(model: LatticeModel, f: Observable, region: Region,
                            net: RegionNet, t_grid, sampler: SamplerSettings,
                            cfg: IntegratorConfig) -> ContinuityProfile:
    """Measured |α_Λκ^t(f) - f| against the envelope base(t) + |∇f|·c·t·e^{c₁t}.

    Requires a levee whose core vanishes at infinity (gaussian/poly_gaussian;
    constants trivially allowed; resolvent cores accepted with a warning) and
    finite-range interactions: every pair inside the probed region must
    declare a support radius.
    """
    if not region.issubset(net.regions[0]):
        raise ValueError("the base region must be contained in the net")
    fsites = {s for fn in f.projection for s in fn.sites()}
    if not fsites <= region.as_set():
        raise ValueError("f must be supported in the base region")
    flags = []
    if f.core.family == "resolvent":
        warnings.warn("resolvent core: vanishes at infinity only along its "
                      "direction; accepted with a flag")
        flags.append("resolvent-core")
    elif f.core.family not in C0_FAMILIES:
        raise ValueError("strong_continuity_probe requires a C0-type core "
                         f"(got '{f.core.family}')")
    big = net.largest
    for (k, l) in model.pairs_within(big):
        if model.pair_spec(k, l).support_radius is None:
            raise ValueError(
                f"pair ({k},{l}) has no declared finite range; the continuity "
                "estimate requires finite-range interactions")

    big_pairs = model.pairs_within(big)
    c = _extra_pair_gradient_bound(model, region, big)
    c1 = gronwall_lipschitz(model, big, big_pairs)
    if f.core.is_constant:
        gsup = 0.0
    else:
        gsamp = SupSampler.for_observable(f, model.dim_n, box=sampler.box,
                                          axis_points=129, mc_samples=512,
                                          seed=sampler.seed)
        gsup = grad_sup_estimate(f, gsamp)

    samp = sampler.for_region(big, model.dim_n)
    times, gaps, envelopes = [], [], []
    for t in t_grid:
        gap = sup_distance(alpha(model, big, f, t, cfg), f, samp).value
        base = sup_distance(alpha(model, region, f, t, cfg), f, samp).value
        envelopes.append(base + gsup * c * abs(t) * math.exp(abs(t) * c1))
        times.append(float(t))
        gaps.append(gap)
    return ContinuityProfile(times, gaps, envelopes, flags)
