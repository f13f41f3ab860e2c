"""Levee observables and their algebra.

An observable is a levee f = g ∘ π: a finite list of linear functionals on
phase space (each finitely supported over (site, p/q, component) coordinates)
followed by a smooth core g on the projection range, possibly pre-composed
with flows collected by pullbacks.

Free-flow pullbacks of plain levees are simplified eagerly: the free flow is
linear, so it maps levees to levees by rotating the functional coefficients.
Interacting-flow pullbacks have no closed form and stay lazy, composed at
evaluation time.

The Poisson bracket follows the convention
    {g1∘π, g2∘π} = Σ_{l,i} ∂g1/∂p_{l,i} ∂g2/∂q_{l,i} - ∂g1/∂q_{l,i} ∂g2/∂p_{l,i},
assembled symbolically: the bracket of two levees is again a levee whose core
is a sum of products of core partials weighted by constant symplectic pairings
of the functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cores import ConstCore, Core, PolyExpCore, ResolventCore, TermSumCore, gaussian_core
from .dynamics import IntegratorConfig, flow_batch, free_flow_batch
from .model import LatticeModel, Region
from .phase_space import State, StateBatch

Direction = tuple  # (site, "p"|"q", component)


# ---------------------------------------------------------------------------
# linear functionals
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearFunctional:
    """Finitely supported linear functional ω ↦ Σ c·(p or q component)."""

    coeffs: tuple  # sorted tuple of ((site, kind, comp), value)

    @classmethod
    def of(cls, entries) -> "LinearFunctional":
        acc = {}
        for (site, kind, comp), val in (entries.items() if isinstance(entries, dict)
                                        else entries):
            if kind not in ("p", "q"):
                raise ValueError("functional coordinate kind must be 'p' or 'q'")
            key = (int(site), kind, int(comp))
            acc[key] = acc.get(key, 0.0) + float(val)
        items = tuple(sorted((k, v) for k, v in acc.items() if v != 0.0))
        return cls(items)

    def apply(self, omega: State) -> float:
        total = 0.0
        for (site, kind, comp), val in self.coeffs:
            vec = omega.p(site) if kind == "p" else omega.q(site)
            total += val * vec[comp]
        return total

    def apply_batch(self, batch: StateBatch) -> np.ndarray:
        total = np.zeros(batch.size)
        for (site, kind, comp), val in self.coeffs:
            if site in batch.index:
                total += val * batch.component(site, kind, comp)
        return total

    def sites(self) -> tuple:
        return tuple(sorted({site for (site, _, _), _ in self.coeffs}))

    def directions(self) -> tuple:
        return tuple(d for d, _ in self.coeffs)

    def norm(self) -> float:
        return math.sqrt(sum(v * v for _, v in self.coeffs))

    def rotated(self, model: LatticeModel, t: float,
                region: Region | None = None) -> "LinearFunctional":
        """The functional a ∘ Φ^t_{H^0} (free flow restricted to ``region``)."""
        acc = {}
        for (site, kind, comp), val in self.coeffs:
            if region is not None and site not in region:
                acc[(site, kind, comp)] = acc.get((site, kind, comp), 0.0) + val
                continue
            om = model.omega(site)
            root = math.sqrt(model.nu(site) * model.mass(site))
            c, s = math.cos(om * t), math.sin(om * t)
            if kind == "p":
                # a·p(t) = a cosθ · p - a root sinθ · q
                acc[(site, "p", comp)] = acc.get((site, "p", comp), 0.0) + val * c
                acc[(site, "q", comp)] = acc.get((site, "q", comp), 0.0) - val * root * s
            else:
                # a·q(t) = a sinθ/root · p + a cosθ · q
                acc[(site, "p", comp)] = acc.get((site, "p", comp), 0.0) + val * s / root
                acc[(site, "q", comp)] = acc.get((site, "q", comp), 0.0) + val * c
        return LinearFunctional.of(acc)


def q_functional(site, comp: int = 0, coeff: float = 1.0) -> LinearFunctional:
    return LinearFunctional.of({(site, "q", comp): coeff})


def p_functional(site, comp: int = 0, coeff: float = 1.0) -> LinearFunctional:
    return LinearFunctional.of({(site, "p", comp): coeff})


def pair_difference_functional(k, l, kind: str = "q", comp: int = 0) -> LinearFunctional:
    return LinearFunctional.of({(k, kind, comp): 1.0, (l, kind, comp): -1.0})


def sigma_pairing(a: LinearFunctional, b: LinearFunctional) -> float:
    """Σ_{l,i} a[p_{l,i}] b[q_{l,i}] - a[q_{l,i}] b[p_{l,i}] (a constant)."""
    bmap = dict(b.coeffs)
    total = 0.0
    for (site, kind, comp), val in a.coeffs:
        if kind == "p":
            total += val * bmap.get((site, "q", comp), 0.0)
        else:
            total -= val * bmap.get((site, "p", comp), 0.0)
    return total


# ---------------------------------------------------------------------------
# smooth cores (public face of cores.py)
# ---------------------------------------------------------------------------

class SmoothCore:
    """A differentiable core g: R^d -> C with analytic partials."""

    def __init__(self, core: Core):
        self._core = core

    @property
    def arity(self) -> int:
        return self._core.arity

    @property
    def family(self) -> str:
        return self._core.family

    @property
    def raw(self) -> Core:
        return self._core

    @property
    def is_schwartz(self) -> bool:
        return self.family in ("gaussian", "poly_gaussian")

    @property
    def is_constant(self) -> bool:
        return self.family == "constant"

    def eval(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape == (self.arity,):
            return complex(self._core.values(x[None, :])[0])
        return self._core.values(x)

    def grad(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        single = x.shape == (self.arity,)
        if single:
            x = x[None, :]
        out = self._core.grad_values(x)
        return out[0] if single else out

    def partial(self, j: int) -> "SmoothCore":
        return SmoothCore(self._core.partial(j))


def constant_core(value) -> SmoothCore:
    return SmoothCore(ConstCore(value, 0))


# ---------------------------------------------------------------------------
# flow descriptors and lazy pullback steps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FreeFlow:
    """Φ^t_{H^0}, optionally restricted to a region (identity elsewhere)."""

    model: LatticeModel
    region: Region | None = None


@dataclass(frozen=True)
class LatticeFlow:
    """Φ^t_{H_N} on a region with the given interacting pairs."""

    model: LatticeModel
    region: Region
    pairs: tuple
    cfg: IntegratorConfig = field(default_factory=IntegratorConfig)


@dataclass(frozen=True)
class FlowStep:
    flow: object  # FreeFlow | LatticeFlow
    t: float

    def apply(self, batch: StateBatch) -> StateBatch:
        if isinstance(self.flow, FreeFlow):
            return free_flow_batch(self.flow.model, batch, self.t, self.flow.region)
        return flow_batch(self.flow.model, self.flow.region, self.flow.pairs,
                          batch, self.t, self.flow.cfg)

    def required_sites(self) -> tuple:
        if isinstance(self.flow, LatticeFlow):
            return tuple(self.flow.region)
        return tuple(self.flow.region) if self.flow.region is not None else ()


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

class ObservableBase:
    """Anything evaluable pointwise on states (levees, Dyson partial sums)."""

    def eval(self, omega: State) -> complex:
        return complex(self.eval_states([omega])[0])

    def eval_states(self, states: Sequence[State]) -> np.ndarray:
        raise NotImplementedError

    def eval_batch(self, batch: StateBatch) -> np.ndarray:
        raise NotImplementedError


class Observable(ObservableBase):
    """Levee g ∘ π, optionally pre-composed with collected flows.

    ``post_flows`` is the pullback history in append order; evaluation applies
    the most recently appended flow to the input state first (composition
    order), then the projection, then the core.
    """

    def __init__(self, projection: Iterable, core: SmoothCore, post_flows=()):
        self.projection = tuple(projection)
        self.core = core
        self.post_flows = tuple(post_flows)
        if self.core.arity != len(self.projection):
            raise ValueError("projection arity must match core arity")

    # -- evaluation ---------------------------------------------------------

    def _sites(self) -> tuple:
        out = set()
        for f in self.projection:
            out.update(f.sites())
        for step in self.post_flows:
            out.update(step.required_sites())
        return tuple(sorted(out))

    def eval_batch(self, batch: StateBatch) -> np.ndarray:
        batch = batch.ensure_sites(self._sites())
        for step in reversed(self.post_flows):
            batch = step.apply(batch)
        if not self.projection:
            return self.core.eval(np.zeros((batch.size, 0)))
        x = np.stack([f.apply_batch(batch) for f in self.projection], axis=-1)
        return self.core.eval(x)

    def eval_states(self, states: Sequence[State]) -> np.ndarray:
        if not states:
            return np.zeros(0, dtype=complex)
        dim = states[0].dim
        batch = StateBatch.from_states(list(states), dim)
        return self.eval_batch(batch)

    # -- algebra ------------------------------------------------------------

    def with_flow(self, step: FlowStep) -> "Observable":
        return Observable(self.projection, self.core, self.post_flows + (step,))

    def scaled(self, c) -> "Observable":
        core = TermSumCore.wrap(self.core.raw, arity=self.core.arity).scaled(c)
        return Observable(self.projection, SmoothCore(core), self.post_flows)


def eval_observable(f: ObservableBase, omega: State) -> complex:
    """Apply collected flows, then projection, then the core."""
    return f.eval(omega)


def constant_observable(value) -> Observable:
    return Observable((), constant_core(value))


def gaussian_levee(functionals: Iterable, widths=None, amplitude: float = 1.0) -> Observable:
    """exp-core levee: amplitude · exp(-Σ (x_i/w_i)²) after the projection."""
    functionals = tuple(functionals)
    return Observable(functionals,
                      SmoothCore(gaussian_core(len(functionals), widths,
                                               amplitude=amplitude)))


def resolvent(x: LinearFunctional, lam: float) -> Observable:
    """h_x^λ = 1/(iλ - x·ω); bounded by 1/|λ| in modulus."""
    if lam == 0:
        raise ValueError("resolvent requires lambda != 0")
    if not x.coeffs:
        return constant_observable(1.0 / (1j * lam))
    return Observable((x,), SmoothCore(ResolventCore(lam, arity=1)))


# ---------------------------------------------------------------------------
# pullback and bracket
# ---------------------------------------------------------------------------

def pullback(f: Observable, flow, t: float) -> Observable:
    """α^t(f) = f ∘ Φ^t.

    Free-flow pullbacks of plain levees are simplified eagerly (rotated
    functionals, exact); anything else is appended lazily.
    """
    if t == 0.0:
        return f
    is_free = isinstance(flow, FreeFlow) or (
        isinstance(flow, LatticeFlow) and not flow.pairs)
    region = flow.region if isinstance(flow, (FreeFlow, LatticeFlow)) else None
    if is_free and not f.post_flows:
        rotated = tuple(func.rotated(flow.model, t, region) for func in f.projection)
        return Observable(rotated, f.core)
    if is_free:
        step = FlowStep(FreeFlow(flow.model, region), t)
    else:
        step = FlowStep(flow, t)
    return f.with_flow(step)


def product(f: Observable, g: Observable) -> Observable:
    """Pointwise product of two plain levees as a single levee."""
    if f.post_flows or g.post_flows:
        raise ValueError("product requires plain levees (no pending flows)")
    D = len(f.projection) + len(g.projection)
    tsF = TermSumCore.wrap(f.core.raw, tuple(range(len(f.projection))), D)
    tsG = TermSumCore.wrap(g.core.raw,
                           tuple(range(len(f.projection), D)), D)
    return Observable(f.projection + g.projection, SmoothCore(_ts_mul(tsF, tsG)))


def _ts_mul(a: TermSumCore, b: TermSumCore) -> TermSumCore:
    terms = [(ca * cb, fa + fb) for ca, fa in a.terms for cb, fb in b.terms]
    return TermSumCore(a.arity, terms).collect()


def poisson(f: Observable, g: Observable, model: LatticeModel | None = None) -> Observable:
    """{f, g} = Σ ∂f/∂p ∂g/∂q - ∂f/∂q ∂g/∂p, assembled as a levee.

    Both inputs must be plain levees (free-flow pullbacks are already
    simplified; numeric flows are rejected). The result's core is a sum of
    products of core partials over the concatenated projection.
    """
    if f.post_flows or g.post_flows:
        raise ValueError("bracket requires analytic flows")
    Df, Dg = len(f.projection), len(g.projection)
    if f.core.is_constant or g.core.is_constant or Df == 0 or Dg == 0:
        return constant_observable(0.0)
    D = Df + Dg
    sigma = np.array([[sigma_pairing(a, b) for b in g.projection]
                      for a in f.projection])
    if not np.any(sigma):
        return constant_observable(0.0)
    tsF = TermSumCore.wrap(f.core.raw, tuple(range(Df)), D)
    tsG = TermSumCore.wrap(g.core.raw, tuple(range(Df, D)), D)
    dF = {r: tsF.partial(r) for r in range(Df)}
    dG = {s: tsG.partial(Df + s) for s in range(Dg)}
    terms = []
    for r in range(Df):
        if dF[r].is_zero():
            continue
        for s in range(Dg):
            w = sigma[r, s]
            if w == 0.0 or dG[s].is_zero():
                continue
            terms.extend(_ts_mul(dF[r], dG[s]).scaled(w).terms)
    core = TermSumCore(D, terms).collect()
    if core.is_zero():
        return constant_observable(0.0)
    return Observable(f.projection + g.projection, SmoothCore(core))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def observable_gradient(f: Observable, omega: State) -> dict:
    """Phase-space gradient of a plain levee at a point, as direction -> value."""
    if f.post_flows:
        raise ValueError("gradient is available for plain levees only")
    x = np.array([func.apply(omega) for func in f.projection])
    partials = f.core.grad(x)
    out: dict = {}
    for r, func in enumerate(f.projection):
        for d, val in func.coeffs:
            out[d] = out.get(d, 0.0) + partials[r] * val
    return out


def grad_sup_estimate(f: Observable, sampler: "SupSampler") -> float:
    """max over sampled points of |∇f| (full phase-space gradient of a levee)."""
    if f.post_flows:
        raise ValueError("gradient estimation is available for plain levees only")
    dirs = sorted({d for func in f.projection for d in func.directions()})
    dindex = {d: i for i, d in enumerate(dirs)}
    A = np.zeros((len(f.projection), len(dirs)))
    for r, func in enumerate(f.projection):
        for d, val in func.coeffs:
            A[r, dindex[d]] = val
    batch = sampler.batch().ensure_sites(tuple(sorted({d[0] for d in dirs})))
    x = np.stack([func.apply_batch(batch) for func in f.projection], axis=-1)
    G = f.core.grad(x)              # (K, Df) complex
    vals = G @ A                    # (K, n_dirs)
    return float(np.max(np.linalg.norm(vals, axis=-1)))


# ---------------------------------------------------------------------------
# sup-norm estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SupSampler:
    """Stratified sampling box for sup-norm estimates.

    The box covers the listed phase-space directions with per-direction range
    [-box, box]; points are the center, per-axis sweeps through the center,
    and a Latin-hypercube batch. Deterministic given the seed.
    """

    directions: tuple
    dim: int
    box: float = 6.0
    axis_points: int = 17
    mc_samples: int = 512
    seed: int = 0

    @classmethod
    def for_region(cls, region: Region, dim: int, box: float = 6.0,
                   axis_points: int = 17, mc_samples: int = 512, seed: int = 0) -> "SupSampler":
        dirs = tuple((s, kind, c) for s in region for kind in ("p", "q")
                     for c in range(dim))
        return cls(dirs, dim, box, axis_points, mc_samples, seed)

    @classmethod
    def for_observable(cls, f: Observable, dim: int, **kw) -> "SupSampler":
        dirs = sorted({d for func in f.projection for d in func.directions()})
        return cls(tuple(dirs), dim, **kw)

    def points(self) -> np.ndarray:
        D = len(self.directions)
        rows = [np.zeros((1, D))]
        sweep = np.linspace(-self.box, self.box, self.axis_points)
        for j in range(D):
            block = np.zeros((self.axis_points, D))
            block[:, j] = sweep
            rows.append(block)
        if self.mc_samples:
            rng = np.random.default_rng(self.seed)
            u = np.empty((self.mc_samples, D))
            for j in range(D):
                u[:, j] = (rng.permutation(self.mc_samples) + rng.random(self.mc_samples)) \
                    / self.mc_samples
            rows.append((2.0 * u - 1.0) * self.box)
        return np.concatenate(rows, axis=0)

    def batch(self, dim: int | None = None) -> StateBatch:
        dim = dim if dim is not None else self.dim
        pts = self.points()
        sites = tuple(sorted({d[0] for d in self.directions}))
        index = {s: i for i, s in enumerate(sites)}
        P = np.zeros((pts.shape[0], len(sites), dim))
        Q = np.zeros_like(P)
        for j, (site, kind, comp) in enumerate(self.directions):
            (P if kind == "p" else Q)[:, index[site], comp] = pts[:, j]
        return StateBatch(sites, P, Q)

    def describe(self) -> dict:
        return {"box": self.box, "directions": len(self.directions),
                "axis_points": self.axis_points, "mc_samples": self.mc_samples,
                "seed": self.seed}


@dataclass
class SupEstimate:
    value: float
    argmax: State
    sampler: dict

    def __float__(self):
        return self.value


def sup_distance(f: ObservableBase, g: ObservableBase, sampler: SupSampler) -> SupEstimate:
    """Estimate of |f - g|_∞ over the sampler box; reports the argmax point.

    The box must cover the union of the observables' active directions
    (callers pass region-spanning samplers); within those directions the
    restriction is exact and only the resolution is approximate.
    """
    batch = sampler.batch()
    fv = f.eval_batch(batch)
    gv = g.eval_batch(batch)
    diff = np.abs(fv - gv)
    j = int(np.argmax(diff))
    entries = {}
    for i, s in enumerate(batch.sites):
        if np.any(batch.P[j, i]) or np.any(batch.Q[j, i]):
            entries[s] = (batch.P[j, i], batch.Q[j, i])
    return SupEstimate(float(diff[j]), State.of(sampler.dim, entries),
                       sampler.describe())
