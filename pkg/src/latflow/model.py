"""Lattice models: sites, masses, force constants, pair potentials.

A model is a countable-site harmonic lattice with pairwise interactions
V_kl(q_k - q_l). Each unordered pair stores one potential, evaluated at
q_k - q_l for k < l; the reversed orientation is derived as x -> V(-x), which
makes the symmetry condition V_kl(x) = V_lk(-x) true by construction.

Declared constants (grad_sup, grad_lipschitz, a global interaction-row bound)
are inputs; ``validate_assumptions`` verifies them by sampling.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .cores import Core

Site = int


@dataclass(frozen=True)
class Region:
    """A finite ordered set of sites (no duplicates; may be empty)."""

    sites: tuple

    def __post_init__(self):
        sites = tuple(int(s) for s in self.sites)
        if len(set(sites)) != len(sites):
            raise ValueError("duplicate sites in region")
        if any(s < 0 for s in sites):
            raise ValueError("site ids must be non-negative")
        object.__setattr__(self, "sites", sites)

    @classmethod
    def of(cls, sites: Iterable) -> "Region":
        return cls(tuple(sites))

    def __contains__(self, site) -> bool:
        return site in self.sites

    def __iter__(self):
        return iter(self.sites)

    def __len__(self):
        return len(self.sites)

    def union(self, other: "Region") -> "Region":
        extra = tuple(s for s in other.sites if s not in self.sites)
        return Region(self.sites + extra)

    def issubset(self, other: "Region") -> bool:
        return set(self.sites) <= set(other.sites)

    def as_set(self):
        return set(self.sites)


@dataclass
class PotentialSpec:
    """A pair potential with value, gradient, and declared constants.

    ``eval`` and ``grad`` must be vectorized: eval maps (..., n) -> (...),
    grad maps (..., n) -> (..., n). ``core`` is the optional symbolic form
    (see cores.py) required for Dyson-bracket participation.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    grad_sup: Optional[float] = None
    grad_lipschitz: Optional[float] = None
    support_radius: Optional[float] = None
    support_center: Optional[np.ndarray] = None
    core: Optional[Core] = None
    family: str = "custom"
    params: dict = field(default_factory=dict)

    def reversed(self) -> "PotentialSpec":
        """The l,k orientation: x -> V(-x). Same constants, mirrored support."""
        base_eval, base_grad = self.eval, self.grad
        center = None if self.support_center is None else -self.support_center
        return dataclasses.replace(
            self,
            eval=lambda x: base_eval(-np.asarray(x)),
            grad=lambda x: -base_grad(-np.asarray(x)),
            support_center=center,
            core=None,
            params=dict(self.params, reversed=True),
        )


class BlowUpError(RuntimeError):
    """Non-finite state encountered during integration."""


@dataclass
class LatticeModel:
    """Sites with masses m_k > 0, force constants nu_k > 0, pair potentials.

    ``interactions`` is keyed by (k, l) with k < l; ``global_C`` is the
    declared bound on sup_k Σ_l grad_sup(V_kl).
    """

    dim_n: int
    masses: dict
    force_constants: dict
    interactions: dict = field(default_factory=dict)
    global_C: float = math.inf

    def __post_init__(self):
        if self.dim_n < 1:
            raise ValueError("dim_n must be a positive integer")
        if set(self.masses) != set(self.force_constants):
            raise ValueError("masses and force_constants must cover the same sites")
        for k, m in self.masses.items():
            if not m > 0:
                raise ValueError(f"mass of site {k} must be strictly positive")
        for k, nu in self.force_constants.items():
            if not nu > 0:
                raise ValueError(f"force constant of site {k} must be strictly positive")
        fixed = {}
        for (k, l), spec in self.interactions.items():
            if k == l:
                raise ValueError("self-interactions are not allowed")
            if k not in self.masses or l not in self.masses:
                raise ValueError(f"interaction ({k},{l}) references unknown sites")
            key = (k, l) if k < l else (l, k)
            if key in fixed:
                raise ValueError(f"duplicate interaction for pair {key}")
            fixed[key] = spec
        self.interactions = fixed

    # -- lookups ------------------------------------------------------------

    def sites(self) -> Region:
        return Region(tuple(sorted(self.masses)))

    def mass(self, k) -> float:
        return self.masses[k]

    def nu(self, k) -> float:
        return self.force_constants[k]

    def omega(self, k) -> float:
        """Angular frequency sqrt(nu_k / m_k) of site k's free oscillation."""
        return math.sqrt(self.force_constants[k] / self.masses[k])

    def freq_ratio(self, k) -> float:
        return self.force_constants[k] / self.masses[k]

    def has_pair(self, k, l) -> bool:
        return (min(k, l), max(k, l)) in self.interactions

    def pair_spec(self, k, l) -> PotentialSpec:
        """The stored spec for the unordered pair; oriented as q_min - q_max."""
        try:
            return self.interactions[(min(k, l), max(k, l))]
        except KeyError:
            raise KeyError(f"no interaction declared for pair ({k},{l})") from None

    def neighbors(self, k) -> tuple:
        out = set()
        for (a, b) in self.interactions:
            if a == k:
                out.add(b)
            elif b == k:
                out.add(a)
        return tuple(sorted(out))

    def pairs_within(self, region: Region) -> tuple:
        rset = region.as_set()
        return tuple(sorted(p for p in self.interactions if p[0] in rset and p[1] in rset))


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def interaction_constant(model: LatticeModel, region: Region) -> float:
    """max over k in region of Σ_{l in region} grad_sup(V_kl); 0 on empty region."""
    best = 0.0
    for k in region:
        row = 0.0
        for l in region:
            if l == k or not model.has_pair(k, l):
                continue
            spec = model.pair_spec(k, l)
            if spec.grad_sup is None:
                raise ValueError(f"pair ({min(k,l)},{max(k,l)}) has no declared grad_sup")
            row += spec.grad_sup
        best = max(best, row)
    return best


def _shift_core(core: Core | None, offset: np.ndarray) -> Core | None:
    from .cores import BallPolyCore, PolyExpCore
    if isinstance(core, BallPolyCore):
        return BallPolyCore(core.poly, core.radius, core.center + offset, core.arity)
    if isinstance(core, PolyExpCore):
        return PolyExpCore(core.poly, core.quad, core.center + offset, core.arity)
    return None


def shifted_potential(base: PotentialSpec, offset) -> PotentialSpec:
    """V(x) := base(x - offset); constants unchanged, support center shifted."""
    offset = np.asarray(offset, dtype=float)
    base_eval, base_grad = base.eval, base.grad
    center = offset if base.support_center is None else base.support_center + offset
    return dataclasses.replace(
        base,
        eval=lambda x: base_eval(np.asarray(x) - offset),
        grad=lambda x: base_grad(np.asarray(x) - offset),
        support_center=center,
        core=_shift_core(base.core, offset),
        params=dict(base.params, offset=offset.tolist()),
    )


@dataclass
class SampleSpec:
    """Sampling parameters for assumption checks: a box [-B, B]^n and counts."""

    box_radius: float = 4.0
    samples: int = 2048
    seed: int = 0
    decay_tol: float = 1e-6
    fd_step: float = 1e-6


@dataclass
class ConditionReport:
    condition: str
    passed: bool
    witness: dict
    note: str = ""

    def to_json(self):
        return {"condition": self.condition, "passed": self.passed,
                "witness": self.witness, "note": self.note}


@dataclass
class ValidationReport:
    conditions: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.conditions)

    def to_json(self):
        return {"passed": self.passed,
                "conditions": [c.to_json() for c in self.conditions]}


def validate_assumptions(model: LatticeModel, region: Region,
                         sample_spec: SampleSpec | None = None) -> ValidationReport:
    """Check the standing assumptions (i)-(v) on the given region by sampling.

    (i)   pair symmetry V_kl(x) = V_lk(-x) at sampled x;
    (ii)  gradient bounded by the declared grad_sup, decay at the box shell;
    (iii) Lipschitz quotient of the gradient bounded by grad_lipschitz;
    (iv)  per-site row sums of grad_sup bounded by the declared global_C;
    (v)   max of {m_k nu_k, 1/(m_k nu_k)} finite over the region.
    """
    if len(region) == 0:
        raise ValueError("empty region")
    spec = sample_spec or SampleSpec()
    rng = np.random.default_rng(spec.seed)
    n = model.dim_n
    x = rng.uniform(-spec.box_radius, spec.box_radius, size=(spec.samples, n))
    pairs = model.pairs_within(region)
    for (k, l) in pairs:
        p = model.pair_spec(k, l)
        if p.grad_sup is None or p.grad_lipschitz is None:
            raise ValueError(f"pair ({k},{l}) is missing declared constants")

    conditions = []

    # (i) symmetry via the derived reverse orientation
    worst_i, witness_i = 0.0, None
    for (k, l) in pairs:
        p = model.pair_spec(k, l)
        dev = np.abs(np.asarray(p.eval(x)) - np.asarray(p.reversed().eval(-x)))
        j = int(np.argmax(dev))
        if dev[j] >= worst_i:
            worst_i, witness_i = float(dev[j]), {"pair": [k, l], "x": x[j].tolist()}
    conditions.append(ConditionReport(
        "i", worst_i <= 1e-12,
        {"max_abs_deviation": worst_i, "at": witness_i},
        "symmetry holds by shared storage; deviation is evaluation roundoff"))

    # (ii) C0^1: gradient bounded by declared sup, decay at the box shell
    worst_ratio, worst_shell, witness_ii = 0.0, 0.0, None
    shell = x.copy()
    if spec.samples:
        # push samples to the box boundary along their largest coordinate
        idx = np.argmax(np.abs(shell), axis=-1)
        rows = np.arange(shell.shape[0])
        shell[rows, idx] = np.sign(shell[rows, idx] + 0.5) * spec.box_radius
    for (k, l) in pairs:
        p = model.pair_spec(k, l)
        gn = np.linalg.norm(np.asarray(p.grad(x)), axis=-1)
        j = int(np.argmax(gn))
        ratio = float(gn[j]) / p.grad_sup if p.grad_sup > 0 else float(gn[j] > 0)
        if ratio > worst_ratio:
            worst_ratio, witness_ii = ratio, {"pair": [k, l], "x": x[j].tolist(),
                                              "grad_norm": float(gn[j])}
        worst_shell = max(worst_shell, float(np.max(np.abs(np.asarray(p.eval(shell))))))
    conditions.append(ConditionReport(
        "ii", worst_ratio <= 1.0 and worst_shell <= spec.decay_tol,
        {"max_grad_over_declared": worst_ratio, "at": witness_ii,
         "max_shell_value": worst_shell},
        "decay certified only inside the sampling box (see report limitation)"))

    # (iii) Lipschitz gradient on sampled pairs
    worst_lip, witness_iii = 0.0, None
    y = x + rng.uniform(-0.5, 0.5, size=x.shape)
    for (k, l) in pairs:
        p = model.pair_spec(k, l)
        num = np.linalg.norm(np.asarray(p.grad(x)) - np.asarray(p.grad(y)), axis=-1)
        den = np.linalg.norm(x - y, axis=-1)
        ok = den > 1e-12
        q = np.where(ok, num / np.where(ok, den, 1.0), 0.0)
        j = int(np.argmax(q))
        ratio = float(q[j]) / p.grad_lipschitz if p.grad_lipschitz > 0 else float(q[j] > 0)
        if ratio > worst_lip:
            worst_lip, witness_iii = ratio, {"pair": [k, l], "x": x[j].tolist(),
                                             "quotient": float(q[j])}
    conditions.append(ConditionReport(
        "iii", worst_lip <= 1.0,
        {"max_quotient_over_declared": worst_lip, "at": witness_iii}))

    # (iv) row sums against the declared global constant
    worst_row, worst_site = 0.0, None
    for k in region:
        row = sum(model.pair_spec(k, l).grad_sup for l in region
                  if l != k and model.has_pair(k, l))
        if row > worst_row:
            worst_row, worst_site = row, k
    conditions.append(ConditionReport(
        "iv", worst_row <= model.global_C,
        {"max_row_sum": worst_row, "site": worst_site, "global_C": model.global_C}))

    # (v) m*nu and 1/(m*nu) bounded over the region
    vals = [max(model.mass(k) * model.nu(k), 1.0 / (model.mass(k) * model.nu(k)))
            for k in region]
    worst_v = max(vals)
    conditions.append(ConditionReport(
        "v", math.isfinite(worst_v),
        {"max_m_nu_or_inverse": worst_v,
         "site": list(region)[int(np.argmax(vals))]}))

    return ValidationReport(conditions)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------

@dataclass
class GridSpec:
    """Regular sampling grid [-radius, radius]^dim with ``points`` per axis."""

    radius: float
    points: int
    dim: int = 1


def _standard_bump_weights(offsets: np.ndarray) -> np.ndarray:
    """Unnormalized c·exp(-1/(1-|x|²)) on the open unit ball, 0 outside."""
    r2 = np.sum(offsets ** 2, axis=-1)
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def mollify(base: PotentialSpec, m: int, grid_spec: GridSpec) -> PotentialSpec:
    """Discrete convolution h_m * base on a regular grid, h_m(x) = m^n h(mx).

    h is the standard smooth bump on the unit ball normalized to unit mass, so
    h_m has support radius 1/m. The result carries interpolated eval/grad; its
    gradient is h_m * grad(base), exact up to grid resolution.
    """
    if m < 1:
        raise ValueError("mollification index m must be a positive integer")
    n = grid_spec.dim
    axes = [np.linspace(-grid_spec.radius, grid_spec.radius, grid_spec.points)
            for _ in range(n)]
    dx = axes[0][1] - axes[0][0]
    half = int(np.floor((1.0 / m) / dx))
    if 2 * half + 1 < 4:
        raise ValueError("under-resolved mollifier")

    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    koffsets = np.stack(np.meshgrid(*([np.arange(-half, half + 1) * dx] * n),
                                    indexing="ij"), axis=-1)
    weights = _standard_bump_weights(koffsets * m)
    total = weights.sum()
    if total <= 0:
        raise ValueError("under-resolved mollifier")
    weights = weights / total  # discrete unit mass: grid integral is preserved exactly

    values = np.asarray(base.eval(mesh), dtype=float)
    smooth = ndimage.convolve(values, weights, mode="constant", cval=0.0)
    grads = np.asarray(base.grad(mesh), dtype=float)
    smooth_grad = np.stack(
        [ndimage.convolve(grads[..., i], weights, mode="constant", cval=0.0)
         for i in range(n)], axis=-1)

    val_itp = RegularGridInterpolator(axes, smooth, bounds_error=False, fill_value=0.0)
    grad_itps = [RegularGridInterpolator(axes, smooth_grad[..., i],
                                         bounds_error=False, fill_value=0.0)
                 for i in range(n)]

    def mol_eval(x):
        x = np.asarray(x, dtype=float)
        return val_itp(x.reshape(-1, n)).reshape(x.shape[:-1])

    def mol_grad(x):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, n)
        cols = [itp(flat) for itp in grad_itps]
        return np.stack(cols, axis=-1).reshape(x.shape)

    base_radius = base.support_radius if base.support_radius is not None else grid_spec.radius
    return PotentialSpec(
        eval=mol_eval,
        grad=mol_grad,
        grad_sup=base.grad_sup,          # averaging cannot increase the sup
        grad_lipschitz=base.grad_lipschitz,
        support_radius=min(base_radius, grid_spec.radius) + 1.0 / m,
        support_center=base.support_center,
        core=None,
        family="mollified",
        params=dict(base.params, m=m, grid_points=grid_spec.points,
                    grid_radius=grid_spec.radius, base_family=base.family),
    )
