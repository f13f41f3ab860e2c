"""Interaction-picture propagation and its truncated Dyson expansion.

γ^t(f) = f ∘ (Φ^{-t}_{H^0} ∘ Φ^t_{H_N}) admits the series

    γ^t(f) = f + Σ_n ∫_{0<=s_1<=...<=s_n<=t} ⟦...⟦⟦f, V_{s_1}⟧, V_{s_2}⟧..., V_{s_n}⟧ ds

where V_s is the freely evolved interaction and ⟦.,.⟧ the canonical bracket
with the generator sign, d/ds α^s(f) = ⟦f, H⟧ = Σ ∂f/∂q ∂H/∂p - ∂f/∂p ∂H/∂q.
(The public ``observables.poisson`` uses the opposite, displayed convention;
this module pins the sign that makes the series converge to the flow
composition, verified against the ``gamma_direct`` oracle.)

Everything inside the nested brackets is a levee with analytically
differentiable core, so each bracket is assembled symbolically: a term is a
product of core partials over per-level blocks weighted by symplectic
pairings whose time dependence is an explicit trigonometric function of the
simplex quadrature node. Evaluation is vectorized over (quadrature nodes x
sampled states).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .cores import Core
from .dynamics import IntegratorConfig
from .model import LatticeModel, Region
from .observables import (FreeFlow, LatticeFlow, Observable, ObservableBase,
                          LinearFunctional, pullback)
from .phase_space import State, StateBatch

_SCHWARTZ = ("gaussian", "poly_gaussian")


@dataclass
class DysonConfig:
    """Truncation parameters: γ is expanded to ``order`` nested brackets."""

    lambda0: Region          # support of the observable
    region: Region           # the system Λ
    order: int
    t: float
    quadrature_points: int = 8

    def __post_init__(self):
        if not self.lambda0.issubset(self.region):
            raise ValueError("lambda0 must be contained in the region")
        if self.order < 0:
            raise ValueError("order must be non-negative")
        if self.quadrature_points < 1:
            raise ValueError("quadrature_points must be positive")


@dataclass(frozen=True)
class TermIndex:
    """One summand of the expanded nested bracket: a chain of site pairs.

    pairs[j] = (k, l) with k in lambda0 ∪ {l_1..l_j}; every pair carries a
    nonzero interaction.
    """

    pairs: tuple


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------

def c0_constant(model: LatticeModel, region: Region) -> float:
    """Gradient-transport constant of the free flow, realized concretely as

        2 · max(1, max_k max(sqrt(nu_k m_k), 1/sqrt(nu_k m_k))).

    The free-flow Jacobian entries are sines/cosines scaled by sqrt(nu m)^±1,
    and the relative-position projection contributes a factor 2, so the sup of
    |∇V_{kl,t}| / |∇V_kl| stays below this value.
    """
    if len(region) == 0:
        raise ValueError("c0_constant requires a nonempty region")
    worst = 1.0
    for k in region:
        root = math.sqrt(model.nu(k) * model.mass(k))
        worst = max(worst, root, 1.0 / root)
    return 2.0 * worst


def dyson_radius(model: LatticeModel, lambda0: Region, region: Region) -> float:
    """t0 = 1/(C0 |Λ0| C); infinite (flag value inf) when no interactions."""
    if len(lambda0) == 0:
        raise ValueError("lambda0 must be nonempty")
    from .model import interaction_constant
    C = interaction_constant(model, region)
    if C == 0.0:
        return math.inf
    return 1.0 / (c0_constant(model, region) * len(lambda0) * C)


def tail_bound(model: LatticeModel, lambda0: Region, region: Region, t: float,
               from_order: int) -> float:
    """Geometric tail Σ_{n>=M} r^n = r^M/(1-r), r = |t| C0 |Λ0| C.

    Multiply by |∇f|_∞ for the actual remainder bound.
    """
    from .model import interaction_constant
    r = abs(t) * c0_constant(model, region) * len(lambda0) * interaction_constant(model, region)
    if r >= 1.0:
        raise ValueError("outside Dyson radius")
    return r ** from_order / (1.0 - r)


# ---------------------------------------------------------------------------
# time-evolved potentials
# ---------------------------------------------------------------------------

def _pair_nodes(model: LatticeModel, site):
    om = model.omega(site)
    root = math.sqrt(model.nu(site) * model.mass(site))
    return om, root


def time_evolved_potential(model: LatticeModel, k, l, t: float) -> Observable:
    """V_{kl,t} = V_kl ∘ π^pos_kl ∘ Φ^t_{H^0} as an exact levee.

    The projection functionals are the free-flow-rotated coefficients of
    q_k - q_l (stored orientation min(k,l) - max(k,l); same function either
    way by pair symmetry).
    """
    spec = model.pair_spec(k, l)
    if spec.core is None:
        raise ValueError(f"potential for pair ({k},{l}) lacks a symbolic core")
    a, b = min(k, l), max(k, l)
    om_a, rt_a = _pair_nodes(model, a)
    om_b, rt_b = _pair_nodes(model, b)
    funcs = []
    for c in range(model.dim_n):
        funcs.append(LinearFunctional.of({
            (a, "q", c): math.cos(om_a * t),
            (a, "p", c): math.sin(om_a * t) / rt_a,
            (b, "q", c): -math.cos(om_b * t),
            (b, "p", c): -math.sin(om_b * t) / rt_b,
        }))
    from .observables import SmoothCore
    return Observable(tuple(funcs), SmoothCore(spec.core))


# ---------------------------------------------------------------------------
# term enumeration
# ---------------------------------------------------------------------------

def enumerate_terms(model: LatticeModel, lambda0: Region, region: Region,
                    n: int) -> Iterator[TermIndex]:
    """All order-n index chains with anchors in the accumulated support.

    A pair whose both endpoints already lie in the accumulated set is emitted
    once, in the orientation with the smaller anchor (the interaction sum
    counts each unordered pair once).
    """
    if n < 1:
        raise ValueError("enumerate_terms requires order n >= 1")
    rset = region.as_set()

    def rec(acc_pairs, anchor_set):
        depth = len(acc_pairs)
        if depth == n:
            yield TermIndex(tuple(acc_pairs))
            return
        for kk in sorted(anchor_set):
            for ll in model.neighbors(kk):
                if ll not in rset:
                    continue
                if ll in anchor_set and ll < kk:
                    continue  # the (ll, kk) orientation enumerates this pair
                yield from rec(acc_pairs + [(kk, ll)], anchor_set | {ll})

    yield from rec([], set(lambda0))


def term_count_bound(model: LatticeModel, lambda0: Region, n: int) -> float:
    """Π_{k<n} (|Λ0|+k) · Cmax^n with Cmax the maximum interaction degree."""
    cmax = max((len(model.neighbors(k)) for k in model.sites()), default=0)
    prod = 1.0
    for k in range(n):
        prod *= len(lambda0) + k
    return prod * cmax ** n


# ---------------------------------------------------------------------------
# symbolic nested brackets
# ---------------------------------------------------------------------------
# A coordinate reference is ("f", r) for the r-th functional of f, or
# ("V", j, c) for component c of the level-j potential levee. A symbolic term
# is (coeff, taus, mis): a sorted tuple of canonical pairing keys and one
# derivative multi-index per block (block 0 = f, block j = level j).

def _canon_tau(u, v):
    if u <= v:
        return (u, v), 1.0
    return (v, u), -1.0


def _tau_struct_nonzero(ref, j, c, fproj, pairs_sorted):
    k, l = pairs_sorted[j - 1]
    if ref[0] == "f":
        func = fproj[ref[1]]
        return any(site in (k, l) and comp == c
                   for (site, kind, comp), _ in func.coeffs)
    _, i, ci = ref
    if ci != c:
        return False
    ki, li = pairs_sorted[i - 1]
    return bool({ki, li} & {k, l})


def _build_sym_terms(fproj, pairs_sorted, ndim):
    """Expand the order-n nested bracket for one TermIndex into symbolic terms."""
    Df = len(fproj)
    terms = {((), ((0,) * Df,)): 1.0}
    for j in range(1, len(pairs_sorted) + 1):
        new = {}
        for (taus, mis), coeff in terms.items():
            refs = [("f", r) for r in range(Df)]
            for i in range(1, j):
                refs.extend(("V", i, c) for c in range(ndim))
            for ref in refs:
                for c in range(ndim):
                    if not _tau_struct_nonzero(ref, j, c, fproj, pairs_sorted):
                        continue
                    key, sign = _canon_tau(ref, ("V", j, c))
                    if ref[0] == "f":
                        mi = mis[0]
                        new_mi0 = mi[:ref[1]] + (mi[ref[1]] + 1,) + mi[ref[1] + 1:]
                        new_mis = (new_mi0,) + mis[1:]
                    else:
                        i, ci = ref[1], ref[2]
                        mi = mis[i]
                        bumped = mi[:ci] + (mi[ci] + 1,) + mi[ci + 1:]
                        new_mis = mis[:i] + (bumped,) + mis[i + 1:]
                    new_mis = new_mis + ((tuple(1 if cc == c else 0 for cc in range(ndim))),)
                    new_taus = tuple(sorted(taus + (key,)))
                    tk = (new_taus, new_mis)
                    new[tk] = new.get(tk, 0.0) + coeff * sign
        terms = {k: v for k, v in new.items() if v != 0.0}
        if not terms:
            return []
    return [(coeff, taus, mis) for (taus, mis), coeff in terms.items()]


def simplex_nodes(t: float, n: int, points: int):
    """Iterated Gauss-Legendre nodes/weights for ∫ over 0<=s_1<=...<=s_n<=t.

    Built by the chain s_n = t·u_n, s_j = s_{j+1}·u_j on the unit cube; the
    signed jacobian t·s_n···s_2 keeps the orientation right for t < 0 as well.
    """
    x, w = np.polynomial.legendre.leggauss(points)
    u = (x + 1.0) / 2.0
    wu = w / 2.0
    grids = np.meshgrid(*([u] * n), indexing="ij")
    wgrids = np.meshgrid(*([wu] * n), indexing="ij")
    U = np.stack([g.ravel() for g in grids], axis=-1)       # (points^n, n)
    W = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    S = np.empty_like(U)
    S[:, n - 1] = t * U[:, n - 1]
    for j in range(n - 2, -1, -1):
        S[:, j] = S[:, j + 1] * U[:, j]
    jac = t * (np.prod(S[:, 1:], axis=1) if n > 1 else np.ones(U.shape[0]))
    return S, W * jac


class _CorePartialCache:
    def __init__(self, core: Core):
        self.base = core
        self.cache = {}

    def get(self, mi) -> Core:
        mi = tuple(mi)
        if mi in self.cache:
            return self.cache[mi]
        total = sum(mi)
        if total == 0:
            core = self.base
        else:
            j = next(i for i, e in enumerate(mi) if e > 0)
            lower = mi[:j] + (mi[j] - 1,) + mi[j + 1:]
            core = self.get(lower).partial(j)
        self.cache[mi] = core
        return core


# ---------------------------------------------------------------------------
# gamma
# ---------------------------------------------------------------------------

def gamma_direct(model: LatticeModel, f: Observable, region: Region, pairs,
                 t: float, cfg: IntegratorConfig) -> Observable:
    """γ^t(f) = f ∘ (Φ^{-t}_{H^0} ∘ Φ^t_{H_N}): exact inverse free flow after
    the numerically integrated interacting flow, as a lazy pullback."""
    fback = pullback(f, FreeFlow(model, region), -t)
    return pullback(fback, LatticeFlow(model, region, tuple(pairs), cfg), t)


class DysonPartialSum(ObservableBase):
    """Order-M partial sum of the Dyson series, evaluable pointwise.

    Evaluation contracts, per order n, the symbolic bracket terms of every
    TermIndex against simplex quadrature nodes, vectorized over nodes and
    states with node chunking to bound memory.
    """

    def __init__(self, model: LatticeModel, f: Observable, config: DysonConfig,
                 node_chunk: int = 8192):
        self.model = model
        self.f = f
        self.config = config
        self.node_chunk = node_chunk
        self._sym_cache = {}
        self._indices = {n: list(enumerate_terms(model, config.lambda0,
                                                 config.region, n))
                         for n in range(1, config.order + 1)}
        self._fcache = _CorePartialCache(f.core.raw)
        self._vcache = {}
        for n, idxs in self._indices.items():
            for ti in idxs:
                for (k, l) in ti.pairs:
                    key = (min(k, l), max(k, l))
                    if key not in self._vcache:
                        spec = model.pair_spec(*key)
                        if spec.core is None:
                            raise ValueError(
                                f"potential for pair {key} lacks a symbolic core")
                        self._vcache[key] = _CorePartialCache(spec.core)

    def term_count(self, n: int) -> int:
        return len(self._indices.get(n, []))

    # -- evaluation ---------------------------------------------------------

    def eval_states(self, states: Sequence[State]) -> np.ndarray:
        if not states:
            return np.zeros(0, dtype=complex)
        return self.eval_batch(StateBatch.from_states(list(states), states[0].dim))

    def eval_batch(self, batch: StateBatch) -> np.ndarray:
        return self.order_partials(batch)[self.config.order]

    def order_partials(self, batch: StateBatch, quadrature_points=None) -> dict:
        """Partial sums by truncation order: {0: f, 1: f+T1, ..., M: full}."""
        qp = quadrature_points or self.config.quadrature_points
        batch = batch.ensure_sites(tuple(self.config.region))
        acc = np.asarray(self.f.eval_batch(batch), dtype=complex)
        out = {0: acc.copy()}
        xf = self._f_values(batch)
        for n in range(1, self.config.order + 1):
            acc = acc + self._order_contribution(n, batch, xf, qp)
            out[n] = acc.copy()
        return out

    def quadrature_error_estimate(self, batch: StateBatch) -> float:
        """max over states of |value(p) - value(2p)| at the configured order."""
        qp = self.config.quadrature_points
        a = self.order_partials(batch, quadrature_points=qp)[self.config.order]
        b = self.order_partials(batch, quadrature_points=2 * qp)[self.config.order]
        return float(np.max(np.abs(a - b))) if a.size else 0.0

    def _f_values(self, batch: StateBatch):
        if self.f.projection:
            x = np.stack([fn.apply_batch(batch) for fn in self.f.projection], axis=-1)
        else:
            x = np.zeros((batch.size, 0))
        return x

    def _f_part(self, mi, xf) -> np.ndarray:
        return self._fcache.get(mi).values(xf)

    def _order_contribution(self, n: int, batch: StateBatch, xf, qp: int) -> np.ndarray:
        indices = self._indices[n]
        total = np.zeros(batch.size, dtype=complex)
        if not indices:
            return total
        nodes, weights = simplex_nodes(self.config.t, n, qp)
        # Iterating gamma^t(f) = f + ∫ gamma^s(⟦f, V_s⟧) ds pairs the innermost
        # bracket with the LARGEST time: level j reads node column n-j.
        nodes = np.ascontiguousarray(nodes[:, ::-1])
        ndim = self.model.dim_n
        for start in range(0, nodes.shape[0], self.node_chunk):
            S = nodes[start:start + self.node_chunk]
            W = weights[start:start + self.node_chunk]
            trig = _TrigCache(self.model, S)
            for ti in indices:
                pairs_sorted = tuple((min(k, l), max(k, l)) for (k, l) in ti.pairs)
                key = (len(self.f.projection), pairs_sorted)
                if key not in self._sym_cache:
                    self._sym_cache[key] = _build_sym_terms(
                        self.f.projection, pairs_sorted, ndim)
                sym = self._sym_cache[key]
                if not sym:
                    continue
                total += _contract_terms(sym, pairs_sorted, self.f.projection,
                                         self._vcache, self._fcache, xf, batch,
                                         trig, W, ndim)
        return total


class _TrigCache:
    """cos/sin tables per (site, level) over a chunk of quadrature nodes."""

    def __init__(self, model: LatticeModel, S: np.ndarray):
        self.model = model
        self.S = S  # (chunk, n_levels)
        self._cos = {}
        self._sin = {}

    def cos(self, site, j):
        key = (site, j)
        if key not in self._cos:
            om = self.model.omega(site)
            self._cos[key] = np.cos(om * self.S[:, j - 1])
        return self._cos[key]

    def sin_over_root(self, site, j):
        key = (site, j)
        if key not in self._sin:
            om = self.model.omega(site)
            root = math.sqrt(self.model.nu(site) * self.model.mass(site))
            self._sin[key] = np.sin(om * self.S[:, j - 1]) / root
        return self._sin[key]

    def sin_diff_over_root(self, site, i, j):
        """sin(ω(s_j - s_i))/root for the V-V pairing."""
        om = self.model.omega(site)
        root = math.sqrt(self.model.nu(site) * self.model.mass(site))
        return np.sin(om * (self.S[:, j - 1] - self.S[:, i - 1])) / root


def _tau_values(key, fproj, pairs_sorted, trig):
    """Numeric pairing arrays (chunk,) for one canonical tau key."""
    u, v = key
    if u[0] == "f" or v[0] == "f":
        # tau(a, V_{j,c}) = a[q_k,c] sin_k/rt - a[p_k,c] cos_k
        #                 - a[q_l,c] sin_l/rt + a[p_l,c] cos_l
        if u[0] == "f":
            (_, r), (_, j, c), sign = u, v, 1.0
        else:
            (_, r), (_, j, c), sign = v, u, -1.0
        k, l = pairs_sorted[j - 1]
        coeffs = dict(fproj[r].coeffs)
        out = (coeffs.get((k, "q", c), 0.0) * trig.sin_over_root(k, j)
               - coeffs.get((k, "p", c), 0.0) * trig.cos(k, j)
               - coeffs.get((l, "q", c), 0.0) * trig.sin_over_root(l, j)
               + coeffs.get((l, "p", c), 0.0) * trig.cos(l, j))
        return sign * out
    # V-V pairing: shared sites contribute ε_i ε_j sin(ω (s_j - s_i))/root
    _, i, ci = u
    _, j, cj = v
    ki, li = pairs_sorted[i - 1]
    kj, lj = pairs_sorted[j - 1]
    out = None
    for site in {ki, li} & {kj, lj}:
        eps = (1.0 if site == ki else -1.0) * (1.0 if site == kj else -1.0)
        term = eps * trig.sin_diff_over_root(site, i, j)
        out = term if out is None else out + term
    return out if out is not None else np.zeros(trig.S.shape[0])


def _x_values(pair, j, batch, trig, ndim):
    """Projection of the level-j evolved potential, shape (chunk, states, ndim)."""
    k, l = pair
    cols = []
    for c in range(ndim):
        val = (np.multiply.outer(trig.cos(k, j), batch.component(k, "q", c))
               + np.multiply.outer(trig.sin_over_root(k, j), batch.component(k, "p", c))
               - np.multiply.outer(trig.cos(l, j), batch.component(l, "q", c))
               - np.multiply.outer(trig.sin_over_root(l, j), batch.component(l, "p", c)))
        cols.append(val)
    return np.stack(cols, axis=-1)


def _contract_terms(sym, pairs_sorted, fproj, vcache, fcache, xf, batch, trig,
                    W, ndim):
    n = len(pairs_sorted)
    xvals = {j: _x_values(pairs_sorted[j - 1], j, batch, trig, ndim)
             for j in range(1, n + 1)}
    vparts = {}
    tauvals = {}
    fparts = {}
    acc = np.zeros(batch.size, dtype=complex)
    for coeff, taus, mis in sym:
        tprod = W
        for key in taus:
            if key not in tauvals:
                tauvals[key] = _tau_values(key, fproj, pairs_sorted, trig)
            tprod = tprod * tauvals[key]
        vprod = None
        for j in range(1, n + 1):
            vk = (j, mis[j])
            if vk not in vparts:
                core = vcache[pairs_sorted[j - 1]].get(mis[j])
                vals = core.values(xvals[j])
                vparts[vk] = vals.real if np.isrealobj(vals) or core.is_real() else vals
            vprod = vparts[vk] if vprod is None else vprod * vparts[vk]
        contracted = np.einsum("c,cs->s", tprod, vprod)
        mif = mis[0]
        if mif not in fparts:
            fparts[mif] = fcache.get(mif).values(xf)
        acc += coeff * fparts[mif] * contracted
    return acc


def gamma_truncated(model: LatticeModel, f: Observable, config: DysonConfig,
                    node_chunk: int = 8192) -> ObservableBase:
    """Order-M partial sum of the Dyson series for a Schwartz-core levee.

    Outside the convergence radius the expansion is still computed but a
    warning is emitted. Order 0 returns f itself.
    """
    if f.post_flows:
        raise ValueError("gamma_truncated requires a plain levee")
    if f.core.is_constant or config.order == 0:
        return f
    if f.core.family not in _SCHWARTZ:
        raise ValueError("gamma_truncated requires a Schwartz-tagged core "
                         f"(got '{f.core.family}')")
    fsites = {s for fn in f.projection for s in fn.sites()}
    if not fsites <= config.lambda0.as_set():
        raise ValueError("f must be supported in lambda0")
    radius = dyson_radius(model, config.lambda0, config.region)
    if math.isfinite(radius) and abs(config.t) >= radius:
        warnings.warn(f"|t|={abs(config.t):.4g} is outside the Dyson radius "
                      f"t0={radius:.4g}; the truncated series may diverge")
    return DysonPartialSum(model, f, config, node_chunk)
