"""Finite-support phase-space points and the linear projections acting on them.

A state is a sparse map site -> (p, q) with p, q in R^n; absent sites mean
(0, 0). States are immutable values: all operations return new states.

The component partition splits a region into interaction-connected classes of
equal frequency ratio nu/m (evolving with a common rotation) and a remainder
of sites connected to some different-frequency site. Each equal-frequency
class carries the idempotent pair pi_S / pi_T: T holds the mass-weighted
center-of-mass coordinates (which evolve freely), S the relative coordinates
(preserved by pair-difference interactions).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .model import LatticeModel, Region

FREQ_RTOL = 1e-12  # equal-frequency dichotomy is exact; enforced at model build


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class State:
    """Phase-space point omega = (p, q) with finite support."""

    dim: int
    entries: Mapping

    @classmethod
    def of(cls, dim: int, entries: Mapping) -> "State":
        fixed = {}
        for site, (p, q) in entries.items():
            p = np.atleast_1d(np.asarray(p, dtype=float))
            q = np.atleast_1d(np.asarray(q, dtype=float))
            if p.shape != (dim,) or q.shape != (dim,):
                raise ValueError(f"site {site}: vectors must have dimension {dim}")
            fixed[int(site)] = (_freeze(p), _freeze(q))
        return cls(dim, fixed)

    @classmethod
    def zero(cls, dim: int) -> "State":
        return cls(dim, {})

    def p(self, site) -> np.ndarray:
        entry = self.entries.get(site)
        return entry[0] if entry is not None else np.zeros(self.dim)

    def q(self, site) -> np.ndarray:
        entry = self.entries.get(site)
        return entry[1] if entry is not None else np.zeros(self.dim)

    def sites(self) -> tuple:
        return tuple(sorted(self.entries))

    def support(self) -> tuple:
        """Sites carrying a nonzero entry."""
        return tuple(s for s in self.sites()
                     if np.any(self.entries[s][0]) or np.any(self.entries[s][1]))

    def supported_in(self, region: Region) -> bool:
        return set(self.support()) <= region.as_set()

    def to_json(self):
        return [{"site": s, "p": self.entries[s][0].tolist(),
                 "q": self.entries[s][1].tolist()} for s in self.sites()]

    @classmethod
    def from_json(cls, dim: int, rows: Iterable) -> "State":
        return cls.of(dim, {row["site"]: (row["p"], row["q"]) for row in rows})


def project_region(omega: State, region: Region) -> State:
    """pi_Lambda: zero out everything outside the region."""
    kept = {s: pq for s, pq in omega.entries.items() if s in region}
    return State(omega.dim, kept)


def rel_coords(omega: State, k, l, model: LatticeModel):
    """(p_k/m_k - p_l/m_l, q_k - q_l) for a site pair."""
    if k == l:
        raise ValueError("rel_coords requires two distinct sites")
    dp = omega.p(k) / model.mass(k) - omega.p(l) / model.mass(l)
    dq = omega.q(k) - omega.q(l)
    return dp, dq


def state_norm(omega: State) -> float:
    total = 0.0
    for p, q in omega.entries.values():
        total += float(p @ p) + float(q @ q)
    return float(np.sqrt(total))


def state_axpy(a: float, omega: State, other: State) -> State:
    """a·omega + other, with support the union of supports."""
    if omega.dim != other.dim:
        raise ValueError("dimension mismatch")
    out = {}
    for s in set(omega.entries) | set(other.entries):
        p = a * omega.p(s) + other.p(s)
        q = a * omega.q(s) + other.q(s)
        out[s] = (p, q)
    return State.of(omega.dim, out)


def state_sub(omega: State, other: State) -> State:
    return state_axpy(-1.0, other, omega)


@dataclass(frozen=True)
class ComponentPartition:
    """Lambda = lambda0 ∪ class_1 ∪ ... ∪ class_M for a given interaction graph."""

    lambda0: Region
    classes: tuple
    region: Region


def partition_components(model: LatticeModel, region: Region,
                         pairs: Iterable) -> ComponentPartition:
    """Split the region by interaction connectivity and frequency ratio.

    Connected components whose sites all share nu/m become classes; components
    containing two distinct frequency ratios go wholly to lambda0 (every such
    site is path-connected to a different-frequency site).
    """
    rset = region.as_set()
    pairs = [tuple(p) for p in pairs]
    for (k, l) in pairs:
        if k not in rset or l not in rset:
            raise ValueError(f"pair ({k},{l}) is not inside the region")

    parent = {s: s for s in region}

    def find(s):
        while parent[s] != s:
            parent[s] = parent[parent[s]]
            s = parent[s]
        return s

    for (k, l) in pairs:
        rk, rl = find(k), find(l)
        if rk != rl:
            parent[rk] = rl

    groups = {}
    for s in region:
        groups.setdefault(find(s), []).append(s)

    lambda0, classes = [], []
    for sites in groups.values():
        ratios = [model.freq_ratio(s) for s in sites]
        lo, hi = min(ratios), max(ratios)
        if hi - lo <= FREQ_RTOL * max(abs(hi), abs(lo), 1.0):
            classes.append(Region(tuple(sorted(sites))))
        else:
            lambda0.extend(sites)
    classes.sort(key=lambda r: r.sites)
    return ComponentPartition(Region(tuple(sorted(lambda0))), tuple(classes), region)


def project_ST(omega: State, partition: ComponentPartition, model: LatticeModel):
    """Split omega = s + t along the idempotents of the partition.

    On each class j >= 1 with total mass |m|:
      (pi_T p)_k = m_k/|m| · Σ_l p_l          (pi_T q)_k = Σ_l m_l q_l / |m|
    and pi_S = id - pi_T. On lambda0, pi_S = id and pi_T = 0.
    """
    if not omega.supported_in(partition.region):
        raise ValueError("state support lies outside the partition region")
    dim = omega.dim
    s_entries, t_entries = {}, {}
    for site in partition.lambda0:
        if site in omega.entries:
            s_entries[site] = omega.entries[site]
    for cls in partition.classes:
        total_mass = sum(model.mass(k) for k in cls)
        psum = np.zeros(dim)
        qsum = np.zeros(dim)
        for k in cls:
            psum += omega.p(k)
            qsum += model.mass(k) * omega.q(k)
        for k in cls:
            tp = model.mass(k) / total_mass * psum
            tq = qsum / total_mass
            t_entries[k] = (tp, tq)
            s_entries[k] = (omega.p(k) - tp, omega.q(k) - tq)
    return State.of(dim, s_entries), State.of(dim, t_entries)


# ---------------------------------------------------------------------------
# dense batches (internal fast path for integrators and samplers)
# ---------------------------------------------------------------------------

class StateBatch:
    """A batch of states over a fixed site tuple, stored densely.

    P and Q have shape (batch, n_sites, dim). Conversion to/from the sparse
    State representation happens at the batch boundary only.
    """

    def __init__(self, sites, P: np.ndarray, Q: np.ndarray):
        self.sites = tuple(sites)
        self.index = {s: i for i, s in enumerate(self.sites)}
        self.P = np.asarray(P, dtype=float)
        self.Q = np.asarray(Q, dtype=float)
        if self.P.shape != self.Q.shape or self.P.ndim != 3:
            raise ValueError("P and Q must both have shape (batch, sites, dim)")

    @property
    def size(self) -> int:
        return self.P.shape[0]

    @property
    def dim(self) -> int:
        return self.P.shape[2]

    def copy(self) -> "StateBatch":
        return StateBatch(self.sites, self.P.copy(), self.Q.copy())

    @classmethod
    def from_states(cls, states, dim: int, sites=None) -> "StateBatch":
        if sites is None:
            allsites = sorted({s for st in states for s in st.entries})
            sites = tuple(allsites)
        P = np.zeros((len(states), len(sites), dim))
        Q = np.zeros_like(P)
        for b, st in enumerate(states):
            for i, s in enumerate(sites):
                if s in st.entries:
                    P[b, i] = st.entries[s][0]
                    Q[b, i] = st.entries[s][1]
        return cls(sites, P, Q)

    @classmethod
    def from_state(cls, state: State, sites=None) -> "StateBatch":
        if sites is None:
            sites = state.sites()
        return cls.from_states([state], state.dim, tuple(sites))

    def to_states(self):
        out = []
        for b in range(self.size):
            entries = {}
            for i, s in enumerate(self.sites):
                if np.any(self.P[b, i]) or np.any(self.Q[b, i]):
                    entries[s] = (self.P[b, i], self.Q[b, i])
            out.append(State.of(self.dim, entries))
        return out

    def component(self, site, kind: str, comp: int) -> np.ndarray:
        arr = self.P if kind == "p" else self.Q
        return arr[:, self.index[site], comp]

    def ensure_sites(self, sites) -> "StateBatch":
        """Return a batch whose site tuple includes all of ``sites`` (zeros added)."""
        missing = [s for s in sites if s not in self.index]
        if not missing:
            return self
        new_sites = self.sites + tuple(missing)
        P = np.zeros((self.size, len(new_sites), self.dim))
        Q = np.zeros_like(P)
        P[:, :len(self.sites)] = self.P
        Q[:, :len(self.sites)] = self.Q
        return StateBatch(new_sites, P, Q)
