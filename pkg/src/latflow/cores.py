"""Differentiable core functions for levee observables.

A levee is g ∘ π for a finite-dimensional linear projection π; the "core" g
lives on the (small) range of π. Everything here is closed under partial
differentiation with exactly representable coefficients, which is what allows
nested Poisson brackets to be assembled symbolically instead of by numerical
differentiation:

* ``PolyExpCore``     P(x - c) · exp(-(x-c)·Q(x-c))        (gaussian / poly_gaussian)
* ``BallPolyCore``    P(x - c) on the closed ball |x-c| <= r, 0 outside (bump potentials)
* ``ResolventCore``   s · (iλ - a·x)^(-m)                  (classical resolvents)
* ``ConstCore``       constant
* ``TermSumCore``     Σ coeff · Π factor(x[idxs])          (products, brackets)

Polynomials are sparse dicts mapping exponent tuples to complex coefficients.
All ``values`` methods are vectorized: x has shape (..., arity) and the result
has shape (...).
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

Mono = tuple  # exponent multi-index, length = arity
Poly = dict   # Mono -> complex coefficient

_ZERO_TOL = 0.0  # coefficients are combined exactly; only exact zeros are dropped


# ---------------------------------------------------------------------------
# sparse polynomial helpers
# ---------------------------------------------------------------------------

def poly_const(c, arity: int) -> Poly:
    if c == 0:
        return {}
    return {(0,) * arity: complex(c)}


def poly_add(p: Poly, q: Poly) -> Poly:
    out = dict(p)
    for mono, c in q.items():
        s = out.get(mono, 0.0) + c
        if s == 0:
            out.pop(mono, None)
        else:
            out[mono] = s
    return out


def poly_scale(p: Poly, c) -> Poly:
    if c == 0:
        return {}
    return {m: v * c for m, v in p.items()}


def poly_mul(p: Poly, q: Poly) -> Poly:
    out: Poly = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = tuple(a + b for a, b in zip(m1, m2))
            s = out.get(m, 0.0) + c1 * c2
            if s == 0:
                out.pop(m, None)
            else:
                out[m] = s
    return out


def poly_partial(p: Poly, j: int) -> Poly:
    out: Poly = {}
    for mono, c in p.items():
        e = mono[j]
        if e == 0:
            continue
        m = mono[:j] + (e - 1,) + mono[j + 1:]
        s = out.get(m, 0.0) + c * e
        if s == 0:
            out.pop(m, None)
        else:
            out[m] = s
    return out


def poly_eval(p: Poly, x: np.ndarray) -> np.ndarray:
    """Evaluate at x of shape (..., arity); returns complex array of shape (...)."""
    out = np.zeros(x.shape[:-1], dtype=complex)
    for mono, c in p.items():
        term = np.full(x.shape[:-1], c, dtype=complex)
        for j, e in enumerate(mono):
            if e:
                term = term * x[..., j] ** e
        out += term
    return out


def _poly_key(p: Poly):
    return tuple(sorted((m, complex(c)) for m, c in p.items()))


def radial_poly(coeffs_in_u, arity: int, scale=1.0) -> Poly:
    """Expand Σ_j a_j u^j with u = scale·Σ x_i² into a sparse polynomial in x."""
    u: Poly = {}
    for i in range(arity):
        mono = tuple(2 if j == i else 0 for j in range(arity))
        u[mono] = complex(scale)
    out = poly_const(coeffs_in_u[0], arity)
    upow = poly_const(1.0, arity)
    for a in coeffs_in_u[1:]:
        upow = poly_mul(upow, u)
        out = poly_add(out, poly_scale(upow, a))
    return out


# ---------------------------------------------------------------------------
# atomic cores
# ---------------------------------------------------------------------------

class Core:
    """Common interface: arity, family, values(x), partial(j), key()."""

    arity: int
    family: str

    def values(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def partial(self, j: int) -> "Core":
        raise NotImplementedError

    def key(self):
        raise NotImplementedError

    def is_zero(self) -> bool:
        return False

    def is_real(self) -> bool:
        return False

    def grad_values(self, x: np.ndarray) -> np.ndarray:
        """All first partials stacked along the last axis, shape (..., arity)."""
        cols = [self.partial(j).values(x) for j in range(self.arity)]
        return np.stack(cols, axis=-1)


class ConstCore(Core):
    family = "constant"

    def __init__(self, value, arity: int = 0):
        self.value = complex(value)
        self.arity = arity

    def values(self, x):
        shape = x.shape[:-1] if x.ndim else ()
        return np.full(shape, self.value, dtype=complex)

    def partial(self, j):
        return ConstCore(0.0, self.arity)

    def key(self):
        return ("const", self.arity, self.value)

    def is_zero(self):
        return self.value == 0

    def is_real(self):
        return self.value.imag == 0


class PolyExpCore(Core):
    """g(x) = P(y) · exp(-y·Qy) with y = x - center, Q symmetric PSD.

    Closed under ∂_j: the prefactor polynomial absorbs the chain-rule terms.
    """

    def __init__(self, poly: Poly, quad: np.ndarray, center=None, arity: int | None = None):
        quad = np.asarray(quad, dtype=float)
        self.arity = arity if arity is not None else quad.shape[0]
        self.poly = poly
        self.quad = quad
        if center is None:
            center = np.zeros(self.arity)
        self.center = np.asarray(center, dtype=float)
        trivial = list(poly.values()) == [poly.get((0,) * self.arity)] and len(poly) <= 1
        self.family = "gaussian" if trivial else "poly_gaussian"

    def values(self, x):
        x = np.asarray(x, dtype=float)
        y = x - self.center
        expo = -np.einsum("...i,ij,...j->...", y, self.quad, y)
        return poly_eval(self.poly, y) * np.exp(expo)

    def partial(self, j):
        # ∂_j [P e^{-yQy}] = [∂_j P - 2 (Qy)_j P] e^{-yQy}
        lin: Poly = {}
        for i in range(self.arity):
            c = -2.0 * self.quad[j, i]
            if c != 0.0:
                mono = tuple(1 if m == i else 0 for m in range(self.arity))
                lin[mono] = lin.get(mono, 0.0) + c
        newpoly = poly_add(poly_partial(self.poly, j), poly_mul(self.poly, lin))
        return PolyExpCore(newpoly, self.quad, self.center, self.arity)

    def key(self):
        return ("polyexp", self.arity, _poly_key(self.poly),
                self.quad.tobytes(), self.center.tobytes())

    def is_zero(self):
        return not self.poly

    def is_real(self):
        return all(c.imag == 0 for c in self.poly.values())


class BallPolyCore(Core):
    """g(x) = P(y) on the closed ball |y| <= radius (y = x - center), 0 outside.

    Used for compactly supported polynomial bump potentials. The piecewise
    derivative is the classical one as long as the bump power keeps enough
    boundary smoothness; the shipped families use power >= 8 (C^7).
    """

    family = "bump"

    def __init__(self, poly: Poly, radius: float, center=None, arity: int | None = None):
        if arity is None:
            arity = len(next(iter(poly))) if poly else 1
        self.arity = arity
        self.poly = poly
        self.radius = float(radius)
        if center is None:
            center = np.zeros(arity)
        self.center = np.asarray(center, dtype=float)

    def values(self, x):
        x = np.asarray(x, dtype=float)
        y = x - self.center
        inside = np.einsum("...i,...i->...", y, y) <= self.radius ** 2
        return np.where(inside, poly_eval(self.poly, y), 0.0)

    def partial(self, j):
        return BallPolyCore(poly_partial(self.poly, j), self.radius, self.center, self.arity)

    def key(self):
        return ("ballpoly", self.arity, _poly_key(self.poly), self.radius,
                self.center.tobytes())

    def is_zero(self):
        return not self.poly

    def is_real(self):
        return all(c.imag == 0 for c in self.poly.values())


class ResolventCore(Core):
    """g(x) = scale · (iλ - a·x)^(-power); the classical resolvent for power=1."""

    family = "resolvent"

    def __init__(self, lam: float, coeffs=None, power: int = 1, scale=1.0, arity: int = 1):
        if lam == 0:
            raise ValueError("resolvent requires lambda != 0")
        self.lam = float(lam)
        if coeffs is None:
            coeffs = np.ones(arity)
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.arity = len(self.coeffs)
        self.power = int(power)
        self.scale = complex(scale)

    def values(self, x):
        x = np.asarray(x, dtype=float)
        base = 1j * self.lam - np.einsum("...i,i->...", x, self.coeffs)
        return self.scale * base ** (-self.power)

    def partial(self, j):
        # ∂_j (iλ - a·x)^(-m) = m a_j (iλ - a·x)^(-m-1)
        return ResolventCore(self.lam, self.coeffs, self.power + 1,
                             self.scale * self.power * self.coeffs[j], self.arity)

    def key(self):
        return ("resolvent", self.arity, self.lam, self.coeffs.tobytes(),
                self.power, self.scale)

    def is_zero(self):
        return self.scale == 0


class GridCore(Core):
    """Core backed by interpolated grid data (mollified potentials).

    Carries first partials as sibling interpolants; higher partials are not
    available, so grid cores cannot enter nested Dyson brackets.
    """

    family = "grid"

    def __init__(self, value_fn, grad_fns, arity: int, tag):
        self.value_fn = value_fn
        self.grad_fns = tuple(grad_fns)
        self.arity = arity
        self.tag = tag

    def values(self, x):
        return np.asarray(self.value_fn(np.asarray(x, dtype=float)), dtype=complex)

    def partial(self, j):
        fn = self.grad_fns[j]
        return GridCore(fn, [_no_higher_partial] * self.arity, self.arity,
                        (self.tag, "d", j))

    def key(self):
        return ("grid", self.arity, self.tag)

    def is_real(self):
        return True


def _no_higher_partial(x):
    raise NotImplementedError("grid cores carry first derivatives only")


# ---------------------------------------------------------------------------
# sums of factor products (bracket/product closure)
# ---------------------------------------------------------------------------

class TermSumCore(Core):
    """Σ_t c_t · Π_f  core_f(x[idxs_f])  over a shared coordinate space.

    ``terms`` is a list of (coeff, factors) with factors a tuple of
    (Core, idxs) where idxs maps the factor's local coordinates into the
    shared arity. Within one term the idxs blocks are disjoint.
    """

    family = "product"

    def __init__(self, arity: int, terms):
        self.arity = arity
        self.terms = [(complex(c), tuple(fs)) for c, fs in terms
                      if c != 0 and not any(core.is_zero() for core, _ in fs)]

    @staticmethod
    def wrap(core: Core, idxs=None, arity: int | None = None) -> "TermSumCore":
        if isinstance(core, TermSumCore) and idxs is None:
            return core
        if idxs is None:
            idxs = tuple(range(core.arity))
        if arity is None:
            arity = max(idxs, default=-1) + 1
        if isinstance(core, TermSumCore):
            terms = [(c, tuple((f, tuple(idxs[i] for i in fidx)) for f, fidx in fs))
                     for c, fs in core.terms]
            return TermSumCore(arity, terms)
        if isinstance(core, ConstCore):
            return TermSumCore(arity, [(core.value, ())])
        return TermSumCore(arity, [(1.0, ((core, tuple(idxs)),))])

    def values(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1], dtype=complex)
        for c, factors in self.terms:
            term = np.full(x.shape[:-1], c, dtype=complex)
            for core, idxs in factors:
                term = term * core.values(x[..., list(idxs)])
            out += term
        return out

    def partial(self, j):
        terms = []
        for c, factors in self.terms:
            for i, (core, idxs) in enumerate(factors):
                if j not in idxs:
                    continue
                local = idxs.index(j)
                d = core.partial(local)
                if d.is_zero():
                    continue
                fs = factors[:i] + ((d, idxs),) + factors[i + 1:]
                terms.append((c, fs))
        return TermSumCore(self.arity, terms).collect()

    def collect(self) -> "TermSumCore":
        acc = {}
        for c, factors in self.terms:
            k = tuple(sorted((core.key(), idxs) for core, idxs in factors))
            if k in acc:
                acc[k] = (acc[k][0] + c, acc[k][1])
            else:
                acc[k] = (c, factors)
        return TermSumCore(self.arity, [(c, fs) for c, fs in acc.values() if c != 0])

    def key(self):
        return ("termsum", self.arity,
                tuple(sorted((complex(c), tuple(sorted((f.key(), i) for f, i in fs)))
                             for c, fs in self.terms)))

    def is_zero(self):
        return not self.terms

    def is_real(self):
        return all(c.imag == 0 and all(f.is_real() for f, _ in fs)
                   for c, fs in self.terms)

    def __add__(self, other: "TermSumCore") -> "TermSumCore":
        if self.arity != other.arity:
            raise ValueError("arity mismatch")
        return TermSumCore(self.arity, self.terms + other.terms).collect()

    def scaled(self, c) -> "TermSumCore":
        return TermSumCore(self.arity, [(ct * c, fs) for ct, fs in self.terms])


# ---------------------------------------------------------------------------
# shipped scalar families
# ---------------------------------------------------------------------------

def gaussian_core(arity: int, widths=None, center=None, amplitude=1.0) -> PolyExpCore:
    """amplitude · exp(-Σ (x_i - c_i)² / w_i²); unit widths give exp(-|x-c|²)."""
    if widths is None:
        widths = np.ones(arity)
    widths = np.broadcast_to(np.asarray(widths, dtype=float), (arity,))
    quad = np.diag(1.0 / widths ** 2)
    return PolyExpCore(poly_const(amplitude, arity), quad, center, arity)


def bump_core(arity: int, radius: float, power: int = 8, amplitude: float = 1.0,
              center=None) -> BallPolyCore:
    """amplitude · (1 - |x-c|²/r²)^power on the ball, 0 outside (C^{power-1})."""
    coeffs = [amplitude * math.comb(power, j) * (-1.0 / radius ** 2) ** j
              for j in range(power + 1)]
    return BallPolyCore(radial_poly(coeffs, arity), radius, center, arity)
