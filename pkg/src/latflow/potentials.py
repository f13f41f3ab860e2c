"""Built-in pair-potential families.

Shipped families cover both compactly supported interactions (polynomial
bump) and non-compact ones vanishing at infinity (Gaussian), plus mollified
truncations via ``model.mollify``. Each family declares exact or tightly
over-estimated constants so validation passes without slack hacks.
"""

from __future__ import annotations

import math

import numpy as np

from .cores import bump_core, gaussian_core
from .model import GridSpec, PotentialSpec, mollify


def _radial_lipschitz(value_second, grad_over_r, radius, points=40001):
    """max over a dense radial grid of the Hessian eigenvalue bounds.

    For a radial V the Hessian eigenvalues are V''(rho) (radial) and
    V'(rho)/rho (tangential); a small relative margin covers the grid gap.
    """
    rho = np.linspace(0.0, radius, points)
    bound = max(float(np.max(np.abs(value_second(rho)))),
                float(np.max(np.abs(grad_over_r(rho)))))
    return bound * (1.0 + 1e-9)


def bump_potential(dim: int, amplitude: float = 1.0, radius: float = 1.0,
                   power: int = 8, center=None) -> PotentialSpec:
    """a·(1 - |x|²/r²)^k on the ball of radius r, zero outside.

    C^{k-1} with Lipschitz gradient for k >= 2; the default k = 8 keeps enough
    boundary smoothness for high-order nested brackets.
    """
    if power < 2:
        raise ValueError("bump power must be >= 2 for a Lipschitz gradient")
    a, r, k = float(amplitude), float(radius), int(power)
    if center is None:
        center = np.zeros(dim)
    center = np.asarray(center, dtype=float)

    def _eval(x):
        y = np.asarray(x, dtype=float) - center
        u = np.sum(y * y, axis=-1) / r ** 2
        inside = u < 1.0
        return np.where(inside, a * np.where(inside, 1.0 - u, 0.0) ** k, 0.0)

    def _grad(x):
        y = np.asarray(x, dtype=float) - center
        u = np.sum(y * y, axis=-1) / r ** 2
        inside = u < 1.0
        pref = np.where(inside, -2.0 * a * k / r ** 2 * np.where(inside, 1.0 - u, 0.0) ** (k - 1), 0.0)
        return pref[..., None] * y

    # |V'(rho)| = (2ka/r)·u·(1-u²)^{k-1} with u = rho/r peaks at u² = 1/(2k-1)
    ustar = 1.0 / math.sqrt(2 * k - 1)
    grad_sup = (2 * k * abs(a) / r) * ustar * (1 - ustar ** 2) ** (k - 1)

    def _second(rho):
        u2 = (rho / r) ** 2
        inside = u2 < 1.0
        return np.where(inside, (2 * k * a / r ** 2) * np.where(inside, 1 - u2, 0.0) ** (k - 2)
                        * ((2 * k - 1) * u2 - 1.0), 0.0)

    def _grad_over_r(rho):
        u2 = (rho / r) ** 2
        inside = u2 < 1.0
        return np.where(inside, (2 * k * a / r ** 2) * np.where(inside, 1 - u2, 0.0) ** (k - 1), 0.0)

    return PotentialSpec(
        eval=_eval,
        grad=_grad,
        grad_sup=grad_sup,
        grad_lipschitz=_radial_lipschitz(_second, _grad_over_r, r),
        support_radius=r,
        support_center=center if np.any(center) else None,
        core=bump_core(dim, r, k, a, center),
        family="poly_bump",
        params={"amplitude": a, "radius": r, "power": k},
    )


def gaussian_potential(dim: int, amplitude: float = 1.0, sigma: float = 1.0,
                       center=None) -> PotentialSpec:
    """a·exp(-|x|²/(2σ²)): smooth, vanishing at infinity but not compact."""
    a, s = float(amplitude), float(sigma)
    if center is None:
        center = np.zeros(dim)
    center = np.asarray(center, dtype=float)

    def _eval(x):
        y = np.asarray(x, dtype=float) - center
        return a * np.exp(-np.sum(y * y, axis=-1) / (2 * s ** 2))

    def _grad(x):
        y = np.asarray(x, dtype=float) - center
        return (-_eval(x) / s ** 2)[..., None] * y

    return PotentialSpec(
        eval=_eval,
        grad=_grad,
        grad_sup=abs(a) * math.exp(-0.5) / s,   # max at rho = sigma
        grad_lipschitz=abs(a) / s ** 2,          # max |V''| = a/sigma², attained at 0
        support_radius=None,
        support_center=center if np.any(center) else None,
        core=gaussian_core(dim, widths=s * math.sqrt(2.0), center=center, amplitude=a),
        family="gaussian",
        params={"amplitude": a, "sigma": s},
    )


def zero_potential(dim: int) -> PotentialSpec:
    def _eval(x):
        return np.zeros(np.asarray(x).shape[:-1])

    def _grad(x):
        return np.zeros(np.asarray(x).shape)

    return PotentialSpec(eval=_eval, grad=_grad, grad_sup=0.0, grad_lipschitz=0.0,
                         support_radius=1e-12, family="zero", params={})


def mollified_bump(dim: int, m: int, amplitude: float = 1.0, radius: float = 1.0,
                   power: int = 8, grid_points: int = 801,
                   grid_radius: float | None = None) -> PotentialSpec:
    """h_m * bump: the mollified-truncation family of the approximation step."""
    base = bump_potential(dim, amplitude, radius, power)
    gr = grid_radius if grid_radius is not None else radius + 1.5
    return mollify(base, m, GridSpec(radius=gr, points=grid_points, dim=dim))


FAMILIES = {
    "poly_bump": bump_potential,
    "bump": bump_potential,
    "gaussian": gaussian_potential,
    "zero": zero_potential,
    "mollified_bump": mollified_bump,
}


def potential_from_family(family: str, dim: int, params: dict) -> PotentialSpec:
    try:
        builder = FAMILIES[family]
    except KeyError:
        raise ValueError(f"unknown potential family '{family}'") from None
    params = dict(params)
    offset = params.pop("offset", None)
    spec = builder(dim, **params)
    if offset is not None:
        from .model import shifted_potential
        spec = shifted_potential(spec, np.asarray(offset, dtype=float))
    return spec
