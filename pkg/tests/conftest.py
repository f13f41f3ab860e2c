import numpy as np
import pytest

from latflow.model import LatticeModel, PotentialSpec, Region
from latflow.phase_space import State
from latflow.potentials import bump_potential


def make_chain(n_sites, amplitude=0.5, radius=2.0, power=8, dim=1,
               masses=None, nus=None, potential=None):
    """Nearest-neighbor chain with identical bonds (the workhorse model)."""
    masses = masses or {i: 1.0 for i in range(n_sites)}
    nus = nus or {i: 1.0 for i in range(n_sites)}
    bond = potential or bump_potential(dim, amplitude=amplitude, radius=radius,
                                       power=power)
    interactions = {(i, i + 1): bond for i in range(n_sites - 1)}
    return LatticeModel(dim, masses, nus, interactions,
                        global_C=2 * bond.grad_sup * (1 + 1e-12))


def make_pair(amplitude=0.5, radius=2.0, power=8, dim=1,
              m=(1.0, 1.0), nu=(1.0, 1.0), potential=None):
    bond = potential or bump_potential(dim, amplitude=amplitude, radius=radius,
                                       power=power)
    return LatticeModel(dim, {0: m[0], 1: m[1]}, {0: nu[0], 1: nu[1]},
                        {(0, 1): bond}, global_C=bond.grad_sup * (1 + 1e-12))


def declared_potential(dim, grad_sup, grad_lipschitz=1.0):
    """Inert potential carrying only declared constants (for row-sum tests)."""
    return PotentialSpec(
        eval=lambda x: np.zeros(np.asarray(x).shape[:-1]),
        grad=lambda x: np.zeros(np.asarray(x).shape),
        grad_sup=grad_sup, grad_lipschitz=grad_lipschitz,
        support_radius=1.0, family="declared", params={})


def random_state(rng, sites, dim=1, scale=1.0):
    return State.of(dim, {s: (scale * rng.standard_normal(dim),
                              scale * rng.standard_normal(dim)) for s in sites})


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
