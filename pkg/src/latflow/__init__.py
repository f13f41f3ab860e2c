"""latflow: harmonic-oscillator lattice dynamics at desk scale.

Core library (model, phase_space, dynamics, observables, dyson, thermo),
an HTTP service wrapping the experiment runners, and a thin CLI client.
"""

__version__ = "0.1.0"

from .model import (LatticeModel, PotentialSpec, Region, SampleSpec,
                    interaction_constant, mollify, shifted_potential,
                    validate_assumptions)
from .phase_space import (ComponentPartition, State, partition_components,
                          project_region, project_ST, rel_coords, state_axpy,
                          state_norm)
from .dynamics import (FlowGapReport, IntegratorConfig, energy, estimate_D,
                       flow, flow_gap, free_flow, gronwall_bound,
                       occupation_fraction)
from .observables import (LinearFunctional, Observable, SmoothCore, SupSampler,
                          eval_observable, poisson, pullback, resolvent,
                          sup_distance)
from .dyson import (DysonConfig, TermIndex, c0_constant, dyson_radius,
                    enumerate_terms, gamma_direct, gamma_truncated, tail_bound,
                    time_evolved_potential)
from .thermo import (ContinuityProfile, RegionNet, alpha, cauchy_gap,
                     convergence_sweep, strong_continuity_probe)

__all__ = [name for name in dir() if not name.startswith("_")]
