import math

import numpy as np
import pytest

from latflow.cores import ConstCore, ResolventCore, bump_core, gaussian_core
from latflow.dynamics import IntegratorConfig
from latflow.model import LatticeModel, Region
from latflow.observables import (FreeFlow, LatticeFlow, Observable, SmoothCore,
                                 SupSampler, constant_observable, eval_observable,
                                 gaussian_levee, grad_sup_estimate,
                                 observable_gradient, p_functional,
                                 pair_difference_functional, poisson, product,
                                 pullback, q_functional, resolvent,
                                 sigma_pairing, sup_distance, LinearFunctional)
from latflow.phase_space import State
from latflow.potentials import bump_potential

from conftest import make_chain, make_pair, random_state


def unit_model(sites=(0,), dim=1):
    return LatticeModel(dim, {s: 1.0 for s in sites}, {s: 1.0 for s in sites})


class TestEval:
    def test_constant(self, rng):
        f = constant_observable(2.5 - 1.0j)
        assert eval_observable(f, random_state(rng, (0, 3))) == 2.5 - 1.0j

    def test_gaussian_at_projection_zero(self):
        f = gaussian_levee([q_functional(0)])
        assert eval_observable(f, State.zero(1)) == pytest.approx(1.0)

    def test_resolvent_complex_arithmetic(self):
        f = resolvent(q_functional(0), 1.0)
        st = State.of(1, {0: ([0.0], [1.0])})
        assert eval_observable(f, st) == pytest.approx((-1 - 1j) / 2)


class TestResolvent:
    def test_modulus_bound(self, rng):
        lam = 0.7
        f = resolvent(LinearFunctional.of({(0, "q", 0): 1.3, (1, "p", 0): -0.4}),
                      lam)
        vals = f.eval_states([random_state(rng, (0, 1), scale=5.0)
                              for _ in range(200)])
        assert np.max(np.abs(vals)) <= 1.0 / abs(lam) + 1e-12

    def test_zero_functional_is_constant(self):
        f = resolvent(LinearFunctional.of({}), 2.0)
        assert eval_observable(f, State.zero(1)) == pytest.approx(-0.5j)

    def test_zero_lambda_rejected(self):
        with pytest.raises(ValueError):
            resolvent(q_functional(0), 0.0)


class TestPoisson:
    def test_hand_example(self):
        # f = e^{-p^2}, g = e^{-q^2} on one site: {f,g} = 4pq e^{-p^2-q^2}
        f = gaussian_levee([p_functional(0)])
        g = gaussian_levee([q_functional(0)])
        br = poisson(f, g, unit_model())
        for (p, q) in [(0.3, -0.7), (1.1, 0.4), (0.0, 2.0), (-0.9, -0.2)]:
            st = State.of(1, {0: ([p], [q])})
            assert eval_observable(br, st) == pytest.approx(
                4 * p * q * math.exp(-p * p - q * q), abs=1e-12)

    def test_antisymmetry_f_f(self, rng):
        f = gaussian_levee([q_functional(0), p_functional(0)])
        br = poisson(f, f, unit_model())
        for _ in range(10):
            assert abs(eval_observable(br, random_state(rng, (0,)))) < 1e-12

    def test_disjoint_sites_give_zero(self):
        f = gaussian_levee([q_functional(0)])
        g = gaussian_levee([q_functional(1), p_functional(1)])
        br = poisson(f, g, unit_model((0, 1)))
        assert br.core.is_constant
        assert eval_observable(br, State.zero(1)) == 0.0

    def test_leibniz_rule(self, rng):
        model = unit_model((0, 1))
        f = gaussian_levee([p_functional(0)])
        g = gaussian_levee([q_functional(0)])
        h = gaussian_levee([q_functional(1), p_functional(0)])
        lhs = poisson(f, product(g, h), model)
        t1 = poisson(f, h, model)
        t2 = poisson(f, g, model)
        for _ in range(20):
            st = random_state(rng, (0, 1))
            want = (eval_observable(g, st) * eval_observable(t1, st)
                    + eval_observable(t2, st) * eval_observable(h, st))
            assert abs(eval_observable(lhs, st) - want) < 1e-9

    def test_numeric_flows_rejected(self):
        model = make_pair()
        f = gaussian_levee([q_functional(0)])
        lazy = pullback(f, LatticeFlow(model, model.sites(), ((0, 1),),
                                       IntegratorConfig()), 0.5)
        with pytest.raises(ValueError, match="analytic flows"):
            poisson(lazy, f, model)

    def test_sigma_pairing_values(self):
        a = LinearFunctional.of({(0, "p", 0): 2.0})
        b = LinearFunctional.of({(0, "q", 0): 3.0})
        assert sigma_pairing(a, b) == pytest.approx(6.0)
        assert sigma_pairing(b, a) == pytest.approx(-6.0)
        assert sigma_pairing(a, a) == 0.0


class TestGradients:
    @pytest.mark.parametrize("core,arity", [
        (gaussian_core(2, widths=[1.0, 2.0]), 2),
        (gaussian_core(1, amplitude=0.5), 1),
        (bump_core(1, radius=1.5, power=8, amplitude=0.7), 1),
        (bump_core(2, radius=2.0, power=6), 2),
        (ResolventCore(1.3, arity=1), 1),
    ])
    def test_finite_difference_consistency(self, core, arity, rng):
        sc = SmoothCore(core)
        h = 1e-6
        box = 1.2 if sc.family == "bump" else 2.5
        for _ in range(100):
            x = rng.uniform(-box, box, arity)
            grad = sc.grad(x)
            for j in range(arity):
                e = np.zeros(arity)
                e[j] = h
                fd = (sc.eval(x + e) - sc.eval(x - e)) / (2 * h)
                scale = max(1.0, abs(grad[j]))
                assert abs(fd - grad[j]) / scale < 1e-5

    def test_observable_gradient_matches_fd(self, rng):
        f = gaussian_levee([pair_difference_functional(0, 1, "q"),
                            p_functional(0)])
        st = random_state(rng, (0, 1))
        grad = observable_gradient(f, st)
        h = 1e-6
        for d, val in grad.items():
            site, kind, comp = d
            entries = {s: (np.array(pq[0]), np.array(pq[1]))
                       for s, pq in st.entries.items()}
            bump_vec = entries[site][0 if kind == "p" else 1]
            bump_vec[comp] += h
            up = eval_observable(f, State.of(1, entries))
            bump_vec[comp] -= 2 * h
            dn = eval_observable(f, State.of(1, entries))
            assert abs((up - dn) / (2 * h) - val) < 1e-6


class TestPullback:
    def test_t_zero_identity(self):
        f = gaussian_levee([q_functional(0)])
        assert pullback(f, FreeFlow(unit_model()), 0.0) is f

    def test_radial_core_rotation_invariance(self, rng):
        # m = nu = 1: the (p,q) rotation preserves a radial core over (p0, q0)
        model = unit_model()
        f = gaussian_levee([p_functional(0), q_functional(0)])
        for t in (0.4, 1.3):
            g = pullback(f, FreeFlow(model), t)
            for _ in range(10):
                st = random_state(rng, (0,))
                assert abs(eval_observable(g, st)
                           - eval_observable(f, st)) < 1e-12

    def test_group_property_as_levees(self):
        model = LatticeModel(1, {0: 1.7}, {0: 0.6})
        f = gaussian_levee([q_functional(0), p_functional(0)])
        a = pullback(pullback(f, FreeFlow(model), 0.3), FreeFlow(model), 0.9)
        b = pullback(f, FreeFlow(model), 1.2)
        for fa, fb in zip(a.projection, b.projection):
            ca, cb = dict(fa.coeffs), dict(fb.coeffs)
            assert set(ca) == set(cb)
            for k in ca:
                assert ca[k] == pytest.approx(cb[k], abs=1e-12)

    def test_invariant_observable(self):
        # two non-interacting unit oscillators: exp(-(p1-p2)^2-(q1-q2)^2)
        model = unit_model((1, 2))
        f = gaussian_levee([pair_difference_functional(1, 2, "p"),
                            pair_difference_functional(1, 2, "q")])
        samp = SupSampler.for_region(Region((1, 2)), 1, box=3.0,
                                     axis_points=9, mc_samples=128)
        for t in (0.3, 1.0, 2.7):
            g = pullback(f, FreeFlow(model), t)
            assert sup_distance(g, f, samp).value <= 1e-9

    def test_lattice_flow_without_pairs_simplifies(self):
        model = unit_model((0, 1))
        f = gaussian_levee([q_functional(0)])
        g = pullback(f, LatticeFlow(model, Region((0, 1)), (),
                                    IntegratorConfig()), 0.7)
        assert not g.post_flows  # exact levee, no lazy step

    def test_region_restricted_rotation(self, rng):
        # sites outside the flow's region stay fixed
        model = unit_model((0, 1))
        f = gaussian_levee([q_functional(1)])
        g = pullback(f, FreeFlow(model, Region((0,))), 1.0)
        st = random_state(rng, (0, 1))
        assert eval_observable(g, st) == eval_observable(f, st)


class TestSupDistance:
    def test_identical_observables(self):
        f = gaussian_levee([q_functional(0)])
        samp = SupSampler.for_observable(f, 1)
        assert sup_distance(f, f, samp).value == 0.0

    def test_constants(self):
        a, b = constant_observable(1.5), constant_observable(-0.5)
        samp = SupSampler(((0, "q", 0),), 1, mc_samples=16, axis_points=3)
        assert sup_distance(a, b, samp).value == pytest.approx(2.0)

    def test_gaussian_vs_zero(self):
        f = gaussian_levee([q_functional(0)])
        samp = SupSampler.for_observable(f, 1, box=6.0, axis_points=33,
                                         mc_samples=256)
        est = sup_distance(f, constant_observable(0.0), samp)
        assert est.value == pytest.approx(1.0, abs=1e-9)
        # argmax reported at the peak
        assert abs(est.argmax.q(0)[0]) < 1e-12

    def test_bracket_gradient_bound(self, rng):
        # |{f, V_t}|_inf <= C0 |grad V|_inf |grad f|_inf on sampled boxes
        from latflow.dyson import c0_constant, time_evolved_potential
        model = make_pair(amplitude=0.8, radius=2.0, m=(1.0, 2.0), nu=(1.0, 0.5))
        f = gaussian_levee([q_functional(0), p_functional(0)])
        reg = model.sites()
        samp = SupSampler.for_region(reg, 1, box=5.0, axis_points=9,
                                     mc_samples=512)
        c0 = c0_constant(model, reg)
        gsup_v = model.pair_spec(0, 1).grad_sup
        gsamp = SupSampler.for_region(reg, 1, box=5.0, axis_points=65,
                                      mc_samples=512)
        gsup_f = grad_sup_estimate(f, gsamp)
        for t in (0.0, 0.7, 2.1):
            vt = time_evolved_potential(model, 0, 1, t)
            br = poisson(f, vt, model)
            est = sup_distance(br, constant_observable(0.0), samp)
            assert est.value <= c0 * gsup_v * gsup_f * (1 + 1e-9)
