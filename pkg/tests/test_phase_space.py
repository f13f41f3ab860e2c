import numpy as np
import pytest

from latflow.model import LatticeModel, Region
from latflow.phase_space import (State, StateBatch, partition_components,
                                 project_region, project_ST, rel_coords,
                                 state_axpy, state_norm, state_sub)

from conftest import make_chain, random_state


def two_site_model(m=(1.0, 1.0), nu=(1.0, 1.0)):
    return LatticeModel(1, {0: m[0], 1: m[1]}, {0: nu[0], 1: nu[1]})


class TestProjection:
    def test_restriction(self):
        omega = State.of(1, {1: ([1.0], [2.0]), 2: ([3.0], [4.0])})
        out = project_region(omega, Region((1,)))
        assert out.sites() == (1,)
        np.testing.assert_array_equal(out.p(1), [1.0])
        np.testing.assert_array_equal(out.q(2), [0.0])

    def test_idempotent(self):
        omega = State.of(2, {0: ([1, 2], [3, 4]), 5: ([5, 6], [7, 8])})
        reg = Region((0, 3))
        once = project_region(omega, reg)
        twice = project_region(once, reg)
        assert state_norm(state_sub(once, twice)) == 0.0

    def test_disjoint_region_gives_zero(self):
        omega = State.of(1, {0: ([1.0], [1.0])})
        out = project_region(omega, Region((4, 5)))
        assert state_norm(out) == 0.0


class TestRelCoords:
    def test_arithmetic(self):
        model = two_site_model(m=(2.0, 4.0))
        omega = State.of(1, {0: ([2.0], [1.0]), 1: ([4.0], [1.0])})
        dp, dq = rel_coords(omega, 0, 1, model)
        np.testing.assert_allclose(dp, [0.0])
        np.testing.assert_allclose(dq, [0.0])

    def test_antisymmetry(self, rng):
        model = two_site_model(m=(1.5, 0.7))
        omega = random_state(rng, (0, 1))
        dp, dq = rel_coords(omega, 0, 1, model)
        dp2, dq2 = rel_coords(omega, 1, 0, model)
        np.testing.assert_allclose(dp, -dp2)
        np.testing.assert_allclose(dq, -dq2)

    def test_zero_state(self):
        model = two_site_model()
        dp, dq = rel_coords(State.zero(1), 0, 1, model)
        assert np.all(dp == 0) and np.all(dq == 0)

    def test_same_site_rejected(self):
        with pytest.raises(ValueError):
            rel_coords(State.zero(1), 3, 3, two_site_model())

    def test_commutes_with_project_region(self, rng):
        model = make_chain(5)
        omega = random_state(rng, range(5))
        reg = Region((1, 2, 3))
        a = rel_coords(project_region(omega, reg), 1, 2, model)
        b = rel_coords(omega, 1, 2, model)
        np.testing.assert_allclose(a[0], b[0])
        np.testing.assert_allclose(a[1], b[1])


class TestNormAxpy:
    def test_zero_norm(self):
        assert state_norm(State.zero(3)) == 0.0

    def test_single_entry(self):
        omega = State.of(2, {0: ([3.0, 0.0], [0.0, 4.0])})
        assert state_norm(omega) == pytest.approx(5.0)

    def test_axpy_cancellation(self, rng):
        omega = random_state(rng, (0, 2, 7))
        assert state_norm(state_axpy(-1.0, omega, omega)) == 0.0

    def test_union_support(self):
        a = State.of(1, {0: ([1.0], [0.0])})
        b = State.of(1, {1: ([0.0], [2.0])})
        out = state_axpy(2.0, a, b)
        assert out.support() == (0, 1)
        np.testing.assert_allclose(out.p(0), [2.0])
        np.testing.assert_allclose(out.q(1), [2.0])


class TestPartition:
    def test_single_bond_equal_frequency(self):
        model = two_site_model()
        part = partition_components(model, Region((0, 1)), [(0, 1)])
        assert part.lambda0.sites == ()
        assert [c.sites for c in part.classes] == [(0, 1)]

    def test_single_bond_unequal_frequency(self):
        model = two_site_model(nu=(1.0, 4.0))
        part = partition_components(model, Region((0, 1)), [(0, 1)])
        assert part.lambda0.sites == (0, 1)
        assert part.classes == ()

    def test_four_site_two_class_chain(self):
        # hand union-find: bonds (0,1) and (2,3), frequencies (1,1,2,2)
        model = LatticeModel(1, {i: 1.0 for i in range(4)},
                             {0: 1.0, 1: 1.0, 2: 4.0, 3: 4.0})
        part = partition_components(model, Region((0, 1, 2, 3)), [(0, 1), (2, 3)])
        assert part.lambda0.sites == ()
        assert [c.sites for c in part.classes] == [(0, 1), (2, 3)]

    def test_isolated_site_is_its_own_class(self):
        model = two_site_model()
        part = partition_components(model, Region((0, 1)), [])
        assert [c.sites for c in part.classes] == [(0,), (1,)]

    def test_relabeling_invariance(self):
        nus = {0: 1.0, 1: 1.0, 2: 4.0}
        m1 = LatticeModel(1, {i: 1.0 for i in range(3)}, nus)
        part1 = partition_components(m1, Region((0, 1, 2)), [(0, 1), (1, 2)])
        # relabel sites 0,1,2 -> 10,11,12
        m2 = LatticeModel(1, {i + 10: 1.0 for i in range(3)},
                          {k + 10: v for k, v in nus.items()})
        part2 = partition_components(m2, Region((10, 11, 12)),
                                     [(10, 11), (11, 12)])
        assert {tuple(s - 10 for s in c.sites) for c in part2.classes} == \
            {c.sites for c in part1.classes}
        assert {s - 10 for s in part2.lambda0.sites} == set(part1.lambda0.sites)

    def test_pair_outside_region_rejected(self):
        model = make_chain(4)
        with pytest.raises(ValueError):
            partition_components(model, Region((0, 1)), [(1, 2)])


class TestProjectST:
    def test_hand_t_momenta(self):
        model = LatticeModel(2, {0: 1.0, 1: 1.0}, {0: 1.0, 1: 1.0})
        part = partition_components(model, Region((0, 1)), [(0, 1)])
        omega = State.of(2, {0: ([1.0, 0.0], [0.0, 0.0]),
                             1: ([3.0, 0.0], [0.0, 0.0])})
        s, t = project_ST(omega, part, model)
        np.testing.assert_allclose(t.p(0), [2.0, 0.0])
        np.testing.assert_allclose(t.p(1), [2.0, 0.0])

    def test_fixed_points_of_idempotents(self, rng):
        model = LatticeModel(1, {0: 2.0, 1: 3.0}, {0: 2.0, 1: 3.0})
        part = partition_components(model, Region((0, 1)), [(0, 1)])
        omega = random_state(rng, (0, 1))
        s, t = project_ST(omega, part, model)
        s2, t_of_s = project_ST(s, part, model)
        assert state_norm(state_sub(s2, s)) < 1e-12
        assert state_norm(t_of_s) < 1e-12
        s_of_t, t2 = project_ST(t, part, model)
        assert state_norm(s_of_t) < 1e-12
        assert state_norm(state_sub(t2, t)) < 1e-12

    def test_sum_decomposition(self, rng):
        model = make_chain(5, masses={i: 1.0 + 0.2 * i for i in range(5)},
                           nus={i: 1.0 + 0.2 * i for i in range(5)})
        part = partition_components(model, model.sites(),
                                    model.pairs_within(model.sites()))
        omega = random_state(rng, range(5), scale=2.0)
        s, t = project_ST(omega, part, model)
        assert state_norm(state_sub(state_axpy(1.0, s, t), omega)) < 1e-12
        # S-constraints per class: sum p = 0, sum m q = 0
        for cls in part.classes:
            psum = sum(s.p(k)[0] for k in cls)
            mqsum = sum(model.mass(k) * s.q(k)[0] for k in cls)
            assert abs(psum) < 1e-12 and abs(mqsum) < 1e-12

    def test_lambda0_goes_entirely_to_s(self, rng):
        model = two_site_model(nu=(1.0, 4.0))
        part = partition_components(model, Region((0, 1)), [(0, 1)])
        omega = random_state(rng, (0, 1))
        s, t = project_ST(omega, part, model)
        assert state_norm(t) == 0.0
        assert state_norm(state_sub(s, omega)) == 0.0

    def test_support_outside_region_rejected(self, rng):
        model = make_chain(4)
        part = partition_components(model, Region((0, 1)), [(0, 1)])
        omega = random_state(rng, (0, 1, 2))
        with pytest.raises(ValueError):
            project_ST(omega, part, model)


class TestStateBatch:
    def test_roundtrip(self, rng):
        states = [random_state(rng, (0, 3), dim=2) for _ in range(5)]
        batch = StateBatch.from_states(states, 2)
        back = batch.to_states()
        for a, b in zip(states, back):
            assert state_norm(state_sub(a, b)) == 0.0

    def test_ensure_sites_adds_zeros(self, rng):
        batch = StateBatch.from_states([random_state(rng, (0,))], 1)
        bigger = batch.ensure_sites((0, 1, 2))
        assert set(bigger.sites) == {0, 1, 2}
        assert np.all(bigger.component(2, "p", 0) == 0.0)
