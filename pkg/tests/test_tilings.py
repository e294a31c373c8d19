import math
import xml.dom.minidom

import numpy as np
import pytest

from loopeq import kernels as K
from loopeq import tilings as T
from loopeq.errors import (ConsistencyError, EnumerationBudgetError,
                           InvalidInputError, PositivityError)

MICRO = dict(N=2, T=3, segments=((-1, 1),), q=0.6, kappa_sq=-1.0)


def micro_spec(**kw):
    d = dict(MICRO)
    d.update(kw)
    return T.TrapezoidSpec(**d)


class TestTrapezoidSpec:
    def test_valid(self):
        spec = micro_spec()
        assert spec.r == 1
        assert spec.initial_config().positions == (0.0, -1.0)
        assert spec.final_positions() == (1.0, 0.0)

    def test_segment_sum_enforced(self):
        with pytest.raises(InvalidInputError):
            micro_spec(segments=((-1, 2),))

    def test_real_case_positivity_window(self):
        # forbidden interval between q^(T+a1-1) and q^(-(N+b_r-1))
        spec = dict(MICRO)
        spec["kappa_sq"] = 1.0  # q^1 = .6 <= 1 <= q^-2 = 2.78: forbidden
        with pytest.raises(PositivityError):
            T.TrapezoidSpec(**spec)
        spec["kappa_sq"] = 5.0  # outside the interval
        T.TrapezoidSpec(**spec)

    def test_q_one_rejected(self):
        with pytest.raises(InvalidInputError):
            micro_spec(q=1.0)


class TestQkKernel:
    def test_wall_zeros(self):
        spec = T.TrapezoidSpec(3, 5, ((-2, 1),), 0.8, -1.0)
        for t in range(spec.T):
            k = T.qk_kernel_at(spec, t)
            top = complex(np.asarray(k.phi_plus(float(spec.N - 1))))
            assert top == pytest.approx(0.0, abs=1e-14)
            left = complex(np.asarray(k.phi_minus(float(t - spec.T))))
            assert left == pytest.approx(0.0, abs=1e-14)

    def test_q_to_one_limit_uniform_measure_kernel(self):
        # q -> 1 is the uniform measure on tilings; its one-step kernel has
        # the Vandermonde-ratio interaction with the linear wall weights
        # phi+ = N-1-x and phi- = x+T-t (expand the q-affine factors to
        # first order in log q)
        t = 2
        spec = T.TrapezoidSpec(3, 6, ((-3, 0),), 1.0 - 1e-7, -1.0)
        x = spec.initial_config()
        k = T.qk_kernel_at(spec, t)
        _, probs = K.brute_force_distribution(k, x)
        ref = K.AscendingKernel(1.0, K.identity_fn(),
                                K.affine_fn(float(spec.N - 1), -1.0),
                                K.affine_fn(float(spec.T - t), 1.0))
        _, probs_ref = K.brute_force_distribution(ref, x)
        assert np.max(np.abs(probs - probs_ref)) < 1e-6

    def test_weights_single_sign(self):
        spec = micro_spec()
        x = spec.initial_config()
        _, w = K.enumerate_ascending(T.qk_kernel_at(spec, 0), x)
        signs = np.sign(np.real(w[np.abs(w) > 1e-14]))
        assert (signs == signs[0]).all()


class TestSampling:
    def test_trajectory_invariants(self):
        spec = T.TrapezoidSpec(6, 10, ((-5, -2), (0, 3)), 0.85, -1.0)
        traj = T.sample_tiling(spec, seed=1)
        assert tuple(traj.states[0]) == tuple(
            int(v) for v in spec.initial_config().positions)
        d = np.diff(traj.states, axis=0)
        assert set(np.unique(d)) <= {0, 1}
        assert tuple(float(v) for v in traj.states[-1]) \
            == spec.final_positions()

    def test_fixed_seed_reproducible(self):
        spec = micro_spec()
        t1 = T.sample_tiling(spec, seed=5)
        t2 = T.sample_tiling(spec, seed=5)
        assert np.array_equal(t1.states, t2.states)

    def test_single_path_jump_times(self):
        # N=1: jump times follow the one-particle product weights
        spec = T.TrapezoidSpec(1, 3, ((-2, -1),), 0.7, -1.0)
        trajs = T.enumerate_tilings(spec)
        assert len(trajs) == 3  # choose which 2 of 3 steps jump... C(3,2)=3
        total = sum(p for _, p in trajs)
        assert total == pytest.approx(1.0)
        # direct product computation of one trajectory's probability
        st, p = trajs[0]
        direct = math.exp(T.chain_log_probability(spec, st))
        assert p == pytest.approx(direct)

    def test_real_case_endpoint(self):
        spec = T.TrapezoidSpec(4, 6, ((-4, 0),), 0.8, 9.0)
        traj = T.sample_tiling(spec, seed=2)
        assert tuple(float(v) for v in traj.states[-1]) \
            == spec.final_positions()


class TestMicroExactness:
    def test_path_measure_equals_static_weights(self):
        for kw in (dict(), dict(q=1.3, kappa_sq=7.0),
                   dict(N=3, T=3, segments=((-3, -2), (0, 2)), q=0.7)):
            spec = micro_spec(**kw)
            trajs = T.enumerate_tilings(spec)
            assert len(trajs) <= 12
            probs = np.array([p for _, p in trajs])
            logw = np.array([T.static_log_weight(spec, st)
                             for st, _ in trajs])
            w = np.exp(logw - logw.max())
            w /= w.sum()
            assert np.max(np.abs(w - probs)) < 1e-10

    def test_empirical_frequencies(self):
        spec = micro_spec()
        trajs = T.enumerate_tilings(spec)
        probs = {tuple(st[:, 0]) + tuple(st[:, 1]): p for st, p in trajs}
        counts = dict.fromkeys(probs, 0)
        n = 20_000
        for rep in range(n):
            tr = T.sample_tiling(spec, seed=77, replica=rep)
            key = tuple(tr.states[:, 0]) + tuple(tr.states[:, 1])
            counts[key] += 1
        for key, p in probs.items():
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts[key] / n - p) < 4 * se + 1e-3


class TestHeightField:
    def test_boundary_and_monotonicity(self):
        spec = T.TrapezoidSpec(5, 8, ((-4, -2), (0, 3)), 0.9, -1.0)
        traj = T.sample_tiling(spec, seed=3)
        hf = T.height_field(traj)
        vals = hf.values
        assert (vals[:, 0] == 0).all()
        assert (vals[:, -1] == spec.N).all()
        dx = np.diff(vals, axis=1)
        assert set(np.unique(dx)) <= {0, 1}
        dt = np.diff(vals, axis=0)
        assert np.max(np.abs(dt)) <= 1

    def test_initial_column_jumps_by_segment_lengths(self):
        spec = T.TrapezoidSpec(5, 8, ((-4, -2), (0, 3)), 0.9, -1.0)
        traj = T.sample_tiling(spec, seed=3)
        hf = T.height_field(traj)
        assert hf.h(0, -4) == 0
        assert hf.h(0, -2) == 2          # first segment filled
        assert hf.h(0, 0) == 2
        assert hf.h(0, 3) == 5           # second segment adds 3

    def test_final_column_is_clamp(self):
        spec = micro_spec()
        traj = T.sample_tiling(spec, seed=9)
        hf = T.height_field(traj)
        for x in range(hf.x_lo, spec.N + 2):
            assert hf.h(spec.T, x) == min(max(x, 0), spec.N)


class TestRendering:
    def test_wellformed_and_deterministic(self):
        spec = micro_spec()
        traj = T.sample_tiling(spec, seed=11)
        svg1 = T.render_svg(traj)
        svg2 = T.render_svg(traj)
        assert svg1 == svg2
        xml.dom.minidom.parseString(svg1)

    def test_lozenge_count_matches_area(self):
        spec = T.TrapezoidSpec(4, 7, ((-3, -1), (1, 3)), 0.8, -1.0)
        traj = T.sample_tiling(spec, seed=4)
        svg = T.render_svg(traj)
        assert svg.count("<polygon") == T.lozenge_count(traj)
        # area conservation: lozenges = (total domain triangles) / 2,
        # with 2 * |column s| triangles per slab
        triangles = sum(2 * len(spec.column_sites(s))
                        for s in range(1, spec.T + 1))
        assert T.lozenge_count(traj) == triangles // 2

    def test_single_cell_domain(self):
        spec = T.TrapezoidSpec(1, 1, ((0, 1),), 0.5, -1.0)
        traj = T.sample_tiling(spec, seed=0)
        svg = T.render_svg(traj)
        assert svg.count("<polygon") == T.lozenge_count(traj) == 1


class TestGTEnumeration:
    def test_singleton(self):
        assert list(T.gt_enumerate((0,), 1)) == [((0,),)]

    def test_two_chains(self):
        chains = list(T.gt_enumerate((1, 0), 2))
        assert len(chains) == 2

    def test_count_matches_weyl_dimension(self):
        lam = (2, 1, 0)
        assert len(list(T.gt_enumerate(lam, 3))) == T.gt_count(lam) == 8

    def test_budget(self):
        with pytest.raises(EnumerationBudgetError):
            T.verify_qracah(4, (60, 40, 20, 0), 0.5 + 0.1j, 0.5)


class TestQRacah:
    def test_empty_diagram_normalized_form(self):
        lhs, rhs, rel = T.verify_qracah(3, (0, 0, 0), 1.3 - 0.2j, 0.7)
        assert rel < 1e-12

    def test_spec_point(self):
        _, _, rel = T.verify_qracah(2, (1, 0), 0.7 + 0.2j, 0.6)
        assert rel < 1e-12

    def test_three_row(self):
        rng = np.random.default_rng(0)
        sigma = complex(rng.normal(), rng.normal())
        _, _, rel = T.verify_qracah(3, (2, 1, 0), sigma,
                                    float(rng.uniform(0.3, 0.8)))
        assert rel < 1e-10

    def test_random_draws(self):
        rng = np.random.default_rng(10)
        for _ in range(60):
            n = int(rng.integers(1, 5))
            lam = tuple(sorted(rng.integers(0, 5, size=n).tolist(),
                               reverse=True))
            sigma = complex(rng.normal(), rng.normal())
            if abs(sigma) < 0.2:
                sigma += 0.5
            _, _, rel = T.verify_qracah(n, lam, sigma,
                                        float(rng.uniform(0.2, 0.9)))
            assert rel < 1e-10


class TestSODimension:
    def test_so4_vector(self):
        s, p = T.so_dimension_identity(2, (1, 0))
        assert s == 4 and p == pytest.approx(4.0)

    def test_trivial(self):
        s, p = T.so_dimension_identity(2, (0, 0))
        assert s == 1 and p == pytest.approx(1.0)

    def test_so6_vector(self):
        s, p = T.so_dimension_identity(3, (1, 0, 0))
        assert s == 6 and p == pytest.approx(6.0)

    def test_integers_match_products(self):
        rng = np.random.default_rng(2)
        for _ in range(40):
            n = int(rng.integers(1, 5))
            lam = tuple(sorted(rng.integers(0, 5, size=n).tolist(),
                               reverse=True))
            s, p = T.so_dimension_identity(n, lam)
            assert abs(s - p) < 1e-6 * max(1.0, abs(p))
