import numpy as np
import pytest

from loopeq import kernels as K
from loopeq import loop_verify as LV
from loopeq.errors import InvalidInputError, PoleEvaluationError

from test_kernels import random_instance


class TestAscendingObservable:
    def test_empty_config(self):
        k = K.AscendingKernel(1.0, K.identity_fn(), K.affine_fn(2.0, 0.5),
                              K.affine_fn(1.0, -0.25))
        x = K.ParticleConfig(1.0, ())
        z = 1.3 + 0.4j
        expect = complex(np.asarray(k.phi_plus(z))) \
            + complex(np.asarray(k.phi_minus(z)))
        for route in ("brute", "partition"):
            assert LV.ascending_observable(k, x, z, route) \
                == pytest.approx(expect)

    def test_one_particle_value(self):
        k = K.AscendingKernel(1.0, K.identity_fn(), K.const_fn(1.0),
                              K.const_fn(1.0))
        x = K.ParticleConfig(1.0, (0.0,))
        assert LV.ascending_observable(k, x, 2.0, "brute") \
            == pytest.approx(2.0)

    def test_routes_agree_on_random_instances(self):
        worst = 0.0
        rng = np.random.default_rng(0)
        for seed in range(50):
            k, x = random_instance(seed, nmax=7)
            z = complex(rng.normal() * 3, 0.5 + rng.random())
            a = LV.ascending_observable(k, x, z, "brute")
            b = LV.ascending_observable(k, x, z, "partition")
            worst = max(worst, abs(a - b) / abs(a))
        assert worst < 1e-9

    def test_pole_evaluation_rejected(self):
        k, x = random_instance(1)
        with pytest.raises(PoleEvaluationError):
            LV.ascending_observable(k, x, complex(x.positions[0]))


class TestResidues:
    def test_all_residues_vanish(self):
        for seed in range(10):
            k, x = random_instance(seed, nmax=7)
            obs = lambda z: LV.ascending_observable(k, x, z, "partition")
            pos = x.array()
            gap = np.min(np.abs(pos[:, None] - pos[None, :])
                         + np.eye(x.n) * 1e9)
            rep = LV.holomorphy_scan(obs, pos, radius=gap / 4)
            assert rep.max_residue < 1e-8

    def test_single_particle_residue_tiny(self):
        k = K.AscendingKernel(1.0, K.identity_fn(), K.affine_fn(3.0, 0.2),
                              K.affine_fn(2.0, -0.1))
        x = K.ParticleConfig(1.0, (0.0,))
        res = LV.residue_at(k, x, 1, radius=0.25)
        assert abs(res) < 1e-12

    def test_corrupted_weight_detected(self):
        for seed in range(5):
            k, x = random_instance(seed, nmin=3, nmax=6)
            site = LV.corrupted_site_factors(x.n, site=x.n // 2, factor=2.0)
            obs = lambda z: LV.ascending_observable(k, x, z, "partition",
                                                    site_factors=site)
            pos = x.array()
            gap = np.min(np.abs(pos[:, None] - pos[None, :])
                         + np.eye(x.n) * 1e9)
            rep = LV.holomorphy_scan(obs, pos, radius=gap / 4)
            assert rep.max_residue > 1e-3

    def test_ten_percent_perturbation_detected(self):
        k, x = random_instance(8, nmin=4, nmax=5)
        site = LV.corrupted_site_factors(x.n, site=1, factor=1.1)
        obs = lambda z: LV.ascending_observable(k, x, z, "partition",
                                                site_factors=site)
        pos = x.array()
        gap = np.min(np.abs(pos[:, None] - pos[None, :]) + np.eye(x.n) * 1e9)
        rep = LV.holomorphy_scan(obs, pos, radius=gap / 4)
        assert rep.max_residue > 1e-3

    def test_geometry_error_on_big_circle(self):
        k, x = random_instance(4, nmin=3)
        from loopeq.errors import GeometryError
        with pytest.raises(GeometryError):
            LV.residue_at(k, x, 1, radius=10.0)


class TestDescendingObservable:
    def gt(self):
        x = K.ParticleConfig(1.0, (3.0, 1.0, -2.0))
        kd = K.gt_uniform_descending(x)
        pp = K.affine_fn(-x.positions[-1], 1.0)   # z - x_{n+1}
        pm = K.affine_fn(x.positions[0], -1.0)    # x_1 - z
        return kd, x, pp, pm

    def test_weight_ratio_accepted(self):
        kd, x, pp, pm = self.gt()
        LV.check_weight_ratio(kd, x, pp, pm)

    def test_weight_ratio_violation_named(self):
        kd, x, pp, pm = self.gt()
        with pytest.raises(InvalidInputError, match="lattice point"):
            LV.check_weight_ratio(kd, x, pp, K.affine_fn(5.0, -2.0))

    def test_gt_residues_vanish(self):
        kd, x, pp, pm = self.gt()
        obs = lambda z: LV.descending_observable(kd, x, z, pp, pm)
        rep = LV.holomorphy_scan(obs, LV.descending_residue_points(x),
                                 radius=0.25)
        assert rep.max_residue < 1e-8

    def test_jack_theta2_residues_vanish(self):
        x = K.ParticleConfig(2.0, (3.0, 0.0, -3.0))
        kj = K.jack_descending(x)
        pp = K.affine_fn(-x.positions[-1], 1.0)
        pm = K.affine_fn(x.positions[0] + x.theta - 1.0, -1.0)
        obs = lambda z: LV.descending_observable(kj, x, z, pp, pm)
        rep = LV.holomorphy_scan(obs, LV.descending_residue_points(x),
                                 radius=0.25)
        assert rep.max_residue < 1e-8

    def test_two_particle_direct_identity(self):
        x = K.ParticleConfig(1.0, (2.0, -1.0))
        kd = K.gt_uniform_descending(x)
        pp = K.affine_fn(-x.positions[-1], 1.0)
        pm = K.affine_fn(x.positions[0], -1.0)
        obs = lambda z: LV.descending_observable(kd, x, z, pp, pm)
        rep = LV.holomorphy_scan(obs, LV.descending_residue_points(x),
                                 radius=0.25)
        assert rep.max_residue < 1e-10


class TestPoissonObservable:
    def test_constant_rate_one_particle_identically_zero(self):
        x = K.ParticleConfig(1.0, (0.0,))
        obs = lambda z: LV.poisson_observable(x, K.const_fn(1.0), 1.0, z)
        for z in (2.0 + 1.0j, -3.0 + 0.2j, 0.5 + 2.0j):
            assert abs(obs(z)) < 1e-12

    def test_random_instance_residues(self):
        x = K.ParticleConfig(1.0, (4.0, 2.0, 0.0, -3.0))
        phi = K.affine_fn(6.0, 0.25)
        obs = lambda z: LV.poisson_observable(x, phi, 1.0, z)
        poles = np.concatenate([x.array(), x.array() + 1.0])
        rep = LV.holomorphy_scan(obs, poles, radius=0.2)
        assert rep.max_residue < 1e-9

    def test_theta_half_residues(self):
        x = K.ParticleConfig(0.5, (2.0, 0.5, -1.0))
        phi = K.affine_fn(4.0, -0.3)
        obs = lambda z: LV.poisson_observable(x, phi, 0.5, z)
        poles = np.concatenate([x.array(), x.array() + 1.0])
        rep = LV.holomorphy_scan(obs, poles, radius=0.1)
        assert rep.max_residue < 1e-9

    def test_doubled_rate_negative_control(self):
        x = K.ParticleConfig(1.0, (4.0, 2.0, 0.0, -3.0))
        phi = K.affine_fn(6.0, 0.25)
        obs = lambda z: LV.poisson_observable(x, phi, 1.0, z,
                                              rate_factors=[2.0, 1, 1, 1])
        poles = np.concatenate([x.array(), x.array() + 1.0])
        rep = LV.holomorphy_scan(obs, poles, radius=0.2)
        assert rep.max_residue > 1e-3


class TestScan:
    def test_report_fields(self):
        k, x = random_instance(2, nmin=3, nmax=4)
        obs = lambda z: LV.ascending_observable(k, x, z, "partition")
        pos = x.array()
        gap = np.min(np.abs(pos[:, None] - pos[None, :]) + np.eye(x.n) * 1e9)
        rep = LV.holomorphy_scan(obs, pos, radius=gap / 4)
        assert len(rep.residues) == x.n
        assert rep.argmax in [p for p, _ in rep.residues]
