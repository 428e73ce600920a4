import math

import numpy as np
import pytest

from vortexsde import kernels as K
from vortexsde import particles as P
from vortexsde import spaces as S
from vortexsde.treecode import tree_drift_biot_savart


class TestSimulationConfig:
    def test_valid_roundtrip_hash(self):
        a = P.SimulationConfig(N=100, n=10, dt=1e-3, T=0.1)
        b = P.SimulationConfig(N=100, n=10, dt=1e-3, T=0.1)
        assert a.config_hash() == b.config_hash()

    def test_hash_changes_with_any_field(self):
        base = P.SimulationConfig(N=100, n=10, dt=1e-3, T=0.1)
        for change in (
            dict(N=101),
            dict(seed=1),
            dict(theta=0.7),
            dict(noise_scale=0.0),
            dict(kernel="zero"),
        ):
            other = P.SimulationConfig(**{**base.to_dict(), **change})
            assert other.config_hash() != base.config_hash()

    def test_rejects_bad_fields(self):
        good = dict(N=10, n=10, dt=1e-3, T=0.1)
        for bad in (
            dict(dt=0.0),
            dict(dt=-1e-3),
            dict(T=1e-4),
            dict(N=0),
            dict(theta=0.0),
            dict(theta=1.5),
            dict(summation="magic"),
            dict(initial_law="cauchy"),
            dict(self_interaction="sometimes"),
            dict(snapshot_stride=0),
        ):
            with pytest.raises(K.ConfigurationError):
                P.SimulationConfig(**{**good, **bad})

    def test_step_count(self):
        cfg = P.SimulationConfig(N=10, n=10, dt=1e-3, T=0.5)
        assert cfg.n_steps == 500


class TestEmpiricalDrift:
    def test_symmetric_pair_oracle(self):
        # hand evaluation: (1/2) K_2((2,0)) = (0, 1/(8 pi))
        kn = K.mollify(K.BiotSavartKernel(), 10)
        ens = np.array([[1.0, 0.0], [-1.0, 0.0]])
        got = P.empirical_drift(0.0, np.array([1.0, 0.0]), ens, kn, self_index=0)
        np.testing.assert_allclose(got, [0.0, 1.0 / (8.0 * np.pi)], rtol=1e-14)

    def test_single_particle_empty_sum(self):
        kn = K.mollify(K.BiotSavartKernel(), 10)
        got = P.empirical_drift(0.0, np.array([0.3, 0.7]), np.array([[0.3, 0.7]]), kn, self_index=0)
        np.testing.assert_array_equal(got, 0.0)

    def test_repeated_source_scales_linearly(self):
        kn = K.mollify(K.BiotSavartKernel(), 10)
        y0 = np.array([1.0, 1.0])
        x = np.array([0.0, 0.0])
        m, extra = 7, 3
        ens = np.vstack([np.tile(y0, (m, 1)), np.tile(x, (extra, 1))])
        got = P.empirical_drift(0.0, x, ens, kn, self_index=m)
        expected = kn.evaluate_displacement(x - y0) * m / len(ens)
        np.testing.assert_allclose(got, expected, rtol=1e-14)


class TestStep:
    def test_zero_kernel_noise_statistics(self):
        cfg = P.SimulationConfig(N=100_000, n=1, dt=1.0, T=1.0, kernel="zero", seed=11)
        store = P.simulate(cfg)
        inc = store.snapshots[1] - store.snapshots[0]
        assert np.all(np.abs(inc.mean(axis=0)) <= 4.0 / math.sqrt(cfg.N))
        np.testing.assert_allclose(inc.var(axis=0), 2.0, rtol=0.02)

    def test_two_vortex_rotation(self):
        # zero-noise hook: the symmetric pair rotates, radius drift O(dt) per revolution
        dt = 1e-3
        cfg = P.SimulationConfig(N=2, n=10, dt=dt, T=1.0, noise_scale=0.0)
        kern = P.build_kernel(cfg)
        ens = P.ParticleEnsemble(np.array([[1.0, 0.0], [-1.0, 0.0]]), 0.0, cfg.seed, 0)
        # angular speed of the pair: |u| / radius = 1/(8 pi); one revolution
        omega = 1.0 / (8.0 * np.pi)
        n_steps = int(2.0 * np.pi / omega / dt)
        for _ in range(min(n_steps, 2000)):
            prev = ens.positions.copy()
            ens = P.step(ens, kern, cfg)
            move = ens.positions - prev
            sep = prev[0] - prev[1]
            # motion perpendicular to the separation axis
            cos = np.abs(np.einsum("ij,j->i", move, sep)) / (
                np.linalg.norm(move, axis=1) * np.linalg.norm(sep)
            )
            assert np.all(cos <= 5e-4)
        radii = np.linalg.norm(ens.positions, axis=1)
        assert np.all(np.abs(radii - 1.0) <= 10.0 * dt)
        np.testing.assert_allclose(radii[0], radii[1], rtol=1e-12)

    def test_blow_up_detected_with_diagnostics(self):
        # noise amplitude overflowing float64 guarantees a non-finite update
        cfg = P.SimulationConfig(N=4, n=10, dt=1.0, T=1.0, noise_scale=1e308)
        kern = P.build_kernel(cfg)
        ens = P.ParticleEnsemble(np.zeros((4, 2)), 0.0, cfg.seed, 0)
        with pytest.raises(P.BlowUpError) as err:
            P.step(ens, kern, cfg)
        assert err.value.step_index == 0
        assert len(err.value.particle_indices) >= 1

    def test_nonfinite_ensemble_rejected(self):
        with pytest.raises(P.BlowUpError):
            P.ParticleEnsemble(np.array([[np.nan, 0.0]]), 0.0, 0, 0)


@pytest.fixture(scope="module")
def cloud():
    rng = np.random.default_rng(2)
    return rng.standard_normal((500, 2))


class TestInvariants:
    def test_permutation_equivariance(self, cloud):
        cfg = P.SimulationConfig(N=500, n=20, dt=1e-3, T=0.1)
        kern = P.build_kernel(cfg)
        drift = P.drift_all(0.0, cloud, kern, cfg)
        perm = np.random.default_rng(3).permutation(500)
        drift_perm = P.drift_all(0.0, cloud[perm], kern, cfg)
        # summands are identical; only the accumulation order changes
        np.testing.assert_allclose(drift_perm, drift[perm], rtol=0, atol=1e-14)

    def test_total_drift_cancels(self, cloud):
        # odd kernel with self-exclusion: pairwise antisymmetric summands
        cfg = P.SimulationConfig(N=500, n=20, dt=1e-3, T=0.1)
        drift = P.drift_all(0.0, cloud, P.build_kernel(cfg), cfg)
        assert np.max(np.abs(drift.sum(axis=0))) <= 1e-12

    def test_centroid_is_brownian(self):
        cfg = P.SimulationConfig(
            N=64, n=10, dt=1e-3, T=0.05, initial_law="gaussian", seed=5
        )
        store = P.simulate(cfg)
        centroids = store.snapshots.mean(axis=1)
        # centroid increments equal the averaged injected noise exactly
        scale = math.sqrt(2.0 * cfg.dt)
        for k in range(len(centroids) - 1):
            xi = P.noise_increments(cfg.seed, k, cfg.N, cfg.d).mean(axis=0)
            np.testing.assert_allclose(
                centroids[k + 1] - centroids[k], scale * xi, atol=1e-14
            )

    def test_quadratic_variation_single_path(self):
        T, dt = 4.0, 1e-3
        cfg = P.SimulationConfig(N=1, n=1, dt=dt, T=T, kernel="zero", seed=7)
        store = P.simulate(cfg)
        inc = np.diff(store.snapshots[:, 0, :], axis=0)
        qv = (inc**2).sum(axis=0)
        n_inc = len(inc)
        se = 2.0 * T * math.sqrt(2.0 / n_inc)  # stderr of the realized QV
        assert np.all(np.abs(qv - 2.0 * T) <= 3.0 * se)

    def test_drift_norm_bounded_by_majorant(self):
        # ||b_n(0, ., mu_hat)||_{p,loc} <= ||h||_{L^p(B_4)} uniformly in n:
        # the drift is a convex combination of kernel translates and
        # |K_n| <= h pointwise
        rng = np.random.default_rng(4)
        pos = rng.standard_normal((2000, 2)) * 0.4
        ax = np.linspace(-3.5, 3.5, 141)
        gx, gy = np.meshgrid(ax, ax, indexing="ij")
        grid = np.stack([gx.ravel(), gy.ravel()], axis=-1)
        r = np.sqrt(gx**2 + gy**2)
        taper = np.where(r <= 2.0, 1.0, np.maximum(0.0, 3.0 - r))
        bound = K.majorant_integrability(
            K.BiotSavartKernel(), 1.5, inner_radius=0.0, outer_radius=4.0
        ) ** (1.0 / 1.5)
        spec = S.LocalizedNormSpec(alpha=0, p=1.5, r=1.0)
        for n in (10, 20, 40):
            b = tree_drift_biot_savart(pos, n, 0.2, targets=grid).reshape(141, 141, 2)
            f = S.GriddedFunction(np.linalg.norm(b, axis=-1) * taper, (ax, ax))
            assert S.localized_norm(f, spec) <= 1.2 * bound


class TestSimulate:
    def test_single_particle_pure_brownian(self):
        cfg = P.SimulationConfig(N=1, n=10, dt=1e-2, T=0.1, seed=3)
        store = P.simulate(cfg)
        scale = math.sqrt(2.0 * cfg.dt)
        # replay the counter-based stream: the path is bitwise reproducible
        x = np.zeros(2)
        for k in range(10):
            x = x + 0.0 * cfg.dt + scale * P.noise_increments(cfg.seed, k, 1, 2)[0]
            np.testing.assert_array_equal(store.snapshots[k + 1, 0], x)

    def test_snapshot_count_and_stride(self):
        cfg = P.SimulationConfig(N=8, n=10, dt=1e-2, T=0.1, snapshot_stride=3, kernel="zero")
        store = P.simulate(cfg)
        assert len(store.times) == 10 // 3 + 1
        assert np.all(np.diff(store.times) > 0)

    def test_deterministic_across_thread_counts(self):
        import numba

        cfg = P.SimulationConfig(
            N=600, n=20, dt=1e-3, T=0.01, initial_law="uniform_ball", summation="tree", seed=9
        )
        numba.set_num_threads(1)
        one = P.simulate(cfg)
        numba.set_num_threads(numba.config.NUMBA_NUM_THREADS)
        many = P.simulate(cfg)
        assert one.snapshots.tobytes() == many.snapshots.tobytes()

    def test_tree_matches_direct_drift(self):
        cfg_d = P.SimulationConfig(
            N=1500, n=20, dt=1e-3, T=0.01, initial_law="uniform_ball", seed=10
        )
        cfg_t = P.SimulationConfig(**{**cfg_d.to_dict(), "summation": "tree", "theta": 0.3})
        d = P.simulate(cfg_d)
        t = P.simulate(cfg_t)
        gap = np.max(np.abs(d.final_positions - t.final_positions))
        assert gap <= 1e-5

    def test_store_roundtrip(self, tmp_path):
        cfg = P.SimulationConfig(N=32, n=10, dt=1e-3, T=0.01, initial_law="gaussian", seed=6)
        store = P.simulate(cfg)
        path = tmp_path / "run.vsde"
        store.save(path)
        back = P.TrajectoryStore.load(path)
        np.testing.assert_array_equal(back.snapshots, store.snapshots)
        np.testing.assert_array_equal(back.times, store.times)
        assert back.config_hash == store.config_hash
        assert back.seed == store.seed

    def test_empirical_initial_law(self, tmp_path):
        cfg = P.SimulationConfig(N=32, n=10, dt=1e-3, T=0.01, initial_law="gaussian", seed=6)
        store = P.simulate(cfg)
        path = tmp_path / "warm.vsde"
        store.save(path)
        cfg2 = P.SimulationConfig(
            N=32,
            n=10,
            dt=1e-3,
            T=0.01,
            initial_law="empirical",
            initial_params={"path": str(path)},
            seed=7,
        )
        np.testing.assert_array_equal(P.initial_positions(cfg2), store.final_positions)

    def test_initial_laws_statistics(self):
        cfg = P.SimulationConfig(
            N=50_000,
            n=10,
            dt=1e-3,
            T=1e-3,
            initial_law="uniform_ball",
            initial_params={"radius": 2.0},
            seed=8,
        )
        pos = P.initial_positions(cfg)
        rr = np.linalg.norm(pos, axis=1)
        assert rr.max() <= 2.0
        # area law: P(|X| <= s) = (s/2)^2
        assert np.mean(rr <= 1.0) == pytest.approx(0.25, abs=0.01)

    def test_point_mass_start_stays_finite(self):
        # atomic start: first-step drift is exactly 0, diffusion spreads the mass
        cfg = P.SimulationConfig(N=256, n=20, dt=1e-3, T=0.01, initial_law="point", seed=12)
        store = P.simulate(cfg)
        assert np.all(np.isfinite(store.snapshots))
        assert np.all(store.snapshots[0] == 0.0)
        assert np.std(store.snapshots[-1]) > 0.0
