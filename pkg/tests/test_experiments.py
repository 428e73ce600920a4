import json

import numpy as np
import pytest

from vortexsde import experiments as X
from vortexsde import particles as P
from vortexsde import storage


class TestHeatReference:
    def test_density_normalization_and_moment(self):
        ax = np.linspace(-6, 6, 401)
        gx, gy = np.meshgrid(ax, ax, indexing="ij")
        h = ax[1] - ax[0]
        for t in (0.1, 0.25, 0.5):
            rho = X.heat_reference_density(t, gx, gy)
            mass = rho.sum() * h * h
            m2 = (rho * (gx**2 + gy**2)).sum() * h * h
            assert mass == pytest.approx(1.0, abs=1e-6)
            assert m2 == pytest.approx(4.0 * t, rel=1e-4)

    def test_pde_residual_small(self):
        assert X.validate_heat_reference(t=0.25) <= 0.01

    def test_residual_shrinks_with_resolution(self):
        coarse = X.validate_heat_reference(t=0.25, resolution=101)
        fine = X.validate_heat_reference(t=0.25, resolution=401)
        assert fine < coarse


@pytest.fixture(scope="module")
def small_base():
    return P.SimulationConfig(
        N=3000,
        n=20,
        dt=2e-3,
        T=0.5,
        initial_law="point",
        summation="tree",
        snapshot_stride=25,
        seed=0,
    )


class TestLambOseenStudy:
    def test_small_scale_rows(self, small_base):
        plan = X.StudyPlan(
            "lamb_oseen",
            small_base,
            seed_list=(0, 1, 2),
            tolerances={"density_l1": 0.12},  # desk-scale run; the pinned
            # tolerance is exercised at full scale in the acceptance suite
        )
        rows = X.lamb_oseen_study(plan)
        by_name = {r.name: r for r in rows}
        assert by_name["reference_pde_residual"].passed
        for t in (0.1, 0.25, 0.5):
            assert by_name[f"second_moment_t{t}"].passed
            assert by_name[f"mean_swirl_t{t}"].value > 0.0
            assert by_name[f"density_l1_t{t}"].passed
        assert by_name["weak_residual_T"].passed

    def test_rejects_nonradial_start(self, small_base):
        bad = P.SimulationConfig(**{**small_base.to_dict(), "initial_law": "gaussian"})
        with pytest.raises(X.StudyMisconfiguration):
            X.lamb_oseen_study(X.StudyPlan("lamb_oseen", bad))
        off_center = P.SimulationConfig(
            **{**small_base.to_dict(), "initial_params": {"x0": [1.0, 0.0]}}
        )
        with pytest.raises(X.StudyMisconfiguration):
            X.lamb_oseen_study(X.StudyPlan("lamb_oseen", off_center))

    def test_zero_noise_zero_kernel_point_mass_stays(self):
        cfg = P.SimulationConfig(
            N=100, n=1, dt=1e-3, T=0.01, kernel="zero", noise_scale=0.0, initial_law="point"
        )
        store = P.simulate(cfg)
        np.testing.assert_array_equal(store.snapshots, 0.0)


class TestMollificationLimitStudy:
    def test_biot_savart_gaps_decrease(self):
        base = P.SimulationConfig(
            N=3000,
            n=10,
            dt=2e-3,
            T=0.25,
            initial_law="point",
            summation="tree",
            snapshot_stride=25,
            seed=1,
        )
        rows = X.mollification_limit_study(
            X.StudyPlan("mollification", base, n_list=(10, 20, 40, 80))
        )
        assert all(r.passed for r in rows)
        gaps = [r.value for r in rows if r.name.startswith("density_gap")]
        assert gaps[-1] < 0.5 * gaps[0]

    def test_constant_kernel_noise_floor(self):
        # the zero kernel is exactly mollification-invariant: every gap is 0
        base = P.SimulationConfig(
            N=500, n=10, dt=1e-3, T=0.05, kernel="zero", initial_law="gaussian", seed=2
        )
        rows = X.mollification_limit_study(X.StudyPlan("mollification", base, n_list=(10, 20, 40)))
        gaps = [r.value for r in rows if r.name.startswith("density_gap")]
        assert all(g == 0.0 for g in gaps)
        assert all(r.passed for r in rows)

    def test_requires_three_points(self, small_base):
        with pytest.raises(X.StudyMisconfiguration):
            X.mollification_limit_study(X.StudyPlan("mollification", small_base, n_list=(10, 20)))


class TestRegimeSweep:
    def test_admissible_pairs_oracle(self):
        # local integrability of |z|^{-ap} in the plane: a p < 2
        pairs = X.admissible_pairs(1.5, (1.1, 1.25, 4.0 / 3.0, 1.5, 2.0), (4.0, 8.0))
        assert pairs and all(p < 4.0 / 3.0 for p, _ in pairs)
        pairs_bs = X.admissible_pairs(1.0, (1.5, 1.9, 2.0, 3.0), (8.0,))
        assert {p for p, _ in pairs_bs} == {1.5, 1.9}

    def test_sweep_rows(self):
        base = P.SimulationConfig(N=800, n=10, dt=1e-3, T=0.05, initial_law="uniform_ball", seed=2)
        rows = X.regime_sweep(X.StudyPlan("regime", base))
        by_name = {r.name: r for r in rows}
        assert "no admissible exponent pair with p >= 4/3" in by_name["a1.5_admissibility"].note
        assert "supercritical" in by_name["a1.0_p1.5_q16.0"].note
        # a = 0.5 admits genuinely subcritical exponent pairs
        assert any("subcritical" in r.note for r in rows if r.name.startswith("a0.5"))
        assert all("blow_up=False" in r.note for r in rows if "blow_up" in r.note)
        assert all(r.passed for r in rows)


class TestReporting:
    def test_csv_json_roundtrip(self, tmp_path):
        rows = [
            X.ToleranceRow("demo", "alpha", 1.0, 2.0, True, "ok"),
            X.ToleranceRow("demo", "beta", 3.0, 2.0, False, "too big"),
        ]
        csv_path = tmp_path / "report.csv"
        json_path = tmp_path / "summary.json"
        summary = X.write_study_report(rows, csv_path, json_path)
        assert not summary["passed"]
        assert summary["failures"] == ["beta"]
        header, body = storage.read_report(csv_path)
        assert header[:3] == ["study", "name", "value"]
        assert len(body) == 2
        with open(json_path) as fh:
            assert json.load(fh) == summary


def test_heuristic_index():
    assert X.heuristic_mollification_index(20000) == round(20000**0.25)
    assert X.heuristic_mollification_index(1) == 1
