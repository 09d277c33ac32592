import json

import numpy as np
import pytest

from visprobe.calibrate import (
    CalibrationEnv,
    calibrate_threshold,
    load_calibration_dir,
    quantile,
    save_calibration_env,
)
from visprobe.core import PipelineConfig, RegionKind, WeightVector
from visprobe.errors import EmptyCalibrationSet
from visprobe.scenes import make_engineered_calibration
from visprobe.testbed import SimPolicy, render


@pytest.fixture(scope="module")
def engineered():
    policy_scene, envs = make_engineered_calibration()
    policy = SimPolicy.from_scene(policy_scene)
    dataset = []
    for i, env_scene in enumerate(envs):
        img, masks = render(env_scene)
        dataset.append(
            CalibrationEnv(
                env_id=env_scene.name,
                image=img,
                instruction=env_scene.instruction,
                regions=(masks[f"cal-{i}"],),
            )
        )
    return policy, dataset


@pytest.fixture(scope="module")
def calib_cfg():
    return PipelineConfig(k_samples=1, weights=WeightVector.translational())


class TestQuantile:
    def test_third_quartile_example(self):
        vals = [0.001, 0.002, 0.003, 0.004, 0.006, 0.008, 0.010, 0.012]
        # hand oracle: rank (8-1)*0.75 = 5.25 -> 0.008 + 0.25*(0.010-0.008)
        assert quantile(vals, 0.75) == 0.0085

    def test_single_value(self):
        assert quantile([0.42], 0.3) == 0.42
        assert quantile([0.42], 0.9) == 0.42

    def test_boundaries(self):
        vals = [3.0, 1.0, 2.0]
        assert quantile(vals, 0.0) == 1.0
        assert quantile(vals, 1.0) == 3.0

    def test_empty_raises(self):
        with pytest.raises(EmptyCalibrationSet):
            quantile([], 0.5)

    def test_matches_numpy_linear_oracle(self):
        rng = np.random.default_rng(11)
        for n in (2, 3, 7, 100, 10_000):
            vals = rng.random(n).tolist()
            for q in (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0):
                want = float(np.quantile(vals, q))
                assert quantile(vals, q) == pytest.approx(want, abs=1e-15)


class TestCalibrateThreshold:
    def test_engineered_millimeter_fixture(self, engineered, calib_cfg):
        from visprobe.scenes import CALIBRATION_TARGETS

        policy, dataset = engineered
        report = calibrate_threshold(policy, dataset, calib_cfg, RegionKind.OBJECT, seed=0)
        deltas = sorted(s.delta for s in report.samples)
        for d, target in zip(deltas, CALIBRATION_TARGETS):
            assert d == pytest.approx(target, abs=1e-12)
        # exact agreement with the sort+interpolate oracle on the samples
        assert report.tau == quantile([s.delta for s in report.samples], 0.75)
        assert report.tau == pytest.approx(0.0085, abs=1e-12)

    def test_permutation_invariant(self, engineered, calib_cfg):
        policy, dataset = engineered
        a = calibrate_threshold(policy, dataset, calib_cfg, RegionKind.OBJECT, seed=0)
        b = calibrate_threshold(policy, dataset[::-1], calib_cfg, RegionKind.OBJECT, seed=0)
        assert a.tau == b.tau
        assert a.samples == b.samples

    def test_no_matching_kind_raises(self, engineered, calib_cfg):
        policy, dataset = engineered
        with pytest.raises(EmptyCalibrationSet):
            calibrate_threshold(policy, dataset, calib_cfg, RegionKind.BACKGROUND, seed=0)

    def test_empty_dataset_raises(self, engineered, calib_cfg):
        policy, _ = engineered
        with pytest.raises(EmptyCalibrationSet):
            calibrate_threshold(policy, [], calib_cfg, RegionKind.OBJECT, seed=0)

    def test_deployed_defaults_recorded(self):
        cfg = PipelineConfig()
        assert cfg.tau_object == 0.002
        assert cfg.tau_background == 0.001

    def test_report_json(self, engineered, calib_cfg):
        policy, dataset = engineered
        report = calibrate_threshold(policy, dataset, calib_cfg, RegionKind.OBJECT, seed=0)
        d = json.loads(report.to_json())
        assert d["schema"] == "calibration/1"
        assert d["kind"] == "object"
        assert len(d["samples"]) == 8
        assert d["tau"] == report.tau


class TestDatasetIO:
    def test_directory_roundtrip(self, tmp_path, engineered):
        _, dataset = engineered
        for env in dataset[:3]:
            save_calibration_env(tmp_path, env)
        loaded = load_calibration_dir(tmp_path)
        assert [e.env_id for e in loaded] == [e.env_id for e in dataset[:3]]
        for a, b in zip(loaded, dataset[:3]):
            assert a.image == b.image
            assert a.instruction == b.instruction
            assert len(a.regions) == len(b.regions)
            assert np.array_equal(a.regions[0].mask, b.regions[0].mask)
            assert a.regions[0].kind == b.regions[0].kind

    def test_empty_directory_raises(self, tmp_path):
        with pytest.raises(EmptyCalibrationSet):
            load_calibration_dir(tmp_path)
