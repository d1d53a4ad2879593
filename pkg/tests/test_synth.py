import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvfuse.panel import ValidationError
from mvfuse.synth import (
    MAX_RADIUS,
    PRESETS,
    SimDesign,
    SimTruth,
    companion_radius,
    draw_design,
    draw_truth,
    generate,
    sample_lengths,
    simulate_var,
)


class TestDesign:
    def test_high_d10(self):
        design = draw_design("high", d=10, K=10, mean_T=50, seed=0)
        assert (design.n_common, design.n_unique) == (2, 4)

    def test_medium_d20(self):
        design = draw_design("medium", d=20, K=10, mean_T=50, seed=0)
        assert (design.n_common, design.n_unique) == (12, 12)

    def test_density_feasibility(self):
        draw_design("high", d=10, K=15, mean_T=50, seed=0)  # 2 + 15*4 = 62 <= 100
        with pytest.raises(ValidationError, match="infeasible density"):
            draw_design("high", d=10, K=30, mean_T=50, seed=0)  # 2 + 30*4 = 122 > 100

    def test_presets_share_budget(self):
        for s0, sk in PRESETS.values():
            assert s0 + sk == pytest.approx(0.06)

    def test_unknown_preset(self):
        with pytest.raises(ValidationError):
            draw_design("extreme", 10, 10, 50, 0)

    @pytest.mark.parametrize("mean_T, lo, hi", [(50, 45, 55), (200, 190, 210)])
    def test_length_ranges(self, mean_T, lo, hi):
        T = sample_lengths(mean_T, 2000, np.random.default_rng(0))
        assert min(T) == lo and max(T) == hi


@pytest.fixture(scope="module")
def truth():
    return draw_truth(draw_design("low", d=10, K=15, mean_T=200, seed=5))


class TestTruth:
    def test_decomposition_exact(self, truth):
        for k, Phi in enumerate(truth.Phi):
            np.testing.assert_array_equal(Phi.ravel(), truth.alpha0 + truth.alpha[k])

    def test_support_disjoint(self, truth):
        supports = [truth.alpha0 != 0] + [a != 0 for a in truth.alpha]
        total = np.sum(supports, axis=0)
        assert total.max() <= 1

    def test_index_sets_partition(self, truth):
        stacked = np.stack(list(truth.sets.values())).astype(int)
        assert np.all(stacked.sum(axis=0) == 1)

    def test_stationary(self, truth):
        assert all(companion_radius(Phi) < MAX_RADIUS for Phi in truth.Phi)

    def test_magnitudes(self):
        truth = draw_truth(draw_design("medium", d=10, K=10, mean_T=50, seed=1))
        vals = np.abs(np.concatenate([truth.alpha0, truth.alpha.ravel()]))
        vals = vals[vals > 0] / truth.scale
        assert vals.min() >= 0.3 - 1e-12 and vals.max() <= 0.8 + 1e-12

    def test_rescaling_triggers(self):
        # one dense subject forces a rescale of every coefficient
        design = SimDesign(d=3, K=2, p=1, T=(60, 60), n_common=4, n_unique=2, seed=0, coef_range=(0.9, 0.95))
        truth = draw_truth(design)
        assert truth.scale < 1
        assert max(companion_radius(Phi) for Phi in truth.Phi) < MAX_RADIUS
        for k, Phi in enumerate(truth.Phi):
            np.testing.assert_array_equal(Phi.ravel(), truth.alpha0 + truth.alpha[k])

    def test_json_round_trip(self, truth, tmp_path):
        truth.save(tmp_path / "truth.json")
        back = SimTruth.from_dict(json.loads((tmp_path / "truth.json").read_text()))
        np.testing.assert_array_equal(back.alpha0, truth.alpha0)
        np.testing.assert_array_equal(back.alpha, truth.alpha)
        for name, mask in truth.sets.items():
            np.testing.assert_array_equal(back.sets[name], mask)

    def test_lag_two(self):
        truth = draw_truth(draw_design("medium", d=6, K=3, mean_T=80, seed=2, p=2))
        assert truth.Phi[0].shape == (6, 12)
        assert all(companion_radius(Phi) < MAX_RADIUS for Phi in truth.Phi)


class TestGenerate:
    def test_deterministic(self):
        design = draw_design("medium", d=5, K=3, mean_T=60, seed=9)
        p1, t1 = generate(design)
        p2, t2 = generate(design)
        for a, b in zip(p1, p2):
            np.testing.assert_array_equal(a.data, b.data)
        np.testing.assert_array_equal(t1.alpha, t2.alpha)

    def test_lengths_follow_design(self):
        design = draw_design("medium", d=5, K=4, mean_T=60, seed=9)
        panels, _ = generate(design)
        assert tuple(p.T for p in panels) == design.T

    def test_truth_shared_across_sample_sizes(self):
        # the coefficient stream ignores mean_T, so replicates pair across sample sizes
        t50 = generate(draw_design("medium", 10, 10, 50, seed=4))[1]
        t200 = generate(draw_design("medium", 10, 10, 200, seed=4))[1]
        np.testing.assert_array_equal(t50.alpha0, t200.alpha0)
        np.testing.assert_array_equal(t50.alpha, t200.alpha)

    def test_white_noise_autocovariance(self):
        x = simulate_var(np.zeros((3, 3)), 20000, np.random.default_rng(0))
        lag1 = x[1:].T @ x[:-1] / len(x)
        assert np.abs(lag1).max() < 0.03

    def test_ar1_autocorrelation(self):
        x = simulate_var(np.array([[0.5]]), 10000, np.random.default_rng(1))[:, 0]
        x = x - x.mean()
        rho = (x[1:] @ x[:-1]) / (x @ x)
        assert abs(rho - 0.5) <= 0.03

    def test_noise_variances(self):
        sd = np.array([1.0, 3.0])
        x = simulate_var(np.zeros((2, 2)), 20000, np.random.default_rng(2), noise_sd=sd)
        np.testing.assert_allclose(x.std(axis=0), sd, rtol=0.03)


@given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_truth_invariants(d, p, seed):
    q = d * d * p
    n_common = max(1, q // 20)
    n_unique = max(0, (q - n_common) // 6)
    design = SimDesign(d=d, K=3, p=p, T=(40, 40, 40), n_common=n_common, n_unique=n_unique, seed=seed)
    truth = draw_truth(design)
    assert max(companion_radius(Phi) for Phi in truth.Phi) < MAX_RADIUS
    assert np.count_nonzero(truth.alpha0) == n_common
    assert all(np.count_nonzero(a) == n_unique for a in truth.alpha)
    overlap = (truth.alpha0 != 0)[None, :] & (truth.alpha != 0)
    assert not overlap.any()
