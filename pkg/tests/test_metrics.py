import itertools

import numpy as np
import pytest

from sldsica.errors import MissingGroundTruth, ShapeMismatch
from sldsica.metrics import (
    MccReport,
    brute_force_assignment,
    denoise_score,
    mcc,
)


def test_mcc_identical_sources():
    rng = np.random.default_rng(0)
    s = rng.standard_normal((500, 3))
    report = mcc(s, s)
    assert report.score == pytest.approx(1.0, abs=1e-12)
    assert np.array_equal(report.assignment, [0, 1, 2])


def test_mcc_invariant_to_permutation_sign_scale():
    rng = np.random.default_rng(1)
    s = rng.standard_normal((400, 4))
    perm = [2, 0, 3, 1]
    transformed = s[:, perm] * np.array([-1.0, 2.5, -0.3, 7.0])
    report = mcc(s, transformed)
    assert report.score == pytest.approx(1.0, abs=1e-12)
    # recover the inverse permutation
    assert np.array_equal(report.assignment, np.argsort(perm))


def test_mcc_symmetric_in_arguments():
    rng = np.random.default_rng(2)
    a = rng.standard_normal((300, 3))
    b = a @ rng.standard_normal((3, 3)) + 0.1 * rng.standard_normal((300, 3))
    assert mcc(a, b).score == pytest.approx(mcc(b, a).score, abs=1e-12)


def test_mcc_independent_noise_is_small():
    rng = np.random.default_rng(3)
    scores = []
    for _ in range(100):
        a = rng.standard_normal((10_000, 3))
        b = rng.standard_normal((10_000, 3))
        scores.append(mcc(a, b).score)
    # expected |r| for independent Gaussians is sqrt(2/(pi T)) ~ 0.008;
    # the max-over-assignment inflates it a little, still well under 0.05
    assert np.mean(scores) < 0.05
    assert max(scores) < 0.05


def test_mcc_zero_variance_column_contributes_zero():
    rng = np.random.default_rng(4)
    s_true = rng.standard_normal((100, 2))
    s_est = s_true.copy()
    s_est[:, 1] = 3.14  # constant
    report = mcc(s_true, s_est)
    assert report.per_pair[1] == 0.0
    assert report.score == pytest.approx(report.per_pair.mean())


def test_mcc_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        mcc(np.zeros((10, 2)), np.zeros((10, 3)))
    with pytest.raises(ShapeMismatch):
        mcc(np.zeros((2, 2)), np.zeros((2, 2)))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
@pytest.mark.parametrize("seed", range(5))
def test_assignment_matches_brute_force(n, seed):
    rng = np.random.default_rng(100 * n + seed)
    s_true = rng.standard_normal((200, n))
    mix = rng.standard_normal((n, n))
    s_est = s_true @ mix
    report = mcc(s_true, s_est)
    perm, best = brute_force_assignment(report.corr_matrix)
    assert report.score == pytest.approx(best, abs=1e-12)
    # the matched total must be optimal (assignment itself may tie)
    total = report.corr_matrix[np.arange(n), report.assignment].sum()
    assert total == pytest.approx(best * n, abs=1e-12)


def test_assignment_lexicographic_tie_break():
    # two identical columns: both assignments optimal, pick the smallest
    corr = np.array([[0.5, 0.5], [0.5, 0.5]])
    from sldsica.metrics import _lexicographic_optimal_assignment

    assignment = _lexicographic_optimal_assignment(-corr)
    assert np.array_equal(assignment, [0, 1])


def test_mcc_spearman_flag():
    rng = np.random.default_rng(5)
    s = rng.standard_normal((500, 2))
    monotone = np.tanh(s * 2.0) ** 3  # strictly monotone distortion
    pear = mcc(s, monotone).score
    spear = mcc(s, monotone, method="spearman").score
    assert spear == pytest.approx(1.0, abs=1e-12)
    assert pear < spear


def test_denoise_requires_ground_truth():
    from sldsica.model import Dataset

    data = Dataset(x=np.zeros((10, 2)))
    with pytest.raises(MissingGroundTruth):
        denoise_score(data, None, None)


def test_denoise_score_with_true_model_is_high():
    # true decoder + true params + exact surrogates ~ near-perfect denoising
    from sldsica.model import SimConfig, default_params, simulate
    from sldsica.nets import init_mlp

    cfg = SimConfig(T=2000, N=2, M=6, K=2, mixing_layers=1, obs_noise=0.05, seed=9)
    params = default_params(cfg)
    data = simulate(cfg, params=params)
    # an untrained encoder cannot be used here; instead exploit linearity:
    # least-squares pseudo-inverse surrogates mimic a converged encoder
    w_mix = params.decoder.layers[0][0]
    pinv = np.linalg.pinv(w_mix)
    s_proj = data.x @ pinv.T
    resid = data.x - s_proj @ w_mix.T
    noise_per_comp = params.obs_noise_diag.mean() * np.sum(pinv**2, axis=1)
    from sldsica.nets import EncoderOutput
    from sldsica.inference import mean_field_cycle
    from sldsica.metrics import _abs_corr
    from sldsica.nets import decoder_forward

    enc_out = EncoderOutput(
        v=s_proj / noise_per_comp,
        w=np.tile(-0.5 / noise_per_comp, (cfg.T, 1)),
    )
    dummy = init_mlp(6, 4, 1, 4, np.random.default_rng(0), "relu")
    res = mean_field_cycle(data.x, params, dummy, inner_iters=6, enc_out=enc_out)
    s_hat = np.stack([c.q_y.means[:, 0] for c in res.components], axis=1)
    f_hat = decoder_forward(params.decoder, s_hat)
    score = np.mean(
        [_abs_corr(f_hat[:, m], data.f_s[:, m]) for m in range(cfg.M)]
    )
    assert score > 0.95
    _ = resid


def test_constant_prediction_scores_zero():
    from sldsica.metrics import _abs_corr

    assert _abs_corr(np.ones(100), np.random.default_rng(0).standard_normal(100)) == 0.0
