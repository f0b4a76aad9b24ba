import numpy as np
import pytest

from sldsica.assumptions import (
    AssumptionReport,
    Density1D,
    check_a1_tail,
    check_a2_hmm,
    check_a3_range,
    check_b_two_state,
    cross_derivative_identity,
    diagnose_model,
    gaussian_density,
    mixture_density,
    stationary_component_densities,
    two_state_pair_density,
)
from sldsica.model import SimConfig, default_params, simulate
from sldsica.nets import MlpWeights, init_mlp


# -- A2 (HMM specialization) ------------------------------------------------


def test_a2_textbook_nondegenerate_passes():
    rep = check_a2_hmm(
        pi=np.array([0.5, 0.5]),
        trans=np.array([[0.9, 0.1], [0.1, 0.9]]),
        emissions=[(0.0, 1.0), (3.0, 1.0)],
    )
    assert rep.passed == "pass"


def test_a2_identical_emissions_fail():
    rep = check_a2_hmm(
        pi=np.array([0.5, 0.5]),
        trans=np.array([[0.9, 0.1], [0.1, 0.9]]),
        emissions=[(1.0, 2.0), (1.0, 2.0)],
    )
    assert rep.passed == "fail"
    assert rep.evidence["gram_min_eigenvalue"] < 1e-8
    # the other two conditions individually hold
    assert rep.evidence["min_singular_value"] > 1e-8
    assert rep.evidence["min_initial_mass"] > 1e-8


def test_a2_rank_deficient_transitions_fail():
    rep = check_a2_hmm(
        pi=np.array([0.5, 0.5]),
        trans=np.array([[0.5, 0.5], [0.5, 0.5]]),
        emissions=[(0.0, 1.0), (3.0, 1.0)],
    )
    assert rep.passed == "fail"
    assert rep.evidence["min_singular_value"] < 1e-8
    assert rep.evidence["gram_min_eigenvalue"] > 1e-8


def test_a2_gram_matches_closed_form_inner_products():
    # quadrature Gram vs the analytic Gaussian product integral
    emissions = [(0.0, 1.0), (1.5, 0.5)]
    rep = check_a2_hmm(
        pi=np.array([0.6, 0.4]),
        trans=np.array([[0.8, 0.2], [0.3, 0.7]]),
        emissions=emissions,
    )

    def inner(e1, e2):
        m1, v1 = e1
        m2, v2 = e2
        var = v1 + v2
        return np.exp(-0.5 * (m1 - m2) ** 2 / var) / np.sqrt(2 * np.pi * var)

    gram = np.array([[inner(a, b) for b in emissions] for a in emissions])
    gram = gram / np.max(np.diag(gram))
    expect_min_eig = float(np.min(np.linalg.eigvalsh(gram)))
    assert rep.evidence["gram_min_eigenvalue"] == pytest.approx(
        expect_min_eig, rel=1e-6
    )


# -- B (two-state proportionality) ------------------------------------------


GRID = np.linspace(-8, 8, 2001)


def test_b_distinct_gaussians_pass():
    rep = check_b_two_state(gaussian_density(0, 1), gaussian_density(1, 1), GRID)
    assert rep.passed == "pass"


def test_b_proportional_fails():
    g = gaussian_density(0.3, 1.7)
    rep = check_b_two_state(g, g, GRID)
    assert rep.passed == "fail"


def test_b_gaussian_vs_mixture_passes():
    mix = mixture_density(
        [0.5, 0.5], [gaussian_density(-2, 1), gaussian_density(2, 1)]
    )
    rep = check_b_two_state(gaussian_density(0, 1), mix, GRID)
    assert rep.passed == "pass"


def test_b_locally_proportional_fails():
    # densities equal on an interval but globally linearly independent
    g = gaussian_density(0, 1)

    def bump(a):
        out = np.zeros_like(a)
        mask = np.abs(a) > 2.0
        out[mask] = 0.5 * np.sign(a[mask]) * np.exp(-((np.abs(a[mask]) - 2.0) ** 2))
        return out

    def dbump(a):
        out = np.zeros_like(a)
        mask = np.abs(a) > 2.0
        delta = np.abs(a[mask]) - 2.0
        out[mask] = -2.0 * delta * np.exp(-(delta**2)) * 0.5
        return out

    g2 = Density1D(
        pdf=lambda a: g.pdf(a) * (1.0 + bump(a)),
        dpdf=lambda a: g.dpdf(a) * (1.0 + bump(a)) + g.pdf(a) * dbump(a),
    )
    rep = check_b_two_state(g, g2, GRID)
    assert rep.passed == "fail"  # flat on |a| <= 2, over 5% of the grid


def test_b_scale_invariance():
    # rescaling the argument consistently must not change the verdict
    g0 = gaussian_density(0, 1)
    g1 = gaussian_density(1, 2)
    rep1 = check_b_two_state(g0, g1, GRID)
    c = 3.0
    g0s = Density1D(pdf=lambda a: g0.pdf(a / c) / c, dpdf=lambda a: g0.dpdf(a / c) / c**2)
    g1s = Density1D(pdf=lambda a: g1.pdf(a / c) / c, dpdf=lambda a: g1.dpdf(a / c) / c**2)
    rep2 = check_b_two_state(g0s, g1s, GRID * c)
    assert rep1.passed == rep2.passed == "pass"
    g_same = gaussian_density(0.5, 1.0)
    rep3 = check_b_two_state(g_same, g_same, GRID)
    g_same_s = Density1D(
        pdf=lambda a: g_same.pdf(a / c) / c, dpdf=lambda a: g_same.dpdf(a / c) / c**2
    )
    rep4 = check_b_two_state(g_same_s, g_same_s, GRID * c)
    assert rep3.passed == rep4.passed == "fail"


# -- cross-derivative identity ----------------------------------------------


def test_cross_derivative_one_step_mixing_is_zero():
    # p + q = 1: consecutive observations are independent
    closed, numeric = cross_derivative_identity(
        0.4, 0.6, gaussian_density(0, 1), gaussian_density(2, 1), 0.5, 1.0
    )
    assert closed == 0.0
    assert abs(numeric) < 1e-6


def test_cross_derivative_identical_emissions_zero():
    g = gaussian_density(0.7, 1.3)
    closed, numeric = cross_derivative_identity(0.1, 0.2, g, g, 0.5, 1.0)
    assert closed == 0.0
    assert abs(numeric) < 1e-6


def test_cross_derivative_closed_vs_numeric_example():
    closed, numeric = cross_derivative_identity(
        0.1, 0.1, gaussian_density(0, 1), gaussian_density(2, 1), 0.5, 1.0
    )
    assert abs(closed - numeric) < 1e-5 * max(1.0, abs(closed))
    assert closed != 0.0


def test_cross_derivative_identity_hundred_random_instances():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        p = float(rng.uniform(0.05, 0.45))
        q = float(rng.uniform(0.05, 0.45))
        g0 = gaussian_density(float(rng.uniform(-1, 1)), float(rng.uniform(0.5, 2.0)))
        g1 = gaussian_density(float(rng.uniform(-1, 1)), float(rng.uniform(0.5, 2.0)))
        a = float(rng.uniform(-1.5, 1.5))
        b = float(rng.uniform(-1.5, 1.5))
        closed, numeric = cross_derivative_identity(p, q, g0, g1, a, b)
        rel = abs(closed - numeric) / max(1.0, abs(closed))
        worst = max(worst, rel)
    assert worst < 1e-5


def test_pair_density_normalizes():
    g0 = gaussian_density(0, 1)
    g1 = gaussian_density(2, 0.5)
    p2 = two_state_pair_density(0.2, 0.3, g0, g1)
    grid = np.linspace(-10, 10, 801)
    dx = grid[1] - grid[0]
    val = p2(grid[:, None], grid[None, :]).sum() * dx * dx
    assert val == pytest.approx(1.0, abs=1e-6)


# -- A1 (tail) ----------------------------------------------------------------


def test_a1_gaussian_passes():
    rng = np.random.default_rng(1)
    rep = check_a1_tail(rng.standard_normal((20_000, 3)))
    assert rep.passed == "pass"
    assert rep.evidence["fitted_exponent"] > 1.4


def test_a1_exponential_tails_fail():
    rng = np.random.default_rng(2)
    # isotropic direction with exponential radius: survival exponent 1
    radius = rng.exponential(scale=1.0, size=20_000)
    dirs = rng.standard_normal((20_000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rep = check_a1_tail(dirs * radius[:, None])
    assert rep.passed == "fail"
    assert rep.evidence["fitted_exponent"] < 1.4


def test_a1_small_sample_inconclusive():
    rng = np.random.default_rng(3)
    rep = check_a1_tail(rng.standard_normal((100, 3)))
    assert rep.passed == "inconclusive"


# -- A3 (range) ----------------------------------------------------------------


def box(n, half=5.0):
    return np.tile(np.array([-half, half]), (n, 1))


def test_a3_tanh_output_passes():
    rng = np.random.default_rng(4)
    dec = init_mlp(2, 5, 2, 8, rng, activation="leaky_tanh")
    dec.output_activation = "tanh"
    rep = check_a3_range(dec, box(2))
    assert rep.passed == "pass"
    assert rep.evidence["tail_growth_ratio"] < 1.05


def test_a3_linear_unbounded_fails():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((4, 2))
    dec = MlpWeights(layers=[(w, np.zeros(4))])
    rep = check_a3_range(dec, box(2), domain_bounded=False)
    assert rep.passed == "fail"


def test_a3_leaky_tanh_on_bounded_box_passes():
    rng = np.random.default_rng(6)
    dec = init_mlp(2, 5, 2, 8, rng, activation="leaky_tanh")
    rep = check_a3_range(dec, box(2), domain_bounded=True)
    assert rep.passed == "pass"


# -- model-level wiring ---------------------------------------------------------


def test_stationary_densities_default_model():
    params = default_params(SimConfig(T=10, N=2, M=5, seed=0))
    ems = stationary_component_densities(params, 0)
    # state 0: B = 0.5 I, Q = I -> var = 1/(1-0.25); state 1: modulus 0.99
    assert ems[0][1] == pytest.approx(1.0 / 0.75, rel=1e-9)
    assert ems[1][1] > 10.0


def test_diagnose_default_model_passes_a2_and_b():
    cfg = SimConfig(T=500, N=2, M=5, seed=1)
    params = default_params(cfg)
    data = simulate(cfg, params=params)
    reports = diagnose_model(params, data)
    by_name = {}
    for rep in reports:
        by_name.setdefault(rep.name, []).append(rep)
    assert all(r.passed == "pass" for r in by_name["A2-HMM"])
    assert all(r.passed == "pass" for r in by_name["B-2state"])
    assert isinstance(reports[0], AssumptionReport)


def test_report_str_contains_evidence():
    rep = check_a2_hmm(
        np.array([0.5, 0.5]),
        np.array([[0.9, 0.1], [0.1, 0.9]]),
        [(0.0, 1.0), (3.0, 1.0)],
    )
    text = str(rep)
    assert "A2-HMM" in text and "pass" in text and "min_singular_value" in text
