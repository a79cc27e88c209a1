import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advforecast import attacks
from advforecast.attacks import (NOISE, SEMI_TARGETED, TARGETED, UNTARGETED, AttackError, AttackResult,
                                 AttackSpec, BudgetViolation)
from advforecast.models import ForecastSample, stack_samples

from conftest import Deaf, LinearToy


def scalar_sample(x, y):
    return ForecastSample(np.zeros(2), np.array([x]), np.array([y]))


# -- clip_linf --------------------------------------------------------------------


def test_clip_examples():
    assert attacks.clip_linf(np.array([0.2]), np.array([0.0]), 0.15)[0] == 0.15
    assert attacks.clip_linf(np.array([-0.05]), np.array([0.0]), 0.15)[0] == -0.05


@pytest.mark.parametrize("eps", [0.0, -0.1])
def test_clip_rejects_nonpositive_epsilon(eps):
    with pytest.raises(AttackError):
        attacks.clip_linf(np.zeros(2), np.zeros(2), eps)


def test_clip_rejects_shape_mismatch():
    with pytest.raises(AttackError, match="shape"):
        attacks.clip_linf(np.zeros(3), np.zeros(2), 0.1)


def test_clip_idempotent_on_seeded_triples():
    rng = np.random.default_rng(1000)
    for _ in range(1000):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        p, x = rng.normal(0, 2, shape), rng.normal(0, 1, shape)
        eps = rng.uniform(1e-3, 2.0)
        once = attacks.clip_linf(p, x, eps)
        assert np.array_equal(attacks.clip_linf(once, x, eps), once)
        assert np.max(np.abs(once - x)) <= eps + 1e-12


@settings(max_examples=200)
@given(p=st.floats(-1e3, 1e3), x=st.floats(-1e3, 1e3), eps=st.floats(1e-6, 10.0))
def test_clip_idempotent_property(p, x, eps):
    once = attacks.clip_linf(np.array([p]), np.array([x]), eps)
    assert np.array_equal(attacks.clip_linf(once, np.array([x]), eps), once)


# -- PGD on toy models ----------------------------------------------------------------


def test_untargeted_identity_step(identity):
    spec = AttackSpec(UNTARGETED, epsilon=0.05, steps=1, alpha=0.05)
    res = attacks.pgd_untargeted(identity, scalar_sample(1.0, 0.0), spec)
    assert res.x_adv[0] == pytest.approx(1.05, abs=1e-15)


def test_targeted_identity_step(identity):
    spec = AttackSpec(TARGETED, epsilon=0.05, steps=1, alpha=0.05, target=[0.0])
    res = attacks.pgd_targeted(identity, scalar_sample(1.0, 0.5), spec)
    assert res.x_adv[0] == pytest.approx(0.95, abs=1e-15)


def test_targeted_fixed_point(identity):
    spec = AttackSpec(TARGETED, epsilon=0.15, steps=10, target=[0.4])
    res = attacks.pgd_targeted(identity, scalar_sample(0.4, 0.9), spec)
    assert res.x_adv[0] == 0.4
    assert np.all(res.loss_trace == 0.0)


def test_zero_epsilon_leaves_input(small_series, series_samples):
    smp = series_samples[0]
    for kind in (UNTARGETED, NOISE):
        res = attacks.run_attack(small_series, smp, AttackSpec(kind, epsilon=0.0, repetitions=3))
        assert np.array_equal(res.x_adv, smp.exo)


def test_default_step_size():
    assert AttackSpec(UNTARGETED).alpha == pytest.approx(2 * 0.15 / 100)
    assert AttackSpec(UNTARGETED).with_epsilon(1.0).alpha == pytest.approx(0.02)


def test_boundary_reached_with_constant_sign_gradient():
    model = LinearToy(2.0, horizon=3)
    sample = ForecastSample(np.zeros(2), np.array([0.1, -0.3, 0.7]), np.full(3, -10.0))
    res = attacks.pgd_untargeted(model, sample, AttackSpec(UNTARGETED, epsilon=0.15, steps=100))
    np.testing.assert_allclose(np.abs(res.delta), 0.15, atol=1e-12)


def test_untargeted_raises_loss_on_random_model(small_series, series_samples):
    hist, exo, truth = stack_samples(series_samples)
    x_adv, trace = attacks.pgd_batch(small_series, hist, exo, truth, AttackSpec(UNTARGETED))
    assert np.mean(trace[-1] >= trace[0]) >= 0.95
    assert trace.shape == (101, len(series_samples))


def test_batch_equals_single(small_series, series_samples):
    spec = AttackSpec(TARGETED, epsilon=0.3, steps=20, target=[0.2, 0.5, 0.8])
    hist, exo, truth = stack_samples(series_samples)
    x_adv, _ = attacks.pgd_batch(small_series, hist, exo, truth, spec)
    for i, smp in enumerate(series_samples):
        single = attacks.pgd_targeted(small_series, smp, spec)
        np.testing.assert_allclose(single.x_adv, x_adv[i], atol=1e-12)


def test_semi_targeted_with_zero_lambda_is_untargeted(small_series, series_samples):
    smp = series_samples[3]
    semi = AttackSpec(SEMI_TARGETED, lam=0.0, band=([0.0] * 3, [0.25] * 3))
    a = attacks.pgd_semi_targeted(small_series, smp, semi)
    b = attacks.pgd_untargeted(small_series, smp, AttackSpec(UNTARGETED))
    assert np.array_equal(a.x_adv, b.x_adv)


def test_attack_is_deterministic(small_series, series_samples):
    smp = series_samples[5]
    spec = AttackSpec(SEMI_TARGETED, band=([0.5] * 3, [0.75] * 3))
    a, b = attacks.run_attack(small_series, smp, spec), attacks.run_attack(small_series, smp, spec)
    assert np.array_equal(a.x_adv, b.x_adv) and np.array_equal(a.loss_trace, b.loss_trace)
    noise = AttackSpec(NOISE, repetitions=20)
    a = attacks.noise_attack(small_series, smp, noise, np.random.default_rng([4, 2]))
    b = attacks.noise_attack(small_series, smp, noise, np.random.default_rng([4, 2]))
    assert np.array_equal(a.x_adv, b.x_adv)


def test_history_and_truth_untouched(small_series, series_samples):
    smp = series_samples[1]
    hist, truth = smp.history.copy(), smp.truth.copy()
    for spec in (AttackSpec(UNTARGETED), AttackSpec(NOISE, repetitions=5),
                 AttackSpec(TARGETED, target=[0.1, 0.1, 0.1])):
        attacks.run_attack(small_series, smp, spec)
    assert np.array_equal(smp.history, hist) and np.array_equal(smp.truth, truth)


def test_exo_independent_model_rejected():
    smp = ForecastSample(np.zeros(3), np.zeros(2), np.zeros(2))
    with pytest.raises(AttackError, match="depend"):
        attacks.pgd_untargeted(Deaf(), smp, AttackSpec(UNTARGETED))


def test_horizon_mismatch_rejected(small_series, series_samples):
    with pytest.raises(AttackError, match="target"):
        attacks.pgd_targeted(small_series, series_samples[0], AttackSpec(TARGETED, target=[0.1] * 5))


# -- spec validation --------------------------------------------------------------------


def test_spec_validation():
    with pytest.raises(AttackError, match="target"):
        AttackSpec(TARGETED)
    with pytest.raises(AttackError, match="band"):
        AttackSpec(SEMI_TARGETED)
    with pytest.raises(AttackError, match="exceed"):
        AttackSpec(SEMI_TARGETED, band=([0.5, 0.1], [0.4, 0.2]))
    with pytest.raises(AttackError, match="kind"):
        AttackSpec("pgd-l2")
    with pytest.raises(AttackError, match="epsilon"):
        AttackSpec(UNTARGETED, epsilon=-0.1)


# -- band penalty -----------------------------------------------------------------------


def test_band_penalty_examples():
    assert attacks.band_penalty_loss(np.array([0.6, 0.3]), 0.25, 0.5).item() == pytest.approx(0.005, abs=1e-15)
    assert attacks.band_penalty_loss(np.array([0.3, 0.45]), 0.25, 0.5).item() == 0.0


def test_band_penalty_gradient_zero_inside_only():
    from advforecast.autodiff import Tape
    with Tape() as tape:
        y = tape.watch(np.array([0.3, 0.6, 0.1]))
        (g,) = tape.gradient(attacks.band_penalty_loss(y, 0.25, 0.5), y)
    assert g[0] == 0.0
    assert g[1] == pytest.approx(2 * 0.1 / 3) and g[2] == pytest.approx(-2 * 0.15 / 3)


# -- noise ----------------------------------------------------------------------------


def test_noise_picks_max_loss_candidate(small_series, series_samples):
    hist, exo, truth = stack_samples(series_samples)
    spec = AttackSpec(NOISE, repetitions=100)
    rngs = [np.random.default_rng([0, i]) for i in range(len(exo))]
    x_adv, losses = attacks.noise_batch(small_series, hist, exo, truth, spec, rngs)
    y = small_series.forward(hist, x_adv).data
    chosen = np.mean((y - truth) ** 2, axis=1)
    np.testing.assert_allclose(chosen, losses.max(axis=0), atol=1e-15)
    assert np.all(chosen[None] >= losses - 1e-15)


def test_noise_hits_budget_exactly():
    rng = np.random.default_rng(9)
    x = rng.normal(size=(5, 2, 3))
    cands = attacks.noise_candidates(x, AttackSpec(NOISE, epsilon=0.15, repetitions=50), rng)
    peaks = np.max(np.abs(cands - x[None]).reshape(50, -1), axis=1)
    np.testing.assert_allclose(peaks, 0.15, atol=1e-15)


def test_noise_rejects_all_zero_draw():
    class ZeroRng:
        def standard_normal(self, shape):
            return np.zeros(shape)

    with pytest.raises(AttackError, match="zero"):
        attacks.noise_candidates(np.zeros(3), AttackSpec(NOISE, repetitions=1), ZeroRng())


def test_noise_respects_input_bounds():
    x = np.array([0.95, -0.2, 0.0, 1.2])  # last entry already above the bound
    spec = AttackSpec(NOISE, epsilon=0.15, repetitions=200, input_bounds=(-0.25, 1.0))
    cands = attacks.noise_candidates(x, spec, np.random.default_rng(1))
    assert np.all(cands[:, :3] <= 1.0) and np.all(cands[:, :3] >= -0.25)
    assert np.all(cands[:, 3] <= 1.2)
    assert np.max(np.abs(cands - x)) <= 0.15 + 1e-12


# -- budget accounting ---------------------------------------------------------------


def test_result_rejects_budget_violation(monkeypatch):
    # a private audit keeps this deliberate violation out of the suite-wide tally
    audit = attacks.BudgetAudit()
    monkeypatch.setattr(attacks, "AUDIT", audit)
    with pytest.raises(BudgetViolation):
        AttackResult(np.zeros(2), np.array([0.0, 0.2]), 0.15)
    assert audit.violations == 1 and audit.worst_excess == pytest.approx(0.05)
