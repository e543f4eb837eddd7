import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from diffprune.diffusion import (
    NoiseSchedule, amplification_factor, ddim_sample, ddim_timesteps, ddpm_sample, ddpm_step,
    estimate_loss_profile, initial_noise, inject_perturbation, make_linear_schedule, q_sample, timestep_loss,
)
from diffprune.models import ConstantDenoiser, build_model, mlp_arch
from diffprune.tensor import Tensor

SMALL = NoiseSchedule(np.array([0.1, 0.2, 0.3]))


class Counting:
    def __init__(self, inner):
        self.inner, self.calls = inner, 0

    def __call__(self, x, t):
        self.calls += 1
        return self.inner(x, t)


class Oracle:
    """Predicts the true noise of a known (x0, eps) pair at every step."""

    def __init__(self, x0, sched):
        self.x0, self.sched = x0, sched

    def __call__(self, x, t):
        ab = self.sched.alpha_bar[np.asarray(t)[0] - 1]
        return Tensor((x - np.sqrt(ab) * self.x0) / np.sqrt(1 - ab))


def test_schedule_examples():
    np.testing.assert_allclose(SMALL.alpha_bar, [0.9, 0.72, 0.504], rtol=1e-15)
    np.testing.assert_array_equal(NoiseSchedule(np.array([0.25])).alpha_bar, [0.75])
    default = make_linear_schedule()
    assert default.T == 1000
    assert default.alpha_bar[-1] == pytest.approx(4.04e-5, rel=0.01)


def test_schedule_invariants():
    s = make_linear_schedule(200, 1e-4, 0.05)
    assert np.all(np.diff(s.alpha_bar) < 0)
    assert np.all((s.alpha_bar > 0) & (s.alpha_bar < 1))
    np.testing.assert_array_equal(s.alpha, 1 - s.beta)
    np.testing.assert_allclose(s.alpha_bar[1:], s.alpha_bar[:-1] * s.alpha[1:], rtol=4e-16)
    np.testing.assert_array_equal(s.sigma, np.sqrt(s.beta))


@pytest.mark.parametrize("args", [(0, 1e-4, 0.02), (10, 0.0, 0.02), (10, 0.03, 0.02), (10, 1e-4, 1.0)])
def test_schedule_rejects_bad_bounds(args):
    with pytest.raises(ValueError):
        make_linear_schedule(*args)


def test_q_sample_examples():
    one = np.ones((1, 1))
    assert q_sample(one, 2, np.zeros((1, 1)), SMALL)[0, 0] == pytest.approx(0.848528137, rel=1e-9)
    assert q_sample(one, 2, one, SMALL)[0, 0] == pytest.approx(1.37768, abs=5e-6)
    tiny = make_linear_schedule(5, 1e-8, 1e-8)
    np.testing.assert_allclose(q_sample(one * 0.3, 1, one, tiny), 0.3, atol=1e-4)
    with pytest.raises(ValueError):
        q_sample(one, 4, one, SMALL)


def test_timestep_loss_examples(rng):
    x0 = rng.normal(size=(64, 2))
    eps = rng.normal(size=(64, 2))
    assert timestep_loss(Oracle(x0, SMALL), x0, 2, eps, SMALL).item() == pytest.approx(0.0, abs=1e-20)

    big = rng.standard_normal((20000, 2))
    loss = timestep_loss(ConstantDenoiser(0.0), np.zeros_like(big), 1, big, SMALL).item()
    assert loss == pytest.approx(1.0, abs=0.03)

    model = build_model(mlp_arch((8, 8)), seed=1)
    assert timestep_loss(model, x0, np.arange(1, 65) % 3 + 1, eps, SMALL).item() >= 0


def test_ddpm_step_examples():
    sched = NoiseSchedule(np.array([0.1]))
    x1 = np.array([[np.sqrt(0.9)]])
    out = ddpm_step(x1, 1, Oracle(np.ones((1, 1)), sched), None, sched)
    assert abs(out[0, 0] - 1.0) < 1e-6

    x = np.array([[2.0, -1.0]])
    zero = ConstantDenoiser(0.0)
    np.testing.assert_allclose(ddpm_step(x, 2, zero, np.zeros_like(x), SMALL), x / np.sqrt(0.8))

    z = np.array([[0.5, 1.5]])
    base = ddpm_step(x, 3, zero, None, SMALL)
    d1 = ddpm_step(x, 3, zero, z, SMALL) - base
    d2 = ddpm_step(x, 3, zero, 2 * z, SMALL) - base
    np.testing.assert_allclose(d2, 2 * d1)
    with pytest.raises(ValueError):
        ddpm_step(x, 1, zero, z, SMALL)


def test_ddim_examples():
    sched = make_linear_schedule(1000)
    model = Counting(ConstantDenoiser(0.0))
    trace = ddim_sample(model, initial_noise(0, (3, 2)), sched, 100)
    assert model.calls == 100 and trace.n_evals == 100
    assert trace.timesteps[0] == 1000 and trace.timesteps[-1] == 1
    with pytest.raises(ValueError):
        ddim_sample(model, initial_noise(0, (3, 2)), sched, 1001)
    with pytest.raises(ValueError):
        ddim_timesteps(10, 0)


def test_ddim_zero_predictor_rescales():
    trace = ddim_sample(ConstantDenoiser(0.0), initial_noise(1, (2, 2), np.float64), SMALL, 3, keep_states=True)
    x_T = trace.states[0]
    # with eps = 0 each step maps x_t to sqrt(abar_next) * x_t / sqrt(abar_t)
    np.testing.assert_allclose(trace.states[1], np.sqrt(0.72) * x_T / np.sqrt(0.504))
    np.testing.assert_allclose(trace.x0, x_T / np.sqrt(0.504))


def test_samplers_deterministic():
    model = build_model(mlp_arch((16, 16)), seed=3)
    from diffprune.models import randomize_params
    model = randomize_params(model, 4)
    sched = make_linear_schedule(50)
    x_T = initial_noise(7, (8, 2))
    a = ddim_sample(model, x_T, sched, 10, keep_states=True)
    b = ddim_sample(model, x_T, sched, 10, keep_states=True)
    for sa, sb in zip(a.states, b.states):
        np.testing.assert_array_equal(sa, sb)
    np.testing.assert_array_equal(ddpm_sample(model, x_T, sched, 5).x0, ddpm_sample(model, x_T, sched, 5).x0)
    assert len(a.states) == 11 and all(s.shape == x_T.shape for s in a.states)


def test_loss_profile_examples(rng):
    data = rng.normal(size=(100, 2)).astype(np.float32)
    sched = make_linear_schedule(20)
    prof = estimate_loss_profile(ConstantDenoiser(0.0), data, sched, n_per_step=500, seed=0)
    np.testing.assert_allclose(prof.losses, 1.0, atol=0.1)
    assert prof.l_max == prof.losses.max() and np.all(prof.losses >= 0)

    perfect = estimate_loss_profile(_EpsFromSeed(data, sched, 3), data, sched, n_per_step=3, seed=0)
    np.testing.assert_allclose(perfect.losses, 0.0, atol=1e-10)
    with pytest.raises(ValueError):
        perfect.relative()
    with pytest.raises(ValueError):
        estimate_loss_profile(ConstantDenoiser(0.0), data[:0], sched)

    again = estimate_loss_profile(ConstantDenoiser(0.0), data, sched, n_per_step=500, seed=0)
    np.testing.assert_array_equal(prof.losses, again.losses)


class _EpsFromSeed:
    """Replays the profile's noise draws in call order, so every prediction is exact."""

    def __init__(self, data, sched, n):
        rng = np.random.default_rng(0)
        draws = []
        for _ in range(sched.T):
            rng.integers(data.shape[0], size=n)
            draws.append(rng.standard_normal((n,) + data.shape[1:]).astype(data.dtype))
        self.eps = np.concatenate(draws)
        self.cursor = 0

    def __call__(self, x, t):
        out = self.eps[self.cursor:self.cursor + len(x)]
        self.cursor += len(x)
        return Tensor(out)


def test_amplification_examples():
    assert amplification_factor(2, SMALL) == pytest.approx(0.2 / np.sqrt(0.72 * 0.28), rel=1e-12)
    assert amplification_factor(2, SMALL) == pytest.approx(0.44544, rel=1e-4)
    sched = make_linear_schedule(1000)
    factors = np.array([amplification_factor(t, sched) for t in range(1, 1001)])
    assert np.all(factors > 0)
    # one early minimum (beta_t grows slower than sqrt(1 - abar_t) at first), increasing afterwards
    t_min = int(np.argmin(factors))
    assert t_min < 30
    assert np.all(np.diff(factors[:t_min + 1]) < 0) and np.all(np.diff(factors[t_min:]) > 0)
    with pytest.raises(ValueError):
        amplification_factor(0, sched)


@given(st.integers(1, 50), st.floats(0.01, 3.0))
def test_injection_matches_amplification(t, scale):
    sched = make_linear_schedule(50)
    x_T = initial_noise(0, (1, 2), np.float64)
    delta = np.array([[scale, -0.5 * scale]])
    clean, pert = inject_perturbation(ConstantDenoiser(0.3), x_T, sched, t, delta)
    measured = np.linalg.norm(pert.x0 - clean.x0) / np.linalg.norm(delta)
    assert measured == pytest.approx(amplification_factor(t, sched), rel=1e-5)


def test_injection_zero_and_linear():
    sched = make_linear_schedule(30)
    x_T = initial_noise(2, (4, 2), np.float64)
    const = ConstantDenoiser(-0.2)
    clean, same = inject_perturbation(const, x_T, sched, 10, np.zeros((4, 2)), noise_seed=5)
    np.testing.assert_array_equal(clean.x0, same.x0)
    d = np.full((4, 2), 0.1)
    _, p1 = inject_perturbation(const, x_T, sched, 10, d, noise_seed=5)
    _, p2 = inject_perturbation(const, x_T, sched, 10, 2 * d, noise_seed=5)
    np.testing.assert_allclose(p2.x0 - clean.x0, 2 * (p1.x0 - clean.x0), rtol=1e-9)
