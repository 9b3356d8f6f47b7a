import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualbind.diffusion import (
    DEFAULT_T,
    ddim_step,
    denoising_loss,
    forward_diffuse,
    guided_eps,
    make_schedule,
    sample_timesteps,
    sampling_timesteps,
)
from dualbind.errors import InvalidArgumentError


def recurrence_alphas(T, b0, b1):
    # independent oracle: accumulate the product one step at a time
    betas = [b0 + (b1 - b0) * i / (T - 1) for i in range(T)] if T > 1 else [b0]
    out, prod = [1.0], 1.0
    for b in betas:
        prod *= 1.0 - b
        out.append(prod**0.5)
    return np.array(out)


def test_small_schedule_matches_recurrence():
    s = make_schedule(4, 0.1, 0.4)
    assert s.alphas[1] == pytest.approx(np.sqrt(0.9), abs=1e-12)
    np.testing.assert_allclose(s.alphas, recurrence_alphas(4, 0.1, 0.4), rtol=0, atol=1e-14)


def test_boundary_and_identity():
    s = make_schedule()
    assert s.T == DEFAULT_T
    assert s.alphas[0] == 1.0 and s.sigmas[0] == 0.0
    np.testing.assert_array_less(np.abs(s.alphas**2 + s.sigmas**2 - 1.0), 1e-12)
    assert np.all(np.diff(s.alphas) < 0)
    assert np.all(np.diff(s.sigmas[1:]) > 0)


@given(
    st.integers(1, 300),
    st.floats(1e-5, 0.2),
    st.floats(0.0, 0.5),
)
@settings(max_examples=60, deadline=None)
def test_schedule_invariants_property(T, b0, extra):
    b1 = min(b0 + extra, 0.999)
    s = make_schedule(T, b0, b1)
    assert np.all(np.abs(s.alphas**2 + s.sigmas**2 - 1) <= 1e-12)
    assert np.all(np.diff(s.alphas) < 0)
    assert np.all((s.alphas > 0) & (s.alphas <= 1))
    assert np.all((s.sigmas >= 0) & (s.sigmas <= 1))


@pytest.mark.parametrize("args", [(0, 0.1, 0.2), (-3, 0.1, 0.2), (10, 0.0, 0.1), (10, 0.2, 0.1), (10, 0.1, 1.0)])
def test_schedule_rejects_bad_input(args):
    with pytest.raises(InvalidArgumentError):
        make_schedule(*args)


def test_schedule_is_read_only():
    s = make_schedule()
    with pytest.raises(ValueError):
        s.alphas[3] = 0.5


def test_forward_zero_noise_and_substitution():
    s = make_schedule()
    z0 = np.random.default_rng(0).standard_normal((4, 8, 8))
    np.testing.assert_array_equal(forward_diffuse(z0, 17, np.zeros_like(z0), s), s.alphas[17] * z0)
    # alpha=0.8, sigma=0.6 by direct substitution into the same map
    assert np.allclose(0.8 * np.array([1.0, 0.0]) + 0.6 * np.array([0.0, 1.0]), [0.8, 0.6])


def test_forward_marginal_monte_carlo():
    s = make_schedule()
    rng = np.random.default_rng(1)
    z0 = rng.standard_normal(16)
    t = 60
    n = 10_000
    eps = rng.standard_normal((n, 16))
    zt = forward_diffuse(np.broadcast_to(z0, (n, 16)), np.full(n, t), eps, s)
    se_mean = s.sigmas[t] / np.sqrt(n)
    assert np.all(np.abs(zt.mean(0) - s.alphas[t] * z0) < 4 * se_mean)
    se_var = s.sigmas[t] ** 2 * np.sqrt(2.0 / (n - 1))
    assert np.all(np.abs(zt.var(0, ddof=1) - s.sigmas[t] ** 2) < 4 * se_var)


def test_forward_errors():
    s = make_schedule(10)
    z = np.zeros((2, 3))
    with pytest.raises(InvalidArgumentError):
        forward_diffuse(z, 11, z, s)
    with pytest.raises(InvalidArgumentError):
        forward_diffuse(z, -1, z, s)
    with pytest.raises(InvalidArgumentError):
        forward_diffuse(z, 3, np.zeros((3, 2)), s)


def test_loss_examples():
    assert denoising_loss([1.0, 1.0], [0.0, 0.0]) == 1.0
    x = np.random.default_rng(2).standard_normal(50)
    assert denoising_loss(x, x) == 0.0
    d = 40_000
    v = denoising_loss(np.zeros(d), np.random.default_rng(3).standard_normal(d))
    assert abs(v - 1.0) < 5 / np.sqrt(d)
    with pytest.raises(InvalidArgumentError):
        denoising_loss(np.zeros(3), np.zeros(4))


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20), st.integers(0, 2**31 - 1))
@settings(max_examples=60, deadline=None)
def test_loss_symmetric_nonnegative(values, seed):
    a = np.array(values)
    b = a + np.random.default_rng(seed).standard_normal(a.shape)
    assert denoising_loss(a, b) == denoising_loss(b, a) >= 0
    assert (denoising_loss(a, b) == 0) == bool(np.all(a == b))


def test_timestep_draws_cover_range():
    t = sample_timesteps(np.random.default_rng(0), 5, 5000)
    assert set(np.unique(t)) == {1, 2, 3, 4, 5}


def test_sampling_grid():
    g = sampling_timesteps(200, 30)
    assert len(g) == 30 and g[0] == 200 and g[-1] == 1
    assert np.all(np.diff(g) < 0)
    assert list(sampling_timesteps(3, 30)) == [3, 2, 1]
    assert len(sampling_timesteps(0, 5)) == 0


def test_guidance_exact_at_zero_and_one():
    rng = np.random.default_rng(4)
    u, c = rng.standard_normal(10), rng.standard_normal(10)
    assert guided_eps(u, c, 1.0) is c
    assert guided_eps(u, c, 0.0) is u
    np.testing.assert_allclose(guided_eps(u, c, 7.5), u + 7.5 * (c - u))


def test_ddim_step_recovers_clean_latent_with_true_noise():
    s = make_schedule()
    rng = np.random.default_rng(5)
    z0, eps = rng.standard_normal((4, 8, 8)), rng.standard_normal((4, 8, 8))
    zt = forward_diffuse(z0, 120, eps, s)
    np.testing.assert_allclose(ddim_step(zt, eps, 120, 0, s), z0, atol=1e-10)
    np.testing.assert_allclose(ddim_step(zt, eps, 120, 50, s), forward_diffuse(z0, 50, eps, s), atol=1e-10)
