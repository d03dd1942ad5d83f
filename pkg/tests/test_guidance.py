import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_prior, rel_err
from sgr.cg import CgConfig, NumericalFailure
from sgr.guidance import (
    PROB_CLAMP,
    GuidanceSpec,
    bce_loss,
    bounded_reconstruct,
    clip_gamma,
    guidance_gradient,
    lower_loss,
    make_guidance,
    masked_loss,
    upper_loss,
)
from sgr.operators import forward, make_mask
from sgr.phantom import epsilon_fn
from sgr.sampler import make_schedule, tweedie
from sgr.segmenter import SegmenterParams, hard_segmentation, seg_forward


def frozen_loss(x_t, prior, ab, params, spec, weight):
    """Composed loss with the class indicator fixed; written out without the library's loss helpers."""
    x0 = tweedie(x_t, epsilon_fn(prior, x_t, ab), ab)
    p = seg_forward(x0, params)[..., spec.target_class]
    per_pixel = -np.log1p(-p) if spec.direction == "upper" else -np.log(p)
    return float(np.sum(per_pixel[weight]))


def indicator(x_t, prior, ab, params, spec):
    x0 = tweedie(x_t, epsilon_fn(prior, x_t, ab), ab)
    member = hard_segmentation(seg_forward(x0, params)) == spec.target_class
    return ~member if spec.direction == "upper" else member


def fd_gradient(x, f, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


PARAMS = SegmenterParams((0.1, 0.5, 0.9), 8.0, np.arange(9.0).reshape(3, 3) / 36.0)


@pytest.mark.parametrize("k", [1, 4])
@pytest.mark.parametrize("ab", [0.05, 0.5, 0.95])
@pytest.mark.parametrize("direction", ["upper", "lower"])
def test_gradient_matches_finite_differences(k, ab, direction):
    prior = random_prior(k, (6, 6), variance=0.3, seed=k)
    spec = GuidanceSpec(direction, 1)
    rng = np.random.default_rng(int(ab * 100) + k)
    x = np.sqrt(ab) * prior.means[0] + np.sqrt(1 - ab) * 0.5 * rng.standard_normal((6, 6))
    w = indicator(x, prior, ab, PARAMS, spec)
    grad, loss = guidance_gradient(x, prior, ab, PARAMS, spec)
    assert loss == pytest.approx(frozen_loss(x, prior, ab, PARAMS, spec, w), rel=1e-12)
    fd = fd_gradient(x, lambda z: frozen_loss(z, prior, ab, PARAMS, spec, w))
    assert rel_err(grad, fd) <= (1e-5 if k == 1 else 1e-4)


def test_sign_and_scale():
    prior = random_prior(2, (6, 6), 0.3)
    x = np.random.default_rng(0).standard_normal((6, 6))
    g1, l1 = guidance_gradient(x, prior, 0.5, PARAMS, GuidanceSpec("upper", 1))
    g2, l2 = guidance_gradient(x, prior, 0.5, PARAMS, GuidanceSpec("upper", 1, sign=-1.0), loss_scale=2.0)
    np.testing.assert_allclose(g2, -2 * g1)
    assert l2 == pytest.approx(2 * l1)


def test_loss_values():
    probs = np.zeros((2, 2, 3))
    probs[..., 1] = [[0.9, 0.2], [0.6, 0.1]]
    probs[..., 0] = 1 - probs[..., 1]
    assert upper_loss(probs, 1) == pytest.approx(-np.log([0.1, 0.8, 0.4, 0.9]).sum())
    assert lower_loss(probs, 1) == pytest.approx(-np.log([0.9, 0.2, 0.6, 0.1]).sum())
    assert bce_loss(probs, np.ones((2, 2)), 1) == pytest.approx(lower_loss(probs, 1))
    # masked: upper sums over pixels not in class 1, lower over pixels in class 1
    assert masked_loss(probs, 1, "upper") == pytest.approx(-np.log([0.8, 0.9]).sum())
    assert masked_loss(probs, 1, "lower") == pytest.approx(-np.log([0.9, 0.6]).sum())


def test_clamp_keeps_loss_finite():
    probs = np.zeros((1, 2, 2))
    probs[0, 0] = [0.0, 1.0]
    probs[0, 1] = [1.0, 0.0]
    assert np.isfinite(upper_loss(probs, 1)) and np.isfinite(lower_loss(probs, 1))
    assert upper_loss(probs, 1) == pytest.approx(-np.log(PROB_CLAMP), rel=1e-6)


@given(st.floats(1e-6, 1e3), st.floats(1e-6, 1e3), st.floats(1e-4, 1.0), st.integers(0, 1000))
@settings(max_examples=100, deadline=None)
def test_clip_invariant(gscale, escale, b, seed):
    rng = np.random.default_rng(seed)
    grad, eps = gscale * rng.standard_normal(16), escale * rng.standard_normal(16)
    gamma = clip_gamma(grad, eps, b)
    cap = b * np.linalg.norm(eps)
    if np.linalg.norm(grad) > cap:
        assert np.linalg.norm(gamma * grad) <= cap * (1 + 1e-12)
    else:
        assert gamma == 1.0
    assert 0 < gamma <= 1


def test_clip_examples():
    assert clip_gamma(np.array([3.0, 4.0]), np.array([100.0, 0.0]), 0.01) == pytest.approx(0.2)
    assert clip_gamma(np.array([0.1, 0.0]), np.array([100.0, 0.0]), 0.01) == 1.0
    with pytest.raises(ValueError):
        clip_gamma(np.ones(2), np.ones(2), 0.0)


def test_non_finite_input_tagged():
    prior = random_prior(2, (6, 6))
    x = np.full((6, 6), np.nan)
    with pytest.raises(NumericalFailure) as info:
        guidance_gradient(x, prior, 0.5, PARAMS, GuidanceSpec("upper", 1), eps=np.full((6, 6), np.nan))
    assert info.value.stage == "tweedie"


def test_spec_validation():
    with pytest.raises(ValueError):
        GuidanceSpec("sideways", 1)
    with pytest.raises(ValueError):
        GuidanceSpec("upper", 1, b=0.0)


def test_bounded_reconstruct_properties():
    from helpers import phantom_prior, smooth_params
    from sgr.phantom import generate_phantom

    spec, prior = phantom_prior(20, variance=5e-3)
    params = smooth_params(spec)
    truth = generate_phantom(spec, 77).image
    y = forward(truth, make_mask(32, 8, acs_count=2, seed=1))
    sched = make_schedule(20, 1e-4, 0.02, 0.5, train_steps=200)
    logs = {}
    res = bounded_reconstruct(y, prior, sched, CgConfig(), params, 2, seed=3, step_logs=logs)
    for x in (res.x_lower, res.x_upper):
        assert np.max(np.abs(forward(x, y.mask).kspace - y.kspace)) <= 1e-10
    assert res.v_unc == res.v_upper - res.v_lower
    assert len(logs["upper"]) == len(logs["lower"]) == sched.T - 1
    for r in logs["upper"] + logs["lower"]:
        assert (r.gamma * r.grad_norm <= 0.005 * r.eps_norm + 1e-12) if r.clipped else r.gamma == 1.0
    with pytest.raises(ValueError):
        bounded_reconstruct(y, prior, sched, CgConfig(), params, 5, seed=3)


def test_make_guidance_logs_each_call():
    prior = random_prior(2, (6, 6), 0.3)
    log = []
    guide = make_guidance(prior, PARAMS, GuidanceSpec("lower", 1, b=0.01), log)
    x = np.random.default_rng(2).standard_normal((6, 6))
    eps = epsilon_fn(prior, x, 0.5)
    grad, gamma = guide(x, 0.5, eps, 7)
    assert len(log) == 1 and log[0].t == 7 and log[0].gamma == gamma
