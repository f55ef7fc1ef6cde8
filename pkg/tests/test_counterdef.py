"""Label-space defense: oracles for the ascent direction, the perturbation
step, the batched tangent path, and both renormalization strategies.

The direction d||grad_params||/dy has two independent implementations in the
package (per-class backprops and a single forward tangent pass); both are
pinned here against finite differences and against each other.
"""

import numpy as np
import pytest

from theftguard import counterdef, dataio, ndnet as nd
from theftguard.counterdef import (
    DegenerateGradientError,
    OutputPerturbationConfig,
    counter_attack,
    counter_attack_batch,
    direction_from_scores,
    gradient_norm_y_gradient,
    renorm_centering,
    renorm_winner_takes_all,
)
from theftguard.ndnet.model import grad_params, per_class_log_prob_grads

from helpers import random_input, random_small_model, random_target, trained_blob_model

CE = nd.LossFunction(nd.CROSS_ENTROPY)


def norm_of_grad(model, x, y):
    return grad_params(model, CE, x, y).norm()


def test_direction_matches_fd_at_generic_targets():
    rng = np.random.default_rng(81)
    for trial in range(8):
        model = random_small_model(rng)
        x = random_input(model, rng)
        k = model.layers[-1].W.shape[1]
        y = random_target(rng, k)
        s = gradient_norm_y_gradient(model, CE, x, y)
        step = 1e-6
        fd = np.empty(k)
        for j in range(k):
            yp, ym = y.copy(), y.copy()
            yp[j] += step
            ym[j] -= step
            fd[j] = (norm_of_grad(model, x, yp) - norm_of_grad(model, x, ym)) / (2 * step)
        scale = np.maximum(np.abs(fd), np.abs(s))
        assert np.all(np.abs(fd - s) <= 1e-4 * scale + 1e-9), f"trial {trial}"


def test_direction_formula_recomputed_from_parts():
    # Rebuild s_j = -(u_j . g)/||g|| from the raw ingredients and demand
    # agreement with the packaged routine.
    rng = np.random.default_rng(82)
    model = random_small_model(rng)
    x = random_input(model, rng)
    k = model.layers[-1].W.shape[1]
    y = random_target(rng, k)
    g = grad_params(model, CE, x, y)
    us = per_class_log_prob_grads(model, x)
    expected = np.array([-(u.dot(g)) / g.norm() for u in us])
    s = gradient_norm_y_gradient(model, CE, x, y)
    assert np.allclose(s, expected, rtol=1e-12)


def test_parameter_gradient_is_weighted_sum_of_class_gradients():
    # g = -sum_i y_i u_i up to the eps-in-log correction, which is ~1e-11
    # relative at generic targets.
    rng = np.random.default_rng(83)
    model = random_small_model(rng)
    x = random_input(model, rng)
    k = model.layers[-1].W.shape[1]
    y = random_target(rng, k)
    g = grad_params(model, CE, x, y).flat
    us = per_class_log_prob_grads(model, x)
    identity = -sum(yi * u.flat for yi, u in zip(y, us))
    assert np.allclose(g, identity, rtol=1e-8, atol=1e-12)


def test_direction_invariant_under_target_scaling():
    # g is linear in y, so y -> 3y scales g and ||g|| alike and the
    # direction is untouched.
    rng = np.random.default_rng(84)
    model = random_small_model(rng)
    x = random_input(model, rng)
    k = model.layers[-1].W.shape[1]
    y = random_target(rng, k)
    s1 = gradient_norm_y_gradient(model, CE, x, y)
    s3 = gradient_norm_y_gradient(model, CE, x, 3.0 * y)
    assert np.allclose(s1, s3, rtol=1e-10)
    assert np.array_equal(np.sign(s1), np.sign(s3))


def test_orthogonal_class_gradients_give_equal_score_magnitudes():
    # When the u_i are mutually orthogonal with equal norms, every class is
    # an equally good ascent coordinate: |s_j| identical across j.
    rng = np.random.default_rng(85)
    k, dim = 4, 12
    basis = np.linalg.qr(rng.normal(size=(dim, dim)))[0][:, :k].T * 2.5
    y = np.full(k, 1.0 / k)
    g = -(y @ basis)
    dots = basis @ g
    s = direction_from_scores(dots, np.linalg.norm(g))
    assert np.allclose(np.abs(s), np.abs(s[0]), rtol=1e-12)


def test_counter_attack_zero_epsilon_is_a_copy():
    rng = np.random.default_rng(86)
    model = random_small_model(rng)
    x = random_input(model, rng)
    y = model.forward(x)
    cfg = OutputPerturbationConfig(epsilon=0.0)
    out = counter_attack(model, CE, x, y, cfg)
    assert np.array_equal(out, y)
    assert out is not y


def test_counter_attack_steps_along_finite_difference_signs():
    # At the model's own output the gradient is eps-scale but its slope is
    # still well defined; central differences on ||g(y)|| must agree in sign
    # with the analytic direction on every resolvable coordinate.
    rng = np.random.default_rng(87)
    model = random_small_model(rng)
    x = random_input(model, rng)
    y = model.forward(x)
    s = gradient_norm_y_gradient(model, CE, x, y)
    step = 1e-6
    fd = np.empty_like(s)
    for j in range(s.size):
        yp, ym = y.copy(), y.copy()
        yp[j] += step
        ym[j] -= step
        fd[j] = (norm_of_grad(model, x, yp) - norm_of_grad(model, x, ym)) / (2 * step)
    resolvable = np.abs(fd) > 1e-3 * np.abs(fd).max()
    assert resolvable.any()
    assert np.array_equal(np.sign(fd[resolvable]), np.sign(s[resolvable]))

    cfg = OutputPerturbationConfig(epsilon=0.003, renorm="none")
    out = counter_attack(model, CE, x, y, cfg)
    assert np.array_equal(out, y + 0.003 * np.sign(s))


def test_perturbed_labels_raise_the_gradient_norm():
    # The defining property of the defense: the perturbed target sits at a
    # (much) steeper point of the imitator's loss than the raw output. A
    # trained model is used because near-uniform outputs (untrained nets)
    # are exactly the degenerate case the fallback exists for; moderate blob
    # separation keeps the net away from full softmax saturation, the other
    # place the slope genuinely vanishes.
    model, test = trained_blob_model(88, separation=3.0)
    cfg = OutputPerturbationConfig(epsilon=0.003, renorm="none")
    ratios = []
    for x in test.inputs[:10]:
        y = model.forward(x)
        y_star = counter_attack(model, CE, x, y, cfg)
        assert not np.array_equal(y_star, y)
        ratios.append(norm_of_grad(model, x, y_star) / norm_of_grad(model, x, y))
    assert all(r > 1.0 for r in ratios), f"ratios: {ratios}"
    assert np.median(ratios) > 1e3


def test_degenerate_gradient_raises_and_copy_fallback():
    rng = np.random.default_rng(89)
    model = random_small_model(rng)
    x = random_input(model, rng)
    k = model.layers[-1].W.shape[1]
    zero_target = np.zeros(k)
    with pytest.raises(DegenerateGradientError):
        gradient_norm_y_gradient(model, CE, x, zero_target)
    out = counter_attack(model, CE, x, zero_target, OutputPerturbationConfig())
    assert np.array_equal(out, zero_target)


def test_batch_path_copies_when_structurally_degenerate():
    # All-zero parameters give an exactly uniform softmax, where the
    # eps-in-log residual vanishes identically and there is no direction.
    model = nd.Model(
        [nd.Dense(4, 6, "fc0"), nd.ReLU(), nd.Dense(6, 3, "out")], (4,)
    )
    xs = np.random.default_rng(90).uniform(0, 1, (5, 4))
    raw, defended = counter_attack_batch(model, CE, xs, OutputPerturbationConfig())
    assert np.allclose(raw, 1.0 / 3.0)
    assert np.array_equal(raw, defended)


def test_mse_loss_is_rejected():
    rng = np.random.default_rng(91)
    model = random_small_model(rng)
    x = random_input(model, rng)
    with pytest.raises(ValueError):
        gradient_norm_y_gradient(model, nd.LossFunction(nd.MSE), x, model.forward(x))


def test_tangent_pass_equals_per_logit_backprops():
    # v = J g computed with one forward tangent pass must equal the K dot
    # products assembled from K plain backprops of the logits.
    rng = np.random.default_rng(92)
    model = random_small_model(rng)
    xs = np.stack([random_input(model, rng) for _ in range(3)])
    p, _, caches = model.forward_cached(xs)
    b = CE.dz(p, p)
    _, ps_grads = model.backward_dz(b, caches, per_sample=True, need_dx=False)
    v = model.jvp_logits(caches, ps_grads)

    k = p.shape[1]
    for i in range(3):
        _, z_i, caches_i = model.forward_cached(xs[i:i + 1])
        gi = np.concatenate([a[i].ravel() for layer in ps_grads for a in layer])
        for j in range(k):
            dz = np.zeros((1, k))
            dz[0, j] = 1.0
            _, grads = model.backward_dz(dz, caches_i, need_dx=False)
            zj_grad = model.grads_to_vector(grads).flat
            expect = zj_grad @ gi
            scale = max(abs(expect), abs(v[i, j]), 1e-300)
            assert abs(v[i, j] - expect) / scale < 1e-6


def test_batch_defense_matches_single_calls():
    rng = np.random.default_rng(93)
    model = random_small_model(rng)
    xs = np.stack([random_input(model, rng) for _ in range(6)])
    for renorm in ("none", "centering", "wta"):
        cfg = OutputPerturbationConfig(epsilon=0.003, renorm=renorm)
        raw, defended = counter_attack_batch(model, CE, xs, cfg, batch_size=4)
        for i in range(6):
            y_i = model.forward(xs[i])
            assert np.allclose(raw[i], y_i, rtol=1e-10, atol=1e-13)
            single = counter_attack(model, CE, xs[i], y_i, cfg)
            assert np.allclose(defended[i], single, atol=1e-9), (renorm, i)


def test_batch_defense_respects_epsilon_bound():
    rng = np.random.default_rng(94)
    model = random_small_model(rng)
    xs = np.stack([random_input(model, rng) for _ in range(5)])
    cfg = OutputPerturbationConfig(epsilon=0.003, renorm="none")
    raw, defended = counter_attack_batch(model, CE, xs, cfg)
    assert np.abs(defended - raw).max() <= 0.003 + 1e-15


def test_centering_fixed_point_and_exact_removal():
    y = np.array([[0.5, 0.3, 0.2]])
    centered = y + np.array([[0.01, -0.005, -0.005]])
    assert np.array_equal(renorm_centering(y, centered, 5), centered)

    uniform_push = y + 0.003
    assert np.array_equal(renorm_centering(y, uniform_push, 1), y)


def test_centering_clips_and_repairs_the_sum():
    rng = np.random.default_rng(95)
    y = rng.dirichlet(np.ones(10), size=200)
    y_star = y + 0.003 * rng.choice([-1.0, 1.0], size=y.shape)
    out = renorm_centering(y, y_star, 5)
    assert out.min() >= 0.0 and out.max() <= 1.0
    after = np.abs(out.sum(axis=1) - 1.0)
    assert after.max() <= 1e-3
    assert np.median(after) < np.median(np.abs(y_star.sum(axis=1) - 1.0))


def test_winner_takes_all_pinned_cases():
    got = renorm_winner_takes_all(np.array([0.5, 0.3, 0.1]))
    assert np.allclose(got, [0.5, 0.3, 0.2], atol=1e-12)

    got = renorm_winner_takes_all(np.array([0.6, 0.5, 0.1]))
    assert np.allclose(got, [0.4, 0.5, 0.1], atol=1e-12)

    # one entry cannot absorb the whole excess: drain it, move to the next
    got = renorm_winner_takes_all(np.array([0.9, 0.9, 0.9]))
    assert np.allclose(got, [0.0, 0.1, 0.9], atol=1e-12)

    # ties break toward the lowest index
    got = renorm_winner_takes_all(np.array([0.5, 0.5, 0.5]))
    assert np.allclose(got, [0.0, 0.5, 0.5], atol=1e-12)

    y = np.array([0.2, 0.3, 0.5])
    assert np.array_equal(renorm_winner_takes_all(y.copy()), y)

    got = renorm_winner_takes_all(np.array([1.4, -0.2, 0.1]))
    assert np.allclose(got, [0.9, 0.0, 0.1], atol=1e-12)


def test_winner_takes_all_sums_to_one_within_an_ulp():
    rng = np.random.default_rng(96)
    for _ in range(500):
        y_star = rng.uniform(-0.2, 1.2, rng.integers(2, 12))
        out = renorm_winner_takes_all(y_star)
        assert abs(out.sum() - 1.0) <= np.spacing(1.0)
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        OutputPerturbationConfig(epsilon=-1.0)
    with pytest.raises(ValueError):
        OutputPerturbationConfig(renorm="softmax")
    with pytest.raises(ValueError):
        OutputPerturbationConfig(centering_rounds=0)


def test_defense_keeps_the_argmax_on_a_trained_model():
    ds = dataio.synthetic(k_classes=4, dim=8, n_per_class=60, separation=6.0, seed=97)
    train, test = dataio.split(ds, (0.6, 0.4), seed=97)
    model = nd.Model(
        [nd.Dense(8, 16, "fc0"), nd.ReLU(), nd.Dense(16, 4, "out")], (8,)
    )
    rng = np.random.default_rng(97)
    for _, a in model.param_items():
        a[...] = rng.normal(scale=0.3, size=a.shape)
    opt = nd.SGD(model, lr=0.2)
    ys = train.one_hot()
    for _ in range(80):
        nd.train_step(model, CE, (train.inputs, ys), opt)

    cfg = OutputPerturbationConfig()  # eps 0.003, centering
    raw, defended = counter_attack_batch(model, CE, test.inputs, cfg)
    assert (defended.argmax(axis=1) == raw.argmax(axis=1)).mean() >= 0.995
    assert defended.min() >= 0.0 and defended.max() <= 1.0
    assert np.abs(defended.sum(axis=1) - 1.0).max() < 1e-2
