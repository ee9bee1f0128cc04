import numpy as np
import pytest

from patchwork.errors import EmptyInput, NonFiniteGradient
from patchwork.field import MINUS, PLUS, PatchworkModel
from patchwork.init import geometric_init, sphere_samples_random
from patchwork.train import (AdamState, FitConfig, adam_step, double_well,
                             fit, loss_normal, loss_occupancy, loss_prune,
                             loss_surface, parameter_count, prune_pass,
                             sample_off_surface, total_loss_and_grads,
                             weightnorm_chain)

from oracles import (fd_model_params, frozen_w, prune_loss_frozen,
                     random_model, reference_losses)


def training_batch(rng, model, m=16):
    X = rng.normal(size=(m, model.dim)) * 0.7
    U = rng.normal(size=(m, model.dim))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    Y = rng.uniform(-1, 1, size=(m, model.dim))
    return X, U, Y


def grad_rel_error(grads, fd):
    got = np.concatenate([grads.a.ravel(), grads.c, grads.log_s])
    want = np.concatenate([fd[0].ravel(), fd[1], fd[2]])
    return np.linalg.norm(got - want) / max(np.linalg.norm(want), 1e-12)


# ---------------------------------------------------------------------------
# losses


def test_kernel_losses_match_dense_reference(rng):
    for n, d, kw in ((8, 2, {}), (32, 3, {}),
                     (9, 2, dict(constant_plus=True, weightnorm=True))):
        model = random_model(rng, n, d, **kw)
        X, U, Y = training_batch(rng, model, m=24)
        losses, _, _ = total_loss_and_grads(model, X, U, Y)
        ref = reference_losses(model, X, U, Y)
        for key in ("sur", "normal", "reg", "prune"):
            assert losses[key] == pytest.approx(ref[key], rel=1e-9, abs=1e-12)


def test_loss_entry_points_match_reference(rng):
    model = random_model(rng, 10, 3)
    X, U, Y = training_batch(rng, model, m=20)
    ref = reference_losses(model, X, U, Y)
    assert loss_surface(model, X) == pytest.approx(ref["sur"], rel=1e-9)
    assert loss_normal(model, X, U) == pytest.approx(ref["normal"], rel=1e-9)
    assert loss_occupancy(model, Y) == pytest.approx(ref["reg"], rel=1e-9)
    assert loss_prune(model, X) == pytest.approx(ref["prune"], rel=1e-9)


def test_double_well_endpoints():
    assert double_well(0.0) == pytest.approx(0.0)
    assert double_well(1.0) == pytest.approx(0.0)
    assert double_well(0.5) == pytest.approx(1.0)
    # symmetric about the midpoint
    x = np.linspace(0, 1, 11)
    assert np.allclose(double_well(x), double_well(1 - x))


def test_normal_loss_skips_zero_gradient_points(rng):
    # identical slopes in both groups cancel the spatial gradient everywhere
    a = np.array([[1.0, 0.0], [1.0, 0.0]])
    c = np.zeros(2)
    group = np.array([PLUS, MINUS], dtype=np.int8)
    model = PatchworkModel.from_arrays(a, c, group, 10.0, 10.0)
    X, U, Y = training_batch(rng, model, m=8)
    assert loss_normal(model, X, U) == 0.0
    losses, _, skipped = total_loss_and_grads(model, X, U, Y)
    assert losses["normal"] == 0.0
    assert skipped == len(X)


def test_empty_inputs_raise(rng):
    model = random_model(rng, 8, 2)
    X, U, Y = training_batch(rng, model)
    with pytest.raises(EmptyInput):
        total_loss_and_grads(model, np.zeros((0, 2)), np.zeros((0, 2)), Y)
    model.active[model.group == MINUS] = False
    with pytest.raises(EmptyInput):
        total_loss_and_grads(model, X, U, Y)


# ---------------------------------------------------------------------------
# gradients vs finite differences


def fd_total(model, X, U, Y):
    """Finite differences of the summed losses with attribution frozen."""
    w0 = frozen_w(model, X)

    def loss(m):
        ref = reference_losses(m, X, U, Y, w_frozen=w0)
        return ref["sur"] + ref["normal"] + ref["reg"] + ref["prune"]

    return fd_model_params(loss, model, h=1e-6)


def test_gradients_match_fd(rng):
    for n, d in ((8, 2), (8, 3), (12, 2)):
        model = random_model(rng, n, d)
        X, U, Y = training_batch(rng, model)
        _, grads, _ = total_loss_and_grads(model, X, U, Y)
        assert grad_rel_error(grads, fd_total(model, X, U, Y)) < 1e-3


def test_gradients_match_fd_weightnorm(rng):
    # the returned gradients are w.r.t. the materialized slopes either way
    model = random_model(rng, 8, 3, weightnorm=True, constant_plus=True)
    X, U, Y = training_batch(rng, model)
    _, grads, _ = total_loss_and_grads(model, X, U, Y)
    assert grad_rel_error(grads, fd_total(model, X, U, Y)) < 1e-3


def test_single_loss_gradients_match_fd(rng):
    model = random_model(rng, 8, 2)
    X, U, Y = training_batch(rng, model)
    w0 = frozen_w(model, X)
    parts = {
        "use_surface": lambda m: reference_losses(m, X, U, Y, w0)["sur"],
        "use_normal": lambda m: reference_losses(m, X, U, Y, w0)["normal"],
        "use_occupancy": lambda m: reference_losses(m, X, U, Y, w0)["reg"],
        "use_prune": lambda m: prune_loss_frozen(m, w0),
    }
    for flag, loss_fn in parts.items():
        toggles = {k: k == flag for k in parts}
        _, grads, _ = total_loss_and_grads(model, X, U, Y, **toggles)
        fd = fd_model_params(loss_fn, model, h=1e-6)
        assert grad_rel_error(grads, fd) < 1e-3, flag


def test_prune_only_gradient_touches_log_s(rng):
    # with attribution frozen the prune loss cannot move slopes or offsets
    model = random_model(rng, 8, 2)
    X, U, Y = training_batch(rng, model)
    _, grads, _ = total_loss_and_grads(
        model, X, U, Y, use_surface=False, use_normal=False,
        use_occupancy=False, use_prune=True)
    assert np.all(grads.a == 0.0)
    assert np.all(grads.c == 0.0)
    assert np.any(grads.log_s != 0.0)


def test_inactive_terms_get_zero_gradient(rng):
    model = random_model(rng, 10, 2)
    model.active[3] = False
    model.active[6] = False
    X, U, Y = training_batch(rng, model)
    _, grads, _ = total_loss_and_grads(model, X, U, Y)
    for arr in (grads.a[3], grads.a[6]):
        assert np.all(arr == 0.0)
    assert grads.c[3] == grads.c[6] == 0.0
    assert grads.log_s[3] == grads.log_s[6] == 0.0


# ---------------------------------------------------------------------------
# optimizer


def test_adam_zero_gradient_keeps_parameters(rng):
    model = random_model(rng, 6, 2)
    state = AdamState(model)
    zero = total_loss_and_grads(model, *training_batch(rng, model))[1]
    zero.a[:] = 0.0
    zero.c[:] = 0.0
    zero.log_s[:] = 0.0
    a0, c0, ls0 = model.a.copy(), model.c.copy(), model.log_s.copy()
    adam_step(model, zero, state)
    assert np.array_equal(model.a, a0)
    assert np.array_equal(model.c, c0)
    assert np.array_equal(model.log_s, ls0)
    assert state.t == 1


def test_adam_first_step_is_signed_learning_rate(rng):
    model = random_model(rng, 6, 2)
    state = AdamState(model)
    _, grads, _ = total_loss_and_grads(model, *training_batch(rng, model))
    c0 = model.c.copy()
    adam_step(model, grads, state, lr=1e-3)
    moved = np.abs(grads.c) > 1e-4
    # bias-corrected first step: lr * g / (|g| + eps), essentially lr * sign
    assert np.allclose(np.abs(model.c[moved] - c0[moved]), 1e-3, rtol=1e-3)
    assert np.all(np.sign(c0[moved] - model.c[moved]) == np.sign(grads.c[moved]))


def test_adam_nonfinite_gradient_leaves_state_untouched(rng):
    model = random_model(rng, 6, 2)
    state = AdamState(model)
    _, grads, _ = total_loss_and_grads(model, *training_batch(rng, model))
    adam_step(model, grads, state)
    snapshot = (state.t, state.m_c.copy(), state.v_c.copy(),
                model.a.copy(), model.c.copy())
    bad = total_loss_and_grads(model, *training_batch(rng, model))[1]
    bad.c[0] = np.inf
    with pytest.raises(NonFiniteGradient):
        adam_step(model, bad, state)
    assert state.t == snapshot[0]
    assert np.array_equal(state.m_c, snapshot[1])
    assert np.array_equal(state.v_c, snapshot[2])
    assert np.array_equal(model.a, snapshot[3])
    assert np.array_equal(model.c, snapshot[4])


def test_adam_ignores_nonfinite_on_inactive_terms(rng):
    model = random_model(rng, 6, 2)
    model.active[2] = False
    state = AdamState(model)
    _, grads, _ = total_loss_and_grads(model, *training_batch(rng, model))
    grads.c[2] = np.nan
    c0 = model.c.copy()
    adam_step(model, grads, state)
    assert model.c[2] == c0[2]
    assert np.isfinite(model.c).all()


def test_adam_leaves_inactive_terms_alone(rng):
    model = random_model(rng, 8, 2)
    model.active[5] = False
    state = AdamState(model)
    a0, c0, ls0 = model.a.copy(), model.c.copy(), model.log_s.copy()
    for _ in range(3):
        _, grads, _ = total_loss_and_grads(model, *training_batch(rng, model))
        adam_step(model, grads, state)
    assert np.array_equal(model.a[5], a0[5])
    assert model.c[5] == c0[5]
    assert model.log_s[5] == ls0[5]
    assert np.any(model.c[model.active] != c0[model.active])


def test_weightnorm_chain_decouples_direction(rng):
    model = random_model(rng, 6, 3, weightnorm=True)
    dA = rng.normal(size=model.a.shape)
    dg, dv = weightnorm_chain(model, dA)
    vhat = model.wn_v / np.linalg.norm(model.wn_v, axis=1, keepdims=True)
    assert np.allclose(dg, np.sum(dA * vhat, axis=1))
    # direction gradient is orthogonal to the direction itself
    assert np.allclose(np.sum(dv * vhat, axis=1), 0.0, atol=1e-12)


# ---------------------------------------------------------------------------
# pruning


def small_model(s_values, groups):
    n = len(s_values)
    a = np.eye(max(2, n))[:n, :2] + 0.1
    group = np.array(groups, dtype=np.int8)
    return PatchworkModel.from_arrays(a, np.zeros(n), group, 10.0, 10.0,
                                      s=np.asarray(s_values, dtype=np.float64))


def test_prune_pass_disables_below_threshold():
    model = small_model([1.0, 0.005, 1.0, 0.002],
                        [PLUS, PLUS, MINUS, MINUS])
    n_off = prune_pass(model, threshold=1e-2, disable_value=1e-5)
    assert n_off == 2
    assert list(model.active) == [True, False, True, False]
    assert np.allclose(np.exp(model.log_s[[1, 3]]), 1e-5)
    assert list(model.group_indices(PLUS)) == [0]
    assert list(model.group_indices(MINUS)) == [2]


def test_prune_pass_keeps_last_term_of_group():
    model = small_model([0.004, 0.009, 1.0], [PLUS, PLUS, MINUS])
    n_off = prune_pass(model, threshold=1e-2)
    # the stronger of the two doomed plus terms survives
    assert n_off == 1
    assert list(model.active) == [False, True, True]


def test_prune_pass_threshold_is_strict():
    model = small_model([1e-2, 1.0], [PLUS, MINUS])
    assert prune_pass(model, threshold=1e-2) == 0
    assert model.active.all()


# ---------------------------------------------------------------------------
# config


def test_fit_config_round_trip(tmp_path):
    cfg = FitConfig(iterations=123, learning_rate=5e-4, use_normal=False)
    path = cfg.save(tmp_path / "cfg.json")
    assert FitConfig.load(path) == cfg
    with pytest.raises(ValueError):
        FitConfig.from_dict({"iterations": 10, "nope": 1})
    with pytest.raises(ValueError):
        FitConfig(learning_rate=0.0).validate()
    with pytest.raises(ValueError):
        FitConfig(prune_disable_value=0.5, prune_threshold=0.1).validate()
    assert cfg.replace(iterations=7).iterations == 7
    assert cfg.replace(iterations=7) != cfg


def test_sample_off_surface_ranges():
    bbox = np.array([[-1.0, 1.0], [0.0, 2.0]])
    pts = sample_off_surface(bbox, 500, 3)
    assert pts.shape == (500, 2)
    assert pts[:, 0].min() >= -1 and pts[:, 0].max() <= 1
    assert pts[:, 1].min() >= 0 and pts[:, 1].max() <= 2
    again = sample_off_surface(bbox, 500, 3)
    assert np.array_equal(pts, again)
    with pytest.raises(EmptyInput):
        sample_off_surface(bbox, 0, 3)


# ---------------------------------------------------------------------------
# fit loop


def test_fit_is_deterministic():
    samples = sphere_samples_random(32, 1.0, seed=5)
    cfg = FitConfig(iterations=30, rng_seed=2)
    model_a, report_a = fit(samples, cfg)
    model_b, report_b = fit(samples, cfg)
    assert np.array_equal(model_a.a, model_b.a)
    assert np.array_equal(model_a.c, model_b.c)
    assert np.array_equal(model_a.log_s, model_b.log_s)
    assert np.array_equal(report_a.loss_total, report_b.loss_total)


def test_fit_with_everything_disabled_returns_init():
    samples = sphere_samples_random(16, 1.0, seed=1)
    cfg = FitConfig(iterations=5, use_surface=False, use_normal=False,
                    use_occupancy=False, use_prune=False)
    model, report = fit(samples, cfg)
    init = geometric_init(samples)
    init.wn_v = init.wn_v / np.linalg.norm(init.wn_v, axis=1, keepdims=True)
    init._sync_a()
    assert np.allclose(model.a, init.a, rtol=1e-13, atol=1e-15)
    assert np.array_equal(model.c, init.c)
    assert np.array_equal(model.log_s, init.log_s)
    assert report.loss_total.sum() == 0.0


def test_fit_report_counts():
    samples = sphere_samples_random(16, 1.0, seed=0)
    model, report = fit(samples, FitConfig(iterations=12))
    assert report.iterations == 12
    assert report.params_initial == 4 * 32
    assert report.params_final == 4 * int(model.active.sum()) + 2
    active = report.active_terms
    assert np.all(active[1:] <= active[:-1])
    assert report.wall_time > 0
    assert len(list(report.rows())) == 12


def test_fit_forced_prune_records_events():
    samples = sphere_samples_random(16, 1.0, seed=0)
    cfg = FitConfig(iterations=6, prune_interval=5, prune_threshold=2.0,
                    prune_disable_value=1e-5)
    model, report = fit(samples, cfg)
    # everything starts below a threshold of 2, one survivor per group
    assert report.prune_events == [(5, 30)]
    plus, minus = model.active_counts()
    assert plus == minus == 1
    assert report.params_final == 4 * 2 + 2


def test_fit_random_init_runs():
    samples = sphere_samples_random(16, 1.0, seed=4)
    model, report = fit(samples, FitConfig(iterations=8, geometric=False))
    assert model.n_terms == 32
    assert np.isfinite(report.loss_total).all()


def test_parameter_count_convention(rng):
    model = random_model(rng, 16, 3)
    assert parameter_count(model, initial=True) == 4 * 16
    model.active[:6] = False
    assert parameter_count(model) == 4 * 10 + 2
