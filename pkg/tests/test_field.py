import numpy as np
import pytest

from patchwork.errors import (DimensionMismatch, EmptyInput,
                              NonFiniteParameter)
from patchwork.field import (MINUS, PLUS, LinearTerm, PatchworkModel,
                             batch_values, batch_values_grads, eval_field,
                             eval_field_batch_streaming, eval_tropical,
                             eval_tropical_batch, grad_params,
                             tropical_argmax, tropical_grad)

from oracles import (dense_field, dense_field_grad, dense_tropical, fd_value,
                     random_model)


def test_linear_term_validation():
    t = LinearTerm(a=[1.0, 2.0], c=0.5, group=PLUS)
    assert t.s == 1.0 and t.active
    with pytest.raises(ValueError):
        LinearTerm(a=[1.0], c=0.0, group=3)
    with pytest.raises(ValueError):
        LinearTerm(a=[1.0], c=0.0, group=PLUS, s=0.0)
    with pytest.raises(DimensionMismatch):
        LinearTerm(a=[[1.0, 2.0]], c=0.0, group=PLUS)


def test_model_construction_round_trip():
    terms = [LinearTerm([1.0, 0.0], 0.1, PLUS, s=2.0),
             LinearTerm([0.0, 1.0], -0.2, MINUS)]
    m = PatchworkModel.from_terms(terms, 10.0, 20.0)
    assert m.n_terms == 2 and m.dim == 2
    assert m.term(0).s == pytest.approx(2.0)
    assert [t.group for t in m.terms] == [PLUS, MINUS]
    got = m.group_indices(MINUS)
    assert list(got) == [1]


def test_model_validation_errors():
    with pytest.raises(EmptyInput):
        PatchworkModel.from_terms([], 1.0, 1.0)
    with pytest.raises(NonFiniteParameter):
        PatchworkModel.from_arrays([[np.nan, 0.0]], [0.0], [PLUS], 1.0, 1.0)
    with pytest.raises(NonFiniteParameter):
        PatchworkModel.from_arrays([[1.0, 0.0]], [0.0], [PLUS], -1.0, 1.0)
    with pytest.raises(ValueError):
        PatchworkModel.from_arrays([[1.0, 0.0]], [0.0], [2], 1.0, 1.0)


def test_eval_matches_dense_oracle(rng):
    for n, d in ((8, 2), (32, 3), (9, 2)):
        m = random_model(rng, n=n, dim=d)
        X = rng.normal(size=(40, d))
        vals = np.array([eval_field(m, x).value for x in X])
        np.testing.assert_allclose(vals, dense_field(m, X), atol=1e-12)
        grads = np.stack([eval_field(m, x).grad_x for x in X])
        np.testing.assert_allclose(grads, dense_field_grad(m, X), atol=1e-12)


def test_eval_softmax_attributions_sum_to_one(rng):
    m = random_model(rng, n=10, dim=2)
    e = eval_field(m, rng.normal(size=2))
    assert e.softmax_plus.sum() == pytest.approx(1.0)
    assert e.softmax_minus.sum() == pytest.approx(1.0)
    assert (e.softmax_plus >= 0).all() and (e.softmax_minus >= 0).all()


def test_eval_spatial_gradient_matches_fd(rng):
    m = random_model(rng, n=12, dim=3)
    x = rng.normal(size=3)
    g = eval_field(m, x).grad_x
    g_fd = fd_value(lambda q: eval_field(m, q).value, x)
    np.testing.assert_allclose(g, g_fd, rtol=1e-6, atol=1e-8)


def test_inactive_terms_do_not_contribute(rng):
    m = random_model(rng, n=8, dim=2)
    x = rng.normal(size=2)
    base = eval_field(m, x).value
    # adding a disabled huge term must not change the value
    m2 = PatchworkModel(
        m.dim,
        np.vstack([m.a, [[50.0, 50.0]]]),
        np.append(m.c, 100.0),
        np.append(m.log_s, 0.0),
        np.append(m.group, np.int8(PLUS)),
        np.append(m.active, False),
        m.beta_plus, m.beta_minus)
    assert eval_field(m2, x).value == pytest.approx(base, abs=1e-12)


def test_tropical_eval_and_grad(rng):
    m = random_model(rng, n=16, dim=2)
    X = rng.normal(size=(25, 2))
    np.testing.assert_allclose(eval_tropical_batch(m, X), dense_tropical(m, X),
                               atol=1e-12)
    x = X[0]
    v, g = tropical_grad(m, x)
    assert v == pytest.approx(eval_tropical(m, x))
    ip, im = tropical_argmax(m, x)
    assert m.group[ip] == PLUS and m.group[im] == MINUS
    np.testing.assert_allclose(g, m.a[ip] - m.a[im], atol=1e-15)


def test_tropical_is_large_beta_limit(rng):
    m = random_model(rng, n=10, dim=2)
    X = rng.normal(size=(30, 2))
    f = eval_tropical_batch(m, X)
    gap_prev = np.inf
    for beta in (10.0, 100.0, 1000.0, 10000.0):
        F = dense_field(m.with_betas(beta), X)
        gap = np.abs(F - f).max()
        assert gap <= gap_prev + 1e-12
        gap_prev = gap
    assert gap_prev < 1e-2


def test_lse_max_gap_bound(rng):
    # |F - f| <= 2 log(n)/beta + max|log s|/beta with s in [0.5, 2]
    for beta in (10.0, 75.0, 500.0):
        m = random_model(rng, n=12, dim=2, beta=beta)
        X = rng.normal(size=(50, 2))
        gap = np.abs(dense_field(m, X) - dense_tropical(m, X)).max()
        bound = (2 * np.log(m.n_terms) + np.abs(m.log_s).max()) / beta
        assert gap <= bound


def test_swapped_negates_field(rng):
    m = random_model(rng, n=8, dim=2)
    X = rng.normal(size=(10, 2))
    np.testing.assert_allclose(batch_values(m.swapped(), X),
                               -batch_values(m, X), atol=1e-12)


def test_with_betas_returns_new_model(rng):
    m = random_model(rng, n=6, dim=2, beta=20.0)
    m2 = m.with_betas(100.0)
    assert m.beta_plus == 20.0 and m2.beta_plus == 100.0 == m2.beta_minus
    m3 = m.with_betas(50.0, 60.0)
    assert (m3.beta_plus, m3.beta_minus) == (50.0, 60.0)


def test_empty_group_conventions():
    m = PatchworkModel.from_arrays([[1.0, 0.0]], [0.5], [PLUS], 10.0, 10.0)
    # no Minus terms: LSE over an empty set is -inf, so F = +inf
    assert eval_field(m, np.zeros(2)).value == np.inf
    assert eval_tropical(m, np.zeros(2)) == np.inf
    ip, im = tropical_argmax(m, np.zeros(2))
    assert ip == 0 and im == -1


def test_batch_engines_agree(rng):
    m = random_model(rng, n=33, dim=3)
    X = rng.normal(size=(257, 3))
    v_numba = batch_values(m, X, engine="numba")
    v_numpy = batch_values(m, X, engine="numpy")
    np.testing.assert_allclose(v_numba, v_numpy, rtol=0, atol=1e-12)
    vg_numba = batch_values_grads(m, X, engine="numba")
    vg_numpy = batch_values_grads(m, X, engine="numpy")
    np.testing.assert_allclose(vg_numba[0], vg_numpy[0], atol=1e-12)
    np.testing.assert_allclose(vg_numba[1], vg_numpy[1], atol=1e-12)


def test_streaming_matches_dense(rng):
    m = random_model(rng, n=64, dim=2)
    X = rng.normal(size=(500, 2))
    vals, grads = eval_field_batch_streaming(m, X, block_size=64, term_chunk=7)
    np.testing.assert_allclose(vals, dense_field(m, X), atol=1e-12)
    np.testing.assert_allclose(grads, dense_field_grad(m, X), atol=1e-12)


def test_streaming_reduce_callback(rng):
    m = random_model(rng, n=16, dim=2)
    X = rng.normal(size=(100, 2))

    def fold(acc, i, ev):
        return max(acc, abs(ev.value))

    top = eval_field_batch_streaming(m, X, reduce=fold, init=0.0,
                                     block_size=17)
    assert top == pytest.approx(np.abs(dense_field(m, X)).max())


def test_grad_params_matches_fd(rng):
    m = random_model(rng, n=8, dim=2)
    x = rng.normal(size=2)
    g = grad_params(m, x)
    h = 1e-6
    for i in range(m.n_terms):
        for j in range(m.dim):
            m2, m3 = m.copy(), m.copy()
            m2.a = m2.a.copy(); m3.a = m3.a.copy()
            m2.a[i, j] += h
            m3.a[i, j] -= h
            fd = (eval_field(m2, x).value - eval_field(m3, x).value) / (2 * h)
            assert g.d_a[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)
        for arr, attr in ((g.d_c, "c"), (g.d_log_s, "log_s")):
            m2, m3 = m.copy(), m.copy()
            v2 = getattr(m2, attr).copy(); v3 = getattr(m3, attr).copy()
            v2[i] += h; v3[i] -= h
            setattr(m2, attr, v2); setattr(m3, attr, v3)
            fd = (eval_field(m2, x).value - eval_field(m3, x).value) / (2 * h)
            assert arr[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_weightnorm_equivalence(rng):
    m = random_model(rng, n=10, dim=3)
    X = rng.normal(size=(50, 3))
    before = batch_values(m, X)
    m.enable_weightnorm()
    np.testing.assert_allclose(batch_values(m, X), before, atol=1e-10)
    np.testing.assert_allclose(m.wn_g, np.linalg.norm(m.wn_v, axis=1),
                               atol=1e-12)


def test_weightnorm_zero_direction_placeholder():
    m = PatchworkModel.from_arrays([[0.0, 0.0], [1.0, 0.0]], [0.3, 0.0],
                                   [PLUS, MINUS], 5.0, 5.0)
    m.enable_weightnorm()
    assert m.wn_g[0] == 0.0
    assert np.linalg.norm(m.wn_v[0]) == pytest.approx(1.0)
    np.testing.assert_allclose(m.a[0], [0.0, 0.0], atol=0)


def test_set_weightnorm_params_rescale_invariance(rng):
    m = random_model(rng, n=6, dim=2, weightnorm=True)
    X = rng.normal(size=(20, 2))
    before = batch_values(m, X)
    m.set_weightnorm_params(m.wn_g, m.wn_v * 7.5)  # scale of v is irrelevant
    np.testing.assert_allclose(batch_values(m, X), before, atol=1e-12)


def test_dimension_errors(rng):
    m = random_model(rng, n=4, dim=2)
    with pytest.raises(DimensionMismatch):
        eval_field(m, np.zeros(3))
    with pytest.raises(DimensionMismatch):
        batch_values(m, np.zeros((5, 3)))
    with pytest.raises(NonFiniteParameter):
        eval_field(m, np.array([np.nan, 0.0]))
