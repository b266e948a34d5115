import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from villanibench.attention import (
    AttnParams,
    AttnSample,
    attention_bound_constants,
    attention_forward,
    empirical_risk,
    empirical_risk_grad,
    pack_qk,
    row_softmax,
    sample_loss,
    sample_loss_grad,
    softmax_hessian_entry,
    softmax_hessian_row,
    softmax_jacobian_row,
    unpack_qk,
)
from oracles import fd_grad, fd_second_partial, max_rel_err


def random_instance(rng, t, d, r, scale=1.0):
    sample = AttnSample(X=scale * rng.standard_normal((t, d)), Y=scale * rng.standard_normal((t, d)))
    params = AttnParams(
        W_Q=rng.standard_normal((d, r)),
        W_K=rng.standard_normal((d, r)),
        W_V=rng.standard_normal((d, d)),
        beta=1.0,
    )
    return sample, params


# ---------------------------------------------------------------------------
# row_softmax


def test_row_softmax_uniform_on_zero_scores():
    S = row_softmax(np.zeros((2, 2)), beta=1.0)
    np.testing.assert_allclose(S, np.full((2, 2), 0.5), atol=1e-15)


def test_row_softmax_log3_row():
    S = row_softmax(np.array([[np.log(3.0), 0.0]]), beta=1.0)
    np.testing.assert_allclose(S[0], [0.75, 0.25], atol=1e-14)


def test_row_softmax_rows_sum_and_frobenius_bound():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((4, 4))
    S = row_softmax(M, beta=2.0)
    np.testing.assert_allclose(S.sum(axis=1), np.ones(4), atol=1e-12)
    assert np.linalg.norm(S) <= 2.0  # sqrt(t) with t = 4


def test_row_softmax_rejects_non_finite():
    M = np.zeros((2, 2))
    M[0, 1] = np.inf
    with pytest.raises(ValueError):
        row_softmax(M, beta=1.0)


def test_row_softmax_large_scores_stable():
    S = row_softmax(np.array([[4000.0, -4000.0]]), beta=1.0)
    assert np.all(np.isfinite(S))
    np.testing.assert_allclose(S.sum(axis=1), [1.0])


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=1, max_value=8), st.integers(min_value=0, max_value=2**31 - 1))
def test_row_softmax_invariants(t, seed):
    rng = np.random.default_rng(seed)
    M = 3.0 * rng.standard_normal((t, t))
    S = row_softmax(M, beta=1.3)
    assert np.all(S > 0.0) and np.all(S < 1.0 + 1e-15)
    np.testing.assert_allclose(S.sum(axis=1), np.ones(t), atol=1e-12)
    assert np.linalg.norm(S) <= np.sqrt(t) + 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(min_value=2, max_value=6), st.floats(min_value=-50, max_value=50),
       st.integers(min_value=0, max_value=2**31 - 1))
def test_row_softmax_shift_invariance(t, shift, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((t, t))
    M2 = M.copy()
    M2[0] += shift
    S, S2 = row_softmax(M, 1.0), row_softmax(M2, 1.0)
    np.testing.assert_allclose(S2[0], S[0], atol=1e-12)
    np.testing.assert_allclose(S2[1:], S[1:], atol=0.0)


# ---------------------------------------------------------------------------
# softmax_jacobian_row


def test_jacobian_half_half():
    J = softmax_jacobian_row(np.array([0.5, 0.5]), beta=1.0)
    np.testing.assert_allclose(J, [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15)


def test_jacobian_degenerate_limit():
    s = np.array([1.0 - 1e-12, 1e-12])
    J = softmax_jacobian_row(s, beta=1.0)
    assert np.max(np.abs(J)) < 1e-11


def test_jacobian_rejects_non_probability():
    with pytest.raises(ValueError):
        softmax_jacobian_row(np.array([0.7, 0.7]), beta=1.0)
    with pytest.raises(ValueError):
        softmax_jacobian_row(np.array([1.2, -0.2]), beta=1.0)


def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(1)
    m = rng.standard_normal(5)
    s = row_softmax(m[None, :], beta=1.7)[0]
    J = softmax_jacobian_row(s, beta=1.7)

    def s_of_m(mv):
        return row_softmax(mv[None, :], beta=1.7)[0]

    J_fd = np.zeros((5, 5))
    for k in range(5):
        e = np.zeros(5)
        e[k] = 1e-5
        J_fd[:, k] = (s_of_m(m + e) - s_of_m(m - e)) / 2e-5
    assert max_rel_err(J, J_fd) <= 1e-6


def test_jacobian_structure():
    rng = np.random.default_rng(2)
    for _ in range(50):
        t = rng.integers(2, 8)
        s = row_softmax(rng.standard_normal((1, t)), beta=1.0)[0]
        beta = float(rng.uniform(0.2, 3.0))
        J = softmax_jacobian_row(s, beta)
        np.testing.assert_allclose(J, J.T, atol=1e-15)
        np.testing.assert_allclose(J.sum(axis=1), np.zeros(t), atol=1e-14)
        eigs = np.linalg.eigvalsh(J)
        assert eigs.min() >= -1e-12
        assert eigs.max() <= 2.0 * beta + 1e-12


# ---------------------------------------------------------------------------
# softmax hessian


def test_hessian_entry_half_half_diag():
    val = softmax_hessian_entry(np.array([0.5, 0.5]), beta=1.0, j=0, k=0, l=0)
    assert abs(val) < 1e-15  # s (2 s^2 + 1 - 3 s) = 0.5 * (0.5 + 1 - 1.5)


def test_hessian_entries_strictly_bounded():
    rng = np.random.default_rng(3)
    for _ in range(200):
        t = rng.integers(2, 8)
        s = row_softmax(rng.standard_normal((1, t)), beta=1.0)[0]
        H = softmax_hessian_row(s, beta=1.0)
        assert np.max(np.abs(H)) < 6.0
        assert np.linalg.norm(H) <= 6.0 * t**1.5


def test_hessian_matches_nested_finite_differences():
    rng = np.random.default_rng(4)
    t, beta = 3, 0.5
    m = rng.standard_normal(t)
    s = row_softmax(m[None, :], beta=beta)[0]
    H = softmax_hessian_row(s, beta=beta)
    for j in range(t):
        def sj(mv, j=j):
            return row_softmax(mv[None, :], beta=beta)[0][j]

        for k in range(t):
            for l in range(t):
                fd = fd_second_partial(sj, m, k, l, h=1e-4)
                assert abs(H[j, k, l] - fd) <= 1e-5
                assert abs(softmax_hessian_entry(s, beta, j, k, l) - fd) <= 1e-5


def test_hessian_index_out_of_range():
    s = np.array([0.5, 0.5])
    with pytest.raises(IndexError):
        softmax_hessian_entry(s, 1.0, 0, 0, 2)


# ---------------------------------------------------------------------------
# forward / loss


def test_forward_zero_query_uniform_attention():
    rng = np.random.default_rng(5)
    t, d, r = 4, 3, 2
    sample = AttnSample(X=rng.standard_normal((t, d)), Y=np.zeros((t, d)))
    params = AttnParams(
        W_Q=np.zeros((d, r)), W_K=rng.standard_normal((d, r)), W_V=rng.standard_normal((d, d))
    )
    inter = attention_forward(sample, params)
    np.testing.assert_allclose(inter.S, np.full((t, t), 1.0 / t), atol=1e-15)
    expected = np.ones((t, t)) / t @ sample.X @ params.W_V
    np.testing.assert_allclose(inter.Yhat, expected, atol=1e-13)
    # loss closed form for Y = 0
    assert abs(sample_loss(sample, params) - 0.5 * np.sum(expected**2)) < 1e-12


def test_forward_single_token():
    rng = np.random.default_rng(6)
    sample = AttnSample(X=rng.standard_normal((1, 3)), Y=rng.standard_normal((1, 3)))
    params = AttnParams(
        W_Q=rng.standard_normal((3, 2)),
        W_K=rng.standard_normal((3, 2)),
        W_V=rng.standard_normal((3, 3)),
    )
    inter = attention_forward(sample, params)
    np.testing.assert_allclose(inter.S, [[1.0]])
    np.testing.assert_allclose(inter.Yhat, sample.X @ params.W_V)


def test_forward_prediction_norm_bound():
    rng = np.random.default_rng(7)
    sample, params = random_instance(rng, t=4, d=3, r=2)
    inter = attention_forward(sample, params)
    bound = np.sqrt(4) * np.linalg.norm(sample.X) * np.linalg.norm(params.W_V)
    assert np.linalg.norm(inter.Yhat) <= bound + 1e-12


def test_forward_shape_mismatch():
    sample = AttnSample(X=np.zeros((2, 3)), Y=np.zeros((2, 3)))
    params = AttnParams(W_Q=np.zeros((4, 2)), W_K=np.zeros((4, 2)), W_V=np.zeros((4, 4)))
    with pytest.raises(ValueError):
        attention_forward(sample, params)


def test_sample_loss_zero_on_perfect_fit():
    rng = np.random.default_rng(8)
    sample, params = random_instance(rng, t=3, d=2, r=2)
    fitted = AttnSample(X=sample.X, Y=attention_forward(sample, params).Yhat)
    assert sample_loss(fitted, params) == 0.0


def test_sample_loss_matches_forward_recomputation():
    rng = np.random.default_rng(9)
    sample, params = random_instance(rng, t=4, d=3, r=2)
    E = attention_forward(sample, params).E
    assert abs(sample_loss(sample, params) - 0.5 * np.sum(E * E)) < 1e-14


# ---------------------------------------------------------------------------
# gradients


def test_grad_zero_on_perfect_fit():
    rng = np.random.default_rng(10)
    sample, params = random_instance(rng, t=3, d=3, r=2)
    fitted = AttnSample(X=sample.X, Y=attention_forward(sample, params).Yhat)
    gq, gk = sample_loss_grad(fitted, params)
    assert np.max(np.abs(gq)) < 1e-14
    assert np.max(np.abs(gk)) < 1e-14


def test_grad_zero_key_kills_query_gradient():
    rng = np.random.default_rng(11)
    sample, params = random_instance(rng, t=3, d=3, r=2)
    params = AttnParams(W_Q=params.W_Q, W_K=np.zeros((3, 2)), W_V=params.W_V)
    gq, _ = sample_loss_grad(sample, params)
    np.testing.assert_allclose(gq, np.zeros((3, 2)), atol=0.0)


def test_grad_matches_finite_differences():
    rng = np.random.default_rng(12)
    for _ in range(20):
        t = int(rng.integers(2, 5))
        d = int(rng.integers(1, 4))
        r = int(rng.integers(1, 3))
        sample, params = random_instance(rng, t, d, r)
        gq, gk = sample_loss_grad(sample, params)
        T0 = pack_qk(params.W_Q, params.W_K)

        def f(T):
            wq, wk = unpack_qk(T, d, r)
            return sample_loss(sample, AttnParams(W_Q=wq, W_K=wk, W_V=params.W_V, beta=params.beta))

        g_fd = fd_grad(f, T0, h=1e-5)
        assert max_rel_err(pack_qk(gq, gk), g_fd) <= 1e-6


# ---------------------------------------------------------------------------
# empirical risk


def test_empirical_risk_singleton_and_duplication():
    rng = np.random.default_rng(13)
    sample, params = random_instance(rng, t=3, d=2, r=2)
    single = empirical_risk([sample], params)
    assert single == sample_loss(sample, params)
    assert abs(empirical_risk([sample] * 5, params) - single) < 1e-12


def test_empirical_risk_order_independent():
    rng = np.random.default_rng(14)
    batch = [random_instance(rng, 3, 2, 2)[0] for _ in range(6)]
    _, params = random_instance(rng, 3, 2, 2)
    v1 = empirical_risk(batch, params)
    v2 = empirical_risk(batch[::-1], params)
    assert abs(v1 - v2) < 1e-12
    g1 = pack_qk(*empirical_risk_grad(batch, params))
    g2 = pack_qk(*empirical_risk_grad(batch[::-1], params))
    assert np.max(np.abs(g1 - g2)) < 1e-12


def test_empirical_risk_empty_batch():
    _, params = random_instance(np.random.default_rng(15), 2, 2, 1)
    with pytest.raises(ValueError):
        empirical_risk([], params)


def test_gradient_norm_bound_holds():
    rng = np.random.default_rng(16)
    for _ in range(300):
        t = int(rng.integers(1, 5))
        d = int(rng.integers(1, 4))
        r = int(rng.integers(1, 3))
        n = int(rng.integers(1, 4))
        batch = [
            AttnSample(X=rng.standard_normal((t, d)), Y=rng.standard_normal((t, d)))
            for _ in range(n)
        ]
        params = AttnParams(
            W_Q=rng.standard_normal((d, r)),
            W_K=rng.standard_normal((d, r)),
            W_V=rng.standard_normal((d, d)),
            beta=float(rng.uniform(0.3, 2.0)),
        )
        consts = attention_bound_constants(batch, params.W_V, params.beta)
        g = pack_qk(*empirical_risk_grad(batch, params))
        t_norm = np.linalg.norm(pack_qk(params.W_Q, params.W_K))
        assert np.linalg.norm(g) <= consts["c_grad"] * t_norm + 1e-12
