import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcpl.clustering import centroids, one_hot
from dcpl.data import Network
from dcpl.hawkes import InterventionPlan, make_model, simulate
from dcpl.policy import (
    MLP,
    PolicyNet,
    Setup,
    StageContext,
    ValueNet,
    discounted_returns,
    expected_reward,
    fixed_advance,
    load_checkpoint,
    rollout,
    save_checkpoint,
    sgd_step,
    stage_context,
    stage_return,
    total_objective,
    user_interventions,
)
from dcpl.policy.nets import flatten_grads


def _fd(net, f, h=1e-5):
    th = net.flat()
    g = np.zeros_like(th)
    for i in range(len(th)):
        for s in (1, -1):
            t2 = th.copy()
            t2[i] += s * h
            net.set_flat(t2)
            g[i] += s * f() / (2 * h)
    net.set_flat(th)
    return g


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# forward


def test_policy_zero_weights_gives_ln2():
    pol = PolicyNet(3, hidden=(4, 4))
    pol.mlp.set_flat(np.zeros_like(pol.mlp.flat()))
    a_t, a_r, _ = pol.forward(np.random.default_rng(0).normal(size=15))
    assert np.allclose(a_t, np.log(2)) and np.allclose(a_r, np.log(2))
    assert a_r.shape == (3, 3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16))
def test_policy_outputs_nonnegative(seed):
    rng = np.random.default_rng(seed)
    pol = PolicyNet(3, hidden=(8, 8), rng=rng)
    pol.mlp.set_flat(pol.mlp.flat() * 20)
    a_t, a_r, _ = pol.forward(rng.normal(scale=50, size=15))
    assert (a_t >= 0).all() and (a_r >= 0).all()


def test_policy_jacobian_matches_fd():
    rng = np.random.default_rng(1)
    pol = PolicyNet(3, hidden=(6, 5), rng=rng)
    x = rng.normal(size=15)
    w_t, w_r = rng.normal(size=3), rng.normal(size=(3, 3))

    def f():
        a_t, a_r, _ = pol.forward(x)
        return float(w_t @ a_t + (w_r * a_r).sum())

    _, _, cache = pol.forward(x)
    analytic = flatten_grads(pol.backward(cache, w_t, w_r))
    assert _rel(analytic, _fd(pol.mlp, f)) <= 1e-4


def test_tied_policy_reuses_tweet_head():
    pol = PolicyNet(4, hidden=(3,), tied=True, rng=np.random.default_rng(0))
    a_t, a_r, _ = pol.forward(np.ones(20))
    assert np.array_equal(a_t, a_r)


# interventions


def test_interventions_uniform_at_centroids():
    X = np.array([[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]])
    M = one_hot([0, 0, 1], 2)
    plan, _ = user_interventions(np.ones(2), np.ones((2, 2)), X, centroids(M, X), M, np.ones((3, 3)), (3.0, 1.5))
    assert plan.a_tweet.tolist() == [1.0, 1.0, 1.0]
    assert plan.a_retweet.tolist() == [0.5, 0.5, 0.5]


def test_interventions_normalization_example():
    # unit distances and cluster actions (1, 3) give raw (1, 3)
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    Y = np.zeros((2, 2))
    M = one_hot([0, 1], 2)
    plan, _ = user_interventions(np.array([1.0, 3.0]), np.ones((2, 2)), X, Y, M, np.ones((2, 2)), (8.0, 1.0))
    assert plan.a_tweet.tolist() == [2.0, 6.0]
    assert plan.a_tweet.sum() == 8.0


def test_interventions_pairwise_matches_double_loop():
    rng = np.random.default_rng(2)
    n, C = 3, 2
    X, Y = rng.normal(size=(n, 4)), rng.normal(size=(C, 4))
    M = one_hot([0, 1, 1], C)
    a_t, a_r, phi = rng.uniform(0, 2, C), rng.uniform(0, 2, (C, C)), rng.uniform(0, 1, (n, n))
    plan, _ = user_interventions(a_t, a_r, X, Y, M, phi, (2.0, 3.0))
    c = [0, 1, 1]
    d = [np.linalg.norm(X[i] - Y[c[i]]) for i in range(n)]
    raw = np.zeros(n)
    for i in range(n):
        for j in range(n):
            raw[i] += a_r[c[i], c[j]] * d[i] * d[j] * phi[j, i]
    raw /= n
    assert np.allclose(plan.a_retweet, raw / raw.sum() * 3.0, rtol=1e-12)
    raw_t = np.array([a_t[c[i]] * d[i] for i in range(n)])
    assert np.allclose(plan.a_tweet, raw_t / raw_t.sum() * 2.0, rtol=1e-12)


def test_interventions_reject_negative_budget():
    with pytest.raises(ValueError):
        user_interventions(np.ones(1), np.ones((1, 1)), np.zeros((2, 1)), np.zeros((1, 1)),
                           one_hot([0, 0], 1), np.ones((2, 2)), (-1.0, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**16), st.integers(1, 4), st.floats(0, 500), st.floats(0, 500), st.booleans())
def test_budget_invariant(seed, C, bt, br, weighted):
    rng = np.random.default_rng(seed)
    n = 7
    X = rng.normal(size=(n, 4))
    M = one_hot(rng.integers(0, C, n), C)
    plan, _ = user_interventions(rng.uniform(0, 3, C), rng.uniform(0, 3, (C, C)), X, centroids(M, X), M,
                                 rng.uniform(0, 1, (n, n)), (bt, br), weighted)
    for a, b in ((plan.a_tweet, bt), (plan.a_retweet, br)):
        assert (a >= 0).all()
        assert abs(a.sum() - b) <= 1e-9 * max(1.0, b)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16))
def test_single_cluster_depends_on_distance_only(seed):
    rng = np.random.default_rng(seed)
    n = 6
    M = one_hot(np.zeros(n, dtype=int), 1)
    X = rng.normal(size=(n, 3))
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    X2 = X @ Q + rng.normal(size=3)  # rigid motion keeps the distances to the mean
    args = (np.array([1.3]), np.array([[0.4]]))
    p1, _ = user_interventions(*args, X, centroids(M, X), M, np.ones((n, n)), (2.0, 2.0))
    p2, _ = user_interventions(*args, X2, centroids(M, X2), M, np.ones((n, n)), (2.0, 2.0))
    assert np.allclose(p1.a_tweet, p2.a_tweet) and np.allclose(p1.a_retweet, p2.a_retweet)
    same = np.tile(X[:1], (n, 1))
    p3, _ = user_interventions(*args, same, centroids(M, same), M, np.ones((n, n)), (2.0, 2.0))
    assert np.array_equal(p3.a_tweet, np.full(n, 2.0 / n))


# reward


def _ctx(n_true, n_fake, G, jac=None):
    n = len(n_true)
    gram = G.T @ G
    jac = np.stack([np.eye(n)] * 2) if jac is None else jac
    return StageContext(0.0, 1.0, np.zeros((n, 5)), np.stack([n_fake, n_fake]), np.stack([n_true, n_true]),
                        jac, np.zeros(n), gram)


def test_expected_reward_examples():
    G = np.array([[0.0, 1.0], [0.0, 0.0]])
    rt, rr, summ = expected_reward(_ctx(np.array([0.0, 2.0]), np.array([0.0, 1.0]), G), None)
    assert rt == 1.0 and rr == 1.0
    assert summ.sum(axis=1).tolist() == [rt, rr]
    rt, _, _ = expected_reward(_ctx(np.ones(2), np.ones(2), np.zeros((2, 2))), None)
    assert rt == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16))
def test_summands_sum_to_reward(seed):
    rng = np.random.default_rng(seed)
    n = 6
    G = (rng.random((n, n)) < 0.4).astype(float)
    ctx = _ctx(rng.uniform(0, 3, n), rng.uniform(0, 3, n), G, rng.uniform(0, 1, (2, n, n)))
    plan = InterventionPlan(rng.uniform(0, 1, n), rng.uniform(0, 1, n))
    rt, rr, summ = expected_reward(ctx, plan)
    assert summ[0].sum() == pytest.approx(rt, rel=1e-12) and summ[1].sum() == pytest.approx(rr, rel=1e-12)


class _ConstValue:
    def __init__(self, v):
        self.v = v

    def __call__(self, s):
        return self.v


def test_stage_return_examples():
    G = np.array([[0.0, 1.0], [0.0, 0.0]])
    ctx = _ctx(np.array([0.0, 1.5]), np.array([0.0, 1.0]), G)
    ER = sum(expected_reward(ctx, None)[:2])
    assert ER == 1.5
    assert stage_return(ctx, None, _ConstValue(99.0), 0.0)[0] == ER
    assert stage_return(ctx, None, _ConstValue(0.0), 0.9)[0] == ER
    assert stage_return(ctx, None, _ConstValue(10.0), 0.7)[0] == pytest.approx(ER + 7.0)
    assert 3.0 + 0.7 * 10.0 == pytest.approx(10.0)


# objective


def test_total_objective_examples():
    J, Jphi, tr = total_objective([2.0], [0.5], 0.7)
    assert tr["D"].tolist() == [2.0] and J == 1.5 and Jphi == -1.5
    assert discounted_returns([1.0, 2.0, 4.0], 0.0).tolist() == [1.0, 2.0, 4.0]
    assert discounted_returns([1.0, 2.0, 4.0], 0.5).tolist() == [3.0, 4.0, 4.0]
    _, _, tr = total_objective([1.0, 2.0, 4.0], [1.0, 1.0, 1.0], 0.5)
    assert np.array_equal(tr["B"], tr["D"] - tr["V"])
    with pytest.raises(ValueError):
        total_objective([], [], 0.5)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=12), st.floats(0, 1))
def test_discount_recursion(r, gamma):
    D = discounted_returns(r, gamma)
    for k in range(len(r) - 1):
        assert D[k] == pytest.approx(r[k] + gamma * D[k + 1], rel=1e-12, abs=1e-9)


# sgd


def test_sgd_examples():
    net = MLP((1, 1), layers=[(np.array([[1.0]]), np.array([0.0]))])
    sgd_step(net, [(np.zeros((1, 1)), np.zeros(1))], 0.1)
    assert net.flat().tolist() == [1.0, 0.0]
    sgd_step(net, [(np.array([[2.0]]), np.zeros(1))], 0.1)
    assert net.flat()[0] == pytest.approx(1.2)
    net = MLP((1, 1), layers=[(np.zeros((1, 1)), np.zeros(1))])
    step = sgd_step(net, [(np.array([[60.0]]), np.array([80.0]))], 1.0)
    assert np.linalg.norm(step) == pytest.approx(10.0)
    assert step.tolist() == pytest.approx([6.0, 8.0])
    with pytest.raises(ValueError):
        sgd_step(net, [(np.zeros((1, 1)), np.zeros(1))], 0.0)


def test_sgd_skips_non_finite(caplog):
    net = MLP((1, 1), layers=[(np.ones((1, 1)), np.zeros(1))])
    step = sgd_step(net, [(np.array([[np.nan]]), np.zeros(1))], 0.1)
    assert not step.any() and net.flat().tolist() == [1.0, 0.0]
    assert "non-finite" in caplog.text


# exact gradients


def _fd_instance(weighted=False):
    rng = np.random.default_rng(3)
    n = 3
    net = Network.from_edges([(0, 1), (1, 2), (2, 0), (0, 2)], n)
    G = net.adjacency.astype(float)
    model = make_model(n, mu=0.5, omega=1.0, kernels={"tweet": 0.3 * G, "retweet": 0.2 * G + 0.1, "like": 0.2 * G})
    hist = simulate(model, 0, 4, 1.0, net, seed=1)
    ctxs = [stage_context(model, net, hist, tau, 1.0) for tau in (2.0, 3.0)]
    Xs = [rng.normal(size=(n, 4)), rng.normal(size=(n, 4))]
    Ms = [one_hot([0, 1, 1], 2), one_hot([1, 0, 1], 2)]
    budgets = np.array([[1.5, 2.0], [0.7, 1.1]])
    pol = PolicyNet(2, hidden=(5, 4), rng=rng)
    val = ValueNet(n, hidden=(6,), rng=rng)
    phi_r = model["retweet_T"].kernel.dense()
    setup = Setup(gamma=0.7, weighted=weighted)

    def run():
        return rollout(pol, val, ctxs, budgets, phi_r, setup, Xs[0], Ms[0], fixed_advance(Xs, Ms))

    return pol, val, run


def test_rollout_gradients_match_fd():
    pol, val, run = _fd_instance()
    out = run()
    assert _rel(flatten_grads(out.grad_theta), _fd(pol.mlp, lambda: run().J_theta)) <= 1e-4
    assert _rel(flatten_grads(out.grad_phi), _fd(val.mlp, lambda: run().J_phi)) <= 1e-4


def test_backward_linear_and_zero_seed():
    mlp = MLP((3, 2, 1), rng=np.random.default_rng(0))
    _, cache = mlp.forward(np.array([0.3, -1.0, 2.0]))
    g1 = flatten_grads(mlp.backward(cache, np.array([1.0]))[0])
    assert np.allclose(flatten_grads(mlp.backward(cache, np.array([2.5]))[0]), 2.5 * g1)
    assert not flatten_grads(mlp.backward(cache, np.array([0.0]))[0]).any()


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    pol, val = PolicyNet(3, hidden=(4, 4), rng=rng), ValueNet(5, hidden=(3,), rng=rng)
    p = tmp_path / "ck.json"
    save_checkpoint(str(p), pol, val, {"C": 3, "N": 5, "seed": 1, "epoch": 2})
    pol2, val2, meta = load_checkpoint(str(p))
    assert np.array_equal(pol2.mlp.flat(), pol.mlp.flat())
    assert np.array_equal(val2.mlp.flat(), val.mlp.flat())
    assert meta["epoch"] == 2 and pol2.n_clusters == 3
    x = rng.normal(size=15)
    assert np.array_equal(pol2.forward(x)[0], pol.forward(x)[0])
