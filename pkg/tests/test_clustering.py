import itertools
from math import comb, log

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcpl.clustering import (
    ClusterModel,
    ari,
    centroids,
    cluster_state,
    empirical_reward_features,
    initial_clusters,
    kmeans,
    kmeans_pp_init,
    network_features,
    nmi,
    one_hot,
    payoff_features,
    select_num_clusters,
    standardize,
    transition_stats,
    update_clusters,
    wcssd,
)
from dcpl.data import Event, EventLog, Network, partition_stages
from dcpl.hawkes import InterventionPlan, make_model
from dcpl.policy.reward import contribution, stage_context


def _blobs(rng, centers, per, scale=1.0):
    X = np.vstack([c + scale * rng.normal(size=(per, len(c))) for c in centers])
    truth = np.repeat(np.arange(len(centers)), per)
    return X, truth


# oracles


def brute_ari(a, b):
    n = len(a)
    pairs = list(itertools.combinations(range(n), 2))
    ss = sum(1 for i, j in pairs if a[i] == a[j] and b[i] == b[j])
    sa = sum(1 for i, j in pairs if a[i] == a[j])
    sb = sum(1 for i, j in pairs if b[i] == b[j])
    total = len(pairs)
    expected = sa * sb / total
    top = 0.5 * (sa + sb)
    if top == expected:
        return 1.0
    return (ss - expected) / (top - expected)


def brute_nmi(a, b):
    n = len(a)
    la, lb = sorted(set(a)), sorted(set(b))

    def H(lab, labels):
        return -sum((lab.count(x) / n) * log(lab.count(x) / n) for x in labels)

    ha, hb = H(list(a), la), H(list(b), lb)
    if ha == 0 and hb == 0:
        return 1.0
    mi = 0.0
    for x in la:
        for y in lb:
            nxy = sum(1 for i in range(n) if a[i] == x and b[i] == y)
            if nxy:
                mi += nxy / n * log(nxy * n / (list(a).count(x) * list(b).count(y)))
    return mi / (0.5 * (ha + hb))


# basic helpers


def test_cluster_state_examples():
    assert cluster_state(one_hot([0], 1), np.array([[1, 2, 3, 4, 5]])).tolist() == [[1, 2, 3, 4, 5]]
    s = np.array([[2, 0, 0, 0, 0], [0, 2, 0, 0, 0]])
    assert cluster_state(one_hot([0, 0], 2), s).tolist() == [[1, 1, 0, 0, 0], [0, 0, 0, 0, 0]]
    X = np.array([[1.0, 3.0], [3.0, 5.0]])
    assert centroids(one_hot([0, 0], 3), X).tolist() == [[2, 4], [0, 0], [0, 0]]


def test_cluster_model_validation():
    with pytest.raises(ValueError):
        ClusterModel(np.array([[1, 1], [0, 1]]), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        ClusterModel(one_hot([0, 1], 2), np.zeros((2, 4)), 0.3, 0.3)
    cm = ClusterModel(one_hot([1, 0, 1], 2), np.zeros((2, 4)))
    assert cm.n_clusters == 2 and cm.labels.tolist() == [1, 0, 1]


def test_standardize_constant_column():
    X = standardize(np.array([[1.0, 5.0], [3.0, 5.0]]))
    assert X.tolist() == [[-1.0, 0.0], [1.0, 0.0]]


# initial clusters


def _training_instance():
    net = Network.from_edges([(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], 4)
    evs = []
    for k in range(4):
        evs += [Event(k + 0.1, 0, "tweet", "T"), Event(k + 0.2, 1, "tweet", "F"),
                Event(k + 0.3, 2, "tweet", "T"), Event(k + 0.4, 3, "retweet", "F", 0)]
    return EventLog.from_events(evs, 4), net, partition_stages(0, 4, 1)


def test_initial_clusters_single_and_all():
    log_, net, part = _training_instance()
    rng = np.random.default_rng(0)
    cm, X = initial_clusters(log_, net, part, 1, rng)
    assert cm.membership.sum(axis=0).tolist() == [4]
    assert np.allclose(cm.centroids[0], X.mean(axis=0))
    X_raw = np.array([[0, 0], [1, 0], [0, 2], [5, 5]], dtype=float)
    labels, Y, score = kmeans(X_raw, 4, rng)
    assert len(set(labels)) == 4 and score == 0.0
    with pytest.raises(ValueError):
        initial_clusters(log_, net, part, 5, rng)
    with pytest.raises(ValueError):
        initial_clusters(log_, net, part, 0, rng)


def test_empirical_reward_features_hand_computed():
    log_, net, part = _training_instance()
    F = empirical_reward_features(log_, net, part)
    G = net.adjacency
    gram = G.T @ G
    nT = np.array([1, 0, 1, 0.0])
    nF = np.array([0, 1, 0, 0.0])
    rF = np.array([0, 0, 0, 1.0])
    expected_tweet = 4 * nT * (gram @ nF) / 4
    assert np.allclose(F[:, 0], expected_tweet)
    # nobody retweets true content, so the retweet reward vanishes
    assert rF.sum() == 1 and not F[:, 1].any()
    assert np.array_equal(F[:, :2], F[:, 2:])


def test_two_blob_recovery_matches_optimal_partition():
    rng = np.random.default_rng(1)
    X, truth = _blobs(rng, [np.zeros(2), np.full(2, 8.0)], 6)
    best, best_lab = np.inf, None
    for bits in itertools.product([0, 1], repeat=11):
        lab = np.array((0,) + bits)
        if lab.min() == lab.max():
            continue
        Y = np.array([X[lab == c].mean(axis=0) for c in (0, 1)])
        s = wcssd(X, lab, Y)
        if s < best:
            best, best_lab = s, lab
    labels, _, score = kmeans(X, 2, rng, n_init=5)
    assert ari(labels, best_lab) == 1.0
    assert ari(labels, truth) == 1.0
    assert score == pytest.approx(best)


def test_kmeanspp_deterministic():
    X = np.random.default_rng(0).normal(size=(30, 4))
    a = kmeans_pp_init(X, 4, np.random.default_rng(5))
    b = kmeans_pp_init(X, 4, np.random.default_rng(5))
    assert np.array_equal(a, b)


# payoff and contribution


def test_payoff_examples():
    assert not payoff_features(np.ones(3), np.ones(3), 5).any()
    assert payoff_features(np.array([2.0, 1.0]), np.array([1.0, 1.0]), 3).tolist() == [1.0, 0.0]
    assert not payoff_features(np.array([2.0, 1.0]), np.array([1.0, 1.0]), 2).any()


def _poisson_ctx():
    net = Network.from_edges([(0, 1)], 2)
    m = make_model(2, 0.5)
    return stage_context(m, net, EventLog.empty(2), 1.0, 1.0), net


def test_contribution_zero_plan():
    ctx, _ = _poisson_ctx()
    plan = InterventionPlan.zero(2)
    assert not contribution(ctx, plan, 0).any()


def test_contribution_poisson_closed_form():
    ctx, net = _poisson_ctx()
    a = np.array([1.5, 0.7])
    plan = InterventionPlan(a, a)
    q = contribution(ctx, plan, 0)
    nF = np.full(2, 0.5)
    expected = a * 1.0 * (net.gram @ nF) / 2
    assert np.allclose(q, expected, atol=1e-12)
    # zeroing user i's boost only, no renormalization
    from dcpl.policy.reward import expected_reward

    for i in range(2):
        b = a.copy()
        b[i] = 0.0
        _, _, s_full = expected_reward(ctx, plan)
        _, _, s_drop = expected_reward(ctx, InterventionPlan(b, a))
        assert s_full[0, i] - s_drop[0, i] == pytest.approx(q[i], abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**16))
def test_contribution_nonnegative(seed):
    rng = np.random.default_rng(seed)
    n = 5
    G = (rng.random((n, n)) < 0.5).astype(float)
    np.fill_diagonal(G, 0)
    K = G * rng.uniform(0, 0.3, (n, n))
    m = make_model(n, rng.uniform(0.1, 1.0, n), kernels={"tweet": K, "retweet": K})
    hist = EventLog.from_events([Event(float(t), int(u), "tweet", lab) for t, u, lab in
                                 zip(rng.uniform(0, 2, 12), rng.integers(0, n, 12), rng.choice(["T", "F"], 12))], n)
    ctx = stage_context(m, Network(G), hist, 2.0, 1.0)
    plan = InterventionPlan(rng.uniform(0, 2, n), rng.uniform(0, 2, n))
    for z in (0, 1):
        assert contribution(ctx, plan, z).min() >= -1e-12


# update clusters


def _fixed_points(Y_k, X, eps1, eps2):
    """All memberships with non-empty clusters that the update rule maps to themselves."""
    n, C = X.shape[0], Y_k.shape[0]
    out = []
    for bits in itertools.product(range(C), repeat=n):
        lab = np.array(bits)
        if len(set(bits)) < C:
            continue
        Yw = eps1 * centroids(one_hot(lab, C), X) + eps2 * Y_k
        new = ((X[:, None] - Yw[None]) ** 2).sum(axis=2).argmin(axis=1)
        if np.array_equal(new, lab):
            out.append(lab)
    return out


@pytest.mark.parametrize("seed", range(4))
def test_update_clusters_fixed_point_oracle(seed):
    rng = np.random.default_rng(seed)
    X, _ = _blobs(rng, [np.zeros(2), np.array([4.0, 0.0])], 5, scale=1.2)
    Y_k = np.array([[0.5, 0.5], [3.5, -0.5]])
    M0 = one_hot(rng.integers(0, 2, 10), 2)
    res = update_clusters(Y_k, M0, X, delta=1e-12)
    fps = _fixed_points(Y_k, X, 0.5, 0.5)
    assert any(np.array_equal(res.labels, f) for f in fps)


def test_update_clusters_eps2_one_freezes():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(15, 4))
    Y_k = rng.normal(size=(3, 4))
    M0 = one_hot(rng.integers(0, 3, 15), 3)
    res = update_clusters(Y_k, M0, X, eps1=0.0, eps2=1.0)
    assert np.array_equal(res.centroids, Y_k)
    nearest = ((X[:, None] - Y_k[None]) ** 2).sum(axis=2).argmin(axis=1)
    assert np.array_equal(res.labels, nearest)
    again = update_clusters(Y_k, res.membership, X, eps1=0.0, eps2=1.0)
    assert np.array_equal(again.membership, res.membership)


def test_update_clusters_eps2_zero_is_lloyd():
    from dcpl.clustering import lloyd

    rng = np.random.default_rng(4)
    X = rng.normal(size=(20, 3))
    labels0 = rng.integers(0, 3, 20)
    M0 = one_hot(labels0, 3)
    Y0 = centroids(M0, X)
    res = update_clusters(Y0, M0, X, delta=1e-12, eps1=1.0, eps2=0.0)
    lab, Y = lloyd(X, Y0, tol=1e-12)
    assert np.array_equal(res.labels, lab)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**16), st.integers(1, 5), st.floats(0, 1))
def test_update_clusters_one_hot(seed, C, eps2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 4))
    res = update_clusters(rng.normal(size=(C, 4)), one_hot(rng.integers(0, C, 12), C), X,
                          eps1=1 - eps2, eps2=eps2)
    assert np.array_equal(res.membership.sum(axis=1), np.ones(12))
    assert np.isin(res.membership, (0, 1)).all()


# cluster-count selection


def test_select_three_blobs():
    rng = np.random.default_rng(0)
    X, _ = _blobs(rng, [np.zeros(4), np.full(4, 10.0), np.r_[10.0, -10, 0, 0]], 30)
    rows, chosen = select_num_clusters(X, range(1, 7), rng)
    assert chosen == 3
    assert [r["C"] for r in rows] == list(range(1, 7))


def test_select_edge_cases():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(6, 2))
    rows, _ = select_num_clusters(X, [2, 4, 6], rng)
    assert rows[-1]["wcssd"] == pytest.approx(0.0, abs=1e-12)
    rows, chosen = select_num_clusters(X, [2, 3], rng)
    assert chosen is None and len(rows) == 2


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**16))
def test_wcssd_non_increasing(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 3))
    w = [r["wcssd"] for r in select_num_clusters(X, range(1, 9), rng, n_init=2)[0]]
    assert all(b <= a + 1e-9 for a, b in zip(w, w[1:]))


# ari / nmi


def test_ari_nmi_examples():
    a = [0, 0, 1, 1, 2]
    assert ari(a, a) == 1.0 and nmi(a, a) == pytest.approx(1.0)
    assert ari(a, [2, 2, 0, 0, 1]) == 1.0 and nmi(a, [2, 2, 0, 0, 1]) == pytest.approx(1.0)
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(brute_ari([0, 0, 1, 1], [0, 1, 0, 1]))
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        ari([0, 1], [0, 1, 1])


def test_ari_nmi_exhaustive_small():
    for n in range(2, 6):
        labs = list(itertools.product(range(3), repeat=n))
        for a in labs[:: max(1, len(labs) // 20)]:
            for b in labs[:: max(1, len(labs) // 15)]:
                assert abs(ari(a, b) - brute_ari(a, b)) <= 1e-10
                assert abs(nmi(a, b) - brute_nmi(a, b)) <= 1e-10


labelings = st.lists(st.integers(0, 2), min_size=2, max_size=8)


@settings(max_examples=60, deadline=None)
@given(labelings, st.data(), st.permutations([0, 1, 2]))
def test_ari_nmi_symmetric_and_permutation_invariant(a, data, perm):
    b = data.draw(st.lists(st.integers(0, 2), min_size=len(a), max_size=len(a)))
    assert ari(a, b) == pytest.approx(ari(b, a), abs=1e-12)
    assert nmi(a, b) == pytest.approx(nmi(b, a), abs=1e-12)
    b2 = [perm[x] for x in b]
    assert ari(a, b2) == pytest.approx(ari(a, b), abs=1e-12)
    assert nmi(a, b2) == pytest.approx(nmi(a, b), abs=1e-12)
    assert comb(len(a), 2) >= 1


# network features


def test_network_features_examples():
    assert not network_features(Network(np.zeros((3, 3)))).any()
    tri = network_features(Network.from_edges([(0, 1), (1, 2), (2, 0)], 3))
    assert tri[:, 0].tolist() == [2, 2, 2]
    assert tri[:, 2].tolist() == [1, 1, 1]
    path = network_features(Network.from_edges([(0, 1), (1, 2)], 3))
    assert path[1, 2] == 0.0
    assert path[1, 1] == pytest.approx(1.0)
    assert path[0, 1] == pytest.approx((1 + 0.5) / 2)


def test_transition_stats():
    unique, switches = transition_stats([[0, 1, 2], [0, 2, 2], [1, 1, 2]])
    assert unique.tolist() == [2, 2, 1]
    assert switches.tolist() == [1, 2, 0]
