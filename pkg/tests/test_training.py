import numpy as np
import pytest

from fairrank.data import ItemRecord, SyntheticConfig, from_arrays, generate_synthetic, standardize
from fairrank.metrics import FairnessKind, ItemValueTable, empirical_fairness, group_fairness
from fairrank.training import (Batch, LinearModel, TrainConfig, TrainingError, as_batch,
                               evaluate_objective, gradient, load_model, objective, regularizer,
                               save_model, score, squared_loss, train_gd, train_sgd)


def make_data(X, y, a, qid):
    return from_arrays(np.asarray(X, float), y, a, qid)


def test_score_basics():
    item = ItemRecord("q", "d", (2.0, 5.0), 1, 0)
    assert score(LinearModel([0.0, 0.0]), item) == 0.0
    assert score(LinearModel([1.0, 0.0]), item) == 2.0
    t1, t2 = np.array([0.3, -1.2]), np.array([2.0, 0.7])
    assert score(LinearModel(t1 + t2), item) == pytest.approx(
        score(LinearModel(t1), item) + score(LinearModel(t2), item))
    with pytest.raises(ValueError):
        score(LinearModel([1.0]), item)


def test_squared_loss_examples():
    data = make_data([[1.0], [0.0]], [1, 0], [0, 1], [0, 0])
    assert squared_loss(LinearModel([1.0]), data) == 0.0
    ones = make_data([[1.0], [2.0], [3.0]], [1, 1, 1], [0, 0, 1], [0, 0, 0])
    assert squared_loss(LinearModel([0.0]), ones) == 1.0
    half = make_data([[1.0], [0.0]], [1, 0], [0, 0], [0, 0])
    assert squared_loss(LinearModel([0.5]), half) == 0.125


def test_regularizer_single_query_eop():
    data = make_data([[1.0], [0.0]], [1, 1], [0, 1], [0, 0])
    model = LinearModel([1.0])
    assert regularizer(model, data, "eop", "amortized") == 1.0
    assert regularizer(model, data, "eop", "per_query") == 1.0


def test_regularizer_equal_multisets():
    data = make_data([[0.2], [0.7], [0.7], [0.2]], [1, 1, 1, 1], [0, 0, 1, 1], [0, 0, 0, 0])
    for kind in ("eop", "dp"):
        assert regularizer(LinearModel([1.0]), data, kind) == 0.0


def test_regularizer_per_query_mean():
    # query 0: eop gap 0.2, query 1: eop gap 0.4
    data = make_data([[0.5], [0.3], [0.9], [0.5]], [1, 1, 1, 1], [0, 1, 0, 1], [0, 0, 1, 1])
    assert regularizer(LinearModel([1.0]), data, "eop", "per_query") == pytest.approx(0.3)


def test_per_query_skips_incomplete_queries():
    # query 1 has no protected item and is left out of the average
    data = make_data([[0.5], [0.3], [0.9], [0.5]], [1, 1, 1, 1], [0, 1, 0, 0], [0, 0, 1, 1])
    assert regularizer(LinearModel([1.0]), data, "eop", "per_query") == pytest.approx(0.2)


def test_amortized_missing_cell_contributes_zero():
    # no irrelevant protected item: only the r=1 half of EOd remains
    data = make_data([[0.5], [0.3], [0.1]], [1, 1, 0], [0, 1, 0], [0, 0, 0])
    assert regularizer(LinearModel([1.0]), data, "eod") == pytest.approx(0.5 * 0.2)


def test_objective_combination(biased_data):
    model = LinearModel(np.linspace(-0.3, 0.4, biased_data.feature_dim))
    loss = squared_loss(model, biased_data)
    gamma = regularizer(model, biased_data, "eop")
    assert objective(model, biased_data, TrainConfig(alpha=0.0)) == loss
    assert objective(model, biased_data, TrainConfig(alpha=2.0)) == pytest.approx(loss + 2 * gamma)


def test_objective_continuous_along_segment(biased_data, rng):
    D = biased_data.feature_dim
    a, b = rng.normal(size=D), rng.normal(size=D)
    cfg = TrainConfig(alpha=3.0, kind="eod")
    ts = np.linspace(0, 1, 2001)
    vals = np.array([objective(LinearModel(a + t * (b - a)), biased_data, cfg) for t in ts])
    # Lipschitz along the segment: neighbouring values differ by O(step)
    assert np.max(np.abs(np.diff(vals))) < 50 * (ts[1] - ts[0]) * (1 + np.linalg.norm(b - a)) ** 2


def test_gradient_single_item():
    x = np.array([0.7, -1.3, 2.0])
    data = make_data([x], [1], [0], [0])
    g = gradient(LinearModel(np.zeros(3)), data, TrainConfig(alpha=0.0))
    np.testing.assert_allclose(g, -2 * x)


def test_kink_contributes_zero():
    data = make_data([[1.0, 0.0], [1.0, 5.0]], [1, 1], [0, 1], [0, 0])
    model = LinearModel([1.0, 0.0])  # equal group means
    g0 = gradient(model, data, TrainConfig(alpha=0.0))
    g = gradient(model, data, TrainConfig(alpha=10.0))
    np.testing.assert_array_equal(g, g0)


def random_batch(rng, n_queries, max_items, D):
    X, y, a, qid = [], [], [], []
    for q in range(n_queries):
        m = int(rng.integers(2, max_items + 1))
        X.append(rng.normal(size=(m, D)))
        y.append(rng.integers(0, 2, m))
        a.append(rng.integers(0, 2, m))
        qid.append(np.full(m, q))
    return Batch(np.vstack(X), np.concatenate(y).astype(float), np.concatenate(a),
                 np.concatenate(qid), n_queries)


def finite_difference(theta, batch, alpha, kind, scope, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(len(theta)):
        e = np.zeros_like(theta)
        e[i] = h
        up = evaluate_objective(theta + e, batch, alpha, kind, scope).objective
        dn = evaluate_objective(theta - e, batch, alpha, kind, scope).objective
        g[i] = (up - dn) / (2 * h)
    return g


def near_kink(theta, batch, kind, scope):
    s = batch.X @ theta
    if scope == "amortized":
        fair = group_fairness(s, batch.y, batch.protected, kind)
    else:
        fair = group_fairness(s, batch.y, batch.protected, kind, batch.qid, batch.n_queries)
    return bool((np.abs(fair.delta[fair.valid]) < 1e-6).any())


@pytest.mark.parametrize("scope", ["amortized", "per_query"])
@pytest.mark.parametrize("kind", list(FairnessKind))
def test_gradient_finite_differences(kind, scope):
    rng = np.random.default_rng(hash((kind.value, scope)) % 2 ** 32)
    checked = 0
    for _ in range(20):
        batch = random_batch(rng, int(rng.integers(1, 6)), 8, int(rng.integers(1, 6)))
        theta = rng.normal(size=batch.X.shape[1])
        if near_kink(theta, batch, kind, scope):
            continue
        alpha = float(rng.uniform(0, 5))
        g = evaluate_objective(theta, batch, alpha, kind, scope).grad
        fd = finite_difference(theta, batch, alpha, kind, scope)
        assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)
        checked += 1
    assert checked >= 15


def test_regularizer_matches_metric(biased_data, rng):
    arr = biased_data.arrays()
    for kind in FairnessKind:
        theta = rng.normal(size=biased_data.feature_dim)
        table = ItemValueTable(arr.protected, arr.y.astype(int), arr.X @ theta)
        assert regularizer(LinearModel(theta), biased_data, kind) == pytest.approx(
            empirical_fairness(table, kind), abs=1e-12)


# ---------------------------------------------------------------------------
# optimizers


def label_feature_data():
    y = np.array([1, 1, 1, 0, 1, 1, 0, 1])
    return make_data(y[:, None].astype(float), y, [0, 1] * 4, [0] * 4 + [1] * 4)


def test_gd_converges_to_least_squares_one_feature():
    model, trace = train_gd(label_feature_data(), TrainConfig(alpha=0.0, steps=1500, learning_rate=0.003))
    assert abs(model.theta[0] - 1.0) < 1e-2
    assert len(trace) == 1500


def test_gd_zero_steps():
    model, trace = train_gd(label_feature_data(), TrainConfig(steps=0))
    assert np.array_equal(model.theta, [0.0])
    assert len(trace) == 0


def test_gd_deterministic(biased_data):
    cfg = TrainConfig(alpha=2.0, steps=200)
    m1, t1 = train_gd(biased_data, cfg)
    m2, t2 = train_gd(biased_data, cfg)
    assert m1.theta.tobytes() == m2.theta.tobytes()
    assert t1.objective == t2.objective


def test_gd_normal_equations(rng):
    n, D = 400, 5
    X = rng.normal(size=(n, D))
    y = (rng.random(n) < 0.5).astype(int)
    data = make_data(X, y, rng.integers(0, 2, n), np.repeat(np.arange(40), 10))
    theta_star = np.linalg.lstsq(X, y, rcond=None)[0]
    model, _ = train_gd(data, TrainConfig(alpha=0.0, steps=6000, learning_rate=0.05))
    residual_grad = 2 * X.T @ (X @ model.theta - y) / n
    assert np.linalg.norm(residual_grad) < 1e-6
    np.testing.assert_allclose(model.theta, theta_star, atol=1e-5)


@pytest.mark.parametrize("alpha", [0.0, 0.5])
@pytest.mark.parametrize("kind", list(FairnessKind))
def test_gd_objective_monotone_small_lr(biased_data, kind, alpha):
    # instances whose trajectory stays off the |delta| kink; on the kink a
    # subgradient step may chatter by O(lr * alpha)
    data, _ = standardize(biased_data)
    _, trace = train_gd(data, TrainConfig(alpha=alpha, kind=kind, steps=300, learning_rate=1e-4))
    assert np.all(np.diff(trace.objective) <= 1e-12)


def test_nonfinite_objective_aborts(biased_data):
    with pytest.raises(TrainingError, match="non-finite"):
        with np.errstate(over="ignore", invalid="ignore"):
            train_gd(biased_data, TrainConfig(learning_rate=1e6, steps=200))


def test_sgd_full_batch_equals_gd_step(biased_data):
    gd_cfg = TrainConfig(alpha=3.0, kind="eod", steps=1, learning_rate=0.01)
    sgd_cfg = TrainConfig(alpha=3.0, kind="eod", optimizer="sgd", epochs=1, learning_rate=0.01,
                          queries_per_batch=10 ** 6, docs_per_query_cap=10 ** 6, seed=5)
    m_gd, _ = train_gd(biased_data, gd_cfg)
    m_sgd, _ = train_sgd(biased_data, sgd_cfg)
    assert m_gd.theta.tobytes() == m_sgd.theta.tobytes()


def test_sgd_seed_changes_batch_order(biased_data):
    cfg = dict(optimizer="sgd", epochs=2, queries_per_batch=16, docs_per_query_cap=5, learning_rate=1e-3)
    _, t1 = train_sgd(biased_data, TrainConfig(seed=1, **cfg))
    _, t2 = train_sgd(biased_data, TrainConfig(seed=2, **cfg))
    assert len(t1.batch_orders) == 2
    assert t1.batch_orders != t2.batch_orders
    assert sorted(t1.batch_orders[0]) == sorted(biased_data.query_ids)
    assert len(t1) == 2 * int(np.ceil(biased_data.n_queries / 16))


def test_sgd_deterministic(biased_data):
    cfg = TrainConfig(alpha=1.0, optimizer="sgd", epochs=2, queries_per_batch=10,
                      docs_per_query_cap=4, seed=3, learning_rate=1e-3)
    assert train_sgd(biased_data, cfg)[0].theta.tobytes() == train_sgd(biased_data, cfg)[0].theta.tobytes()


def test_sgd_counts_degenerate_batches(biased_data):
    cfg = TrainConfig(alpha=1.0, optimizer="sgd", epochs=1, queries_per_batch=1,
                      docs_per_query_cap=2, seed=0, learning_rate=1e-3)
    _, trace = train_sgd(biased_data, cfg)
    assert 0 < trace.degenerate_batches <= len(trace)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_sgd_large_alpha_reduces_train_gamma(seed):
    data = generate_synthetic(SyntheticConfig(n_queries=500, items_per_query=10, latent_dim=3,
                                              protected_rate=0.3, group_bias=2.0, seed=4))
    data, _ = standardize(data)
    base = dict(optimizer="sgd", epochs=50, learning_rate=1e-4, seed=seed)
    m0, _ = train_sgd(data, TrainConfig(alpha=0.0, **base))
    m1, _ = train_sgd(data, TrainConfig(alpha=100.0, **base))
    assert regularizer(m1, data, "eop") < regularizer(m0, data, "eop")


def test_intercept_feature():
    y = np.array([1, 1, 1, 1])
    data = make_data(np.zeros((4, 1)), y, [0, 1, 0, 1], [0, 0, 1, 1])
    model, _ = train_gd(data, TrainConfig(steps=3000, learning_rate=0.01, intercept=True))
    assert model.intercept and len(model.theta) == 2
    assert model.theta[1] == pytest.approx(1.0, abs=1e-6)
    assert model.predict(np.zeros((1, 1)))[0] == pytest.approx(1.0, abs=1e-6)


def test_model_file_round_trip(tmp_path, rng):
    model = LinearModel(rng.normal(size=7) * 1e-3, intercept=True)
    path = tmp_path / "m.txt"
    save_model(model, path)
    assert path.read_text().startswith("fairrank-linear-model v1 dim=7 intercept=1\n")
    again = load_model(path)
    assert again.theta.tobytes() == model.theta.tobytes() and again.intercept


def test_trace_csv(tmp_path, biased_data):
    _, trace = train_gd(biased_data, TrainConfig(alpha=1.0, steps=3))
    path = tmp_path / "t.csv"
    trace.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,loss,gamma,objective"
    assert len(lines) == 4
    step, loss, gamma, obj = lines[1].split(",")
    assert float(obj) == pytest.approx(float(loss) + float(gamma))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(alpha=-1)
    with pytest.raises(ValueError):
        TrainConfig(scope="global")
    with pytest.raises(ValueError):
        TrainConfig(kind="xyz")
    assert TrainConfig(scope="per-query").scope == "per_query"


def test_as_batch_accepts_query_list(biased_data):
    b = as_batch(list(biased_data.queries[:3]))
    assert b.n_queries == 3
