import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsdcfl import learning
from tsdcfl.errors import EmptyPartition, TooFewSamples


def central_diff(fn, w, h=1e-6):
    g = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (fn(w + e) - fn(w - e)) / (2 * h)
    return g


@pytest.mark.parametrize("task", learning.TASKS)
def test_partial_gradient_matches_finite_differences(task):
    rng = np.random.default_rng(11)
    for _ in range(50):
        X, y, _ = learning.make_synthetic(20, 4, task, seed=int(rng.integers(1 << 30)))
        part = learning.Partition(0, X, y)
        w = rng.standard_normal(4)
        fd = central_diff(lambda v: learning.partition_loss(learning.Model(v, task), part), w)
        g = learning.partial_gradient(learning.Model(w, task), part)
        assert np.max(np.abs(g - fd)) < 1e-6


def test_partitions_disjoint_and_balanced():
    X, y, _ = learning.make_synthetic(23, 3, seed=1)
    parts = learning.partition_dataset(X, y, 5, seed=2)
    sizes = [len(p) for p in parts]
    assert sum(sizes) == 23 and max(sizes) - min(sizes) <= 1
    rows = np.vstack([p.X for p in parts])
    assert len({tuple(r) for r in rows}) == 23
    assert sorted(map(tuple, rows)) == sorted(map(tuple, X))


def test_partition_errors():
    with pytest.raises(TooFewSamples):
        learning.partition_dataset(np.zeros((2, 1)), np.zeros(2), 3)
    with pytest.raises(EmptyPartition):
        learning.partial_gradient(learning.Model.zeros(2), learning.Partition(0, np.zeros((0, 2)), np.zeros(0)))


def test_full_gradient_is_sum_of_partials_and_objective_gradient():
    X, y, _ = learning.make_synthetic(40, 3, seed=4)
    parts = learning.partition_dataset(X, y, 4)
    w = np.array([0.3, -1.0, 2.0])
    full = learning.full_gradient_oracle(learning.Model(w), parts)
    fd = central_diff(lambda v: learning.objective(learning.Model(v), parts), w)
    np.testing.assert_allclose(full, fd, atol=1e-6)


def test_sgd_reaches_least_squares_optimum():
    X, y, _ = learning.make_synthetic(60, 5, seed=7)
    parts = learning.partition_dataset(X, y, 6, seed=7)
    w_star = learning.least_squares_optimum(parts)
    model = learning.Model.zeros(5)
    eta = 1.0 / learning.lipschitz_constant(parts)
    for _ in range(3000):
        model = learning.sgd_step(model, learning.full_gradient_oracle(model, parts), eta)
    assert np.max(np.abs(model.weights - w_star)) < 1e-6


def test_sgd_step_validation():
    m = learning.Model.zeros(2)
    with pytest.raises(ValueError):
        learning.sgd_step(m, np.zeros(3), 0.1)
    with pytest.raises(ValueError):
        learning.sgd_step(m, np.zeros(2), 0.0)
    np.testing.assert_array_equal(learning.sgd_step(m, np.array([1.0, -2.0]), 0.5).weights, [-0.5, 1.0])


def test_model_is_read_only():
    m = learning.Model(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        m.weights[0] = 3.0
    with pytest.raises(ValueError):
        learning.Model(np.array([np.nan]))


def test_logistic_loss_reference_values():
    m = learning.Model(np.array([1.0]), "logistic")
    # log(1 + e^-2) and log(1 + e^2) for margins +2 and -2
    assert learning.loss(m, [[2.0]], [1.0]) == pytest.approx(0.12692801104297263, rel=1e-12)
    assert learning.loss(m, [[2.0]], [0.0]) == pytest.approx(2.1269280110429727, rel=1e-12)
    assert learning.accuracy(m, [[2.0], [-1.0]], [1.0, 1.0]) == 0.5


def test_least_squares_loss_and_accuracy():
    m = learning.Model(np.array([2.0]))
    assert learning.loss(m, [[1.0], [2.0]], [1.0, 4.0]) == pytest.approx(0.25)
    assert learning.accuracy(m, [[1.0], [2.0]], [1.0, 4.0]) == 0.5


def test_lipschitz_is_top_eigenvalue_of_summed_hessian():
    rng = np.random.default_rng(0)
    parts = [learning.Partition(k, rng.standard_normal((8, 3)), rng.standard_normal(8)) for k in range(3)]
    H = sum(p.X.T @ p.X / 8 for p in parts)
    assert learning.lipschitz_constant(parts) == pytest.approx(np.linalg.eigvalsh(H)[-1], rel=1e-12)
    assert learning.lipschitz_constant(parts, "logistic") == pytest.approx(np.linalg.eigvalsh(H)[-1] / 4, rel=1e-12)


def test_gradient_variance_manual():
    parts = [learning.Partition(0, np.array([[1.0]]), np.array([0.0])),
             learning.Partition(1, np.array([[1.0]]), np.array([2.0]))]
    # partials at w = 0 are 0 and -2; mean -1, squared deviations 1 and 1
    assert learning.gradient_variance(learning.Model.zeros(1), parts) == pytest.approx(1.0)


def test_convergence_bound_arithmetic():
    bp = learning.BoundParams(L=2.0, eta=0.1, P=10, K=4, m=3, C1=1.0, C2=2.0, zeta_sq=0.5)
    # 2/(0.1*10) * (5 - 1) + 3*2*0.1/4 * 3 * 3 * 0.5
    assert learning.convergence_bound(bp, 5.0, 1.0) == pytest.approx(8.0 + 0.675)
    with pytest.raises(ValueError):
        learning.BoundParams(L=1, eta=0, P=1, K=1, m=1, C1=0, C2=0, zeta_sq=0)


def test_csv_round_trip(tmp_path):
    X, y, _ = learning.make_synthetic(7, 3, "logistic", seed=5)
    path = tmp_path / "d.csv"
    learning.save_csv(path, X, y)
    X2, y2 = learning.load_csv(path)
    np.testing.assert_array_equal(X, X2)
    np.testing.assert_array_equal(y, y2)
    assert path.read_text().splitlines()[0] == "f0,f1,f2,label"


def test_csv_needs_label_column(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        learning.load_csv(p)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(learning.TASKS))
def test_descent_step_lowers_objective(seed, task):
    X, y, _ = learning.make_synthetic(30, 3, task, seed=seed)
    parts = learning.partition_dataset(X, y, 3, seed=seed)
    m = learning.Model(np.random.default_rng(seed).standard_normal(3), task)
    g = learning.full_gradient_oracle(m, parts)
    eta = 1.0 / learning.lipschitz_constant(parts, task)
    assert learning.objective(learning.sgd_step(m, g, eta), parts) <= learning.objective(m, parts) + 1e-12
