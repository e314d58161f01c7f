import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import k3, random_graph
from fracaug.exceptions import ContractError
from fracaug.fgg import (
    FggParams,
    central_difference_gradient,
    generate,
    materialize,
    train_fgg,
)
from fracaug.gnn import GinConfig, GinModel, forward
from fracaug.spectral import hat_transform, normalize_adjacency, preprocess_adjacency

ALPHA_ONE = np.log(0.5)  # 3 * sigmoid(ln 1/2) = 1


def full_split(A, k_l):
    n = A.shape[0]
    return preprocess_adjacency(A, k_l, n - k_l) if k_l < n else preprocess_adjacency(A, n, 1)


def a_hat(A):
    return hat_transform(normalize_adjacency(A))


def test_materialize_examples():
    m = materialize(FggParams.zeros(3, 3))
    np.testing.assert_allclose(m.alpha_l, 1.5)
    np.testing.assert_allclose(m.omega_l, 1 / 3)
    assert m.omega == 0.5
    p = FggParams([ALPHA_ONE], [0.0], [ALPHA_ONE], [0.0], 60.0)
    m = materialize(p)
    assert m.alpha_l[0] == pytest.approx(1.0, abs=1e-15)
    assert m.omega == pytest.approx(1.0, abs=1e-15)


@settings(max_examples=60)
@given(st.lists(st.floats(-30, 30), min_size=13, max_size=13))
def test_materialized_constraints(vec):
    m = materialize(FggParams.from_vector(vec, 3, 3))
    for a in (m.alpha_l, m.alpha_s):
        assert np.all((a >= 0) & (a <= 3))
    for w in (m.omega_l, m.omega_s):
        assert np.all((w >= 0) & (w <= 1)) and abs(w.sum() - 1) < 1e-10
    assert 0 <= m.omega <= 1


def test_vector_and_json_round_trip(tmp_path, rng):
    p = FggParams.from_vector(rng.normal(size=15), 4, 3)
    assert np.array_equal(FggParams.from_vector(p.to_vector(), 4, 3).to_vector(), p.to_vector())
    q = FggParams.load(p.save(tmp_path / "fgg.json"))
    assert np.array_equal(q.to_vector(), p.to_vector())
    with pytest.raises(ContractError):
        FggParams.from_vector(np.zeros(7), 3, 3)


def test_two_node_path():
    A = np.array([[0, 1], [1, 0.0]])
    cache = preprocess_adjacency(A, 1, 1)
    for theta in (np.zeros(5), np.array([0.3, 0.0, -1.2, 0.0, 0.7])):
        p = FggParams.from_vector(theta, 1, 1)
        w = materialize(p).omega
        np.testing.assert_allclose(generate(cache, p), w * 0.5 * np.ones((2, 2)), atol=1e-14)


def test_k3_closed_form():
    cache = preprocess_adjacency(k3(), 1, 2)
    theta_half = np.log(0.5 / 2.5)  # 3 * sigmoid(theta) = 0.5
    p = FggParams([theta_half], [0.0], [theta_half] * 2, [0.0, 0.0], 0.0)
    expected = 0.25 * np.eye(3) + np.ones((3, 3)) / 12
    np.testing.assert_allclose(generate(cache, p), expected, atol=1e-10)


def test_unit_powers_recover_hat_adjacency(rng):
    for _ in range(20):
        g = random_graph(rng, int(rng.integers(3, 9)))
        A = g.dense_adjacency()
        n = A.shape[0]
        target = a_hat(A)
        # whole spectrum in the large block with the mixing weight saturated at 1
        p = FggParams([ALPHA_ONE] * 2, [0.3, -0.1], [ALPHA_ONE], [0.0], 60.0)
        assert np.linalg.norm(generate(full_split(A, n), p) - target) < 1e-8
        # complementary blocks: the omega and 1 - omega outputs add up to the full sum
        k_l = int(rng.integers(1, n))
        cache = full_split(A, k_l)
        mix = float(rng.normal())
        a = generate(cache, FggParams([ALPHA_ONE], [0.0], [ALPHA_ONE], [0.0], mix))
        b = generate(cache, FggParams([ALPHA_ONE], [0.0], [ALPHA_ONE], [0.0], -mix))
        assert np.linalg.norm(a + b - target) < 1e-8


def krylov_basis(M, x, tol=1e-10):
    """Orthonormal basis of span{x, Mx, M^2 x, ...} with full reorthogonalization."""
    Q = [x / np.linalg.norm(x)]
    while len(Q) < len(x):
        v = M @ Q[-1]
        for _ in range(2):
            v = v - np.column_stack(Q) @ (np.column_stack(Q).T @ v)
        if np.linalg.norm(v) < tol:
            break
        Q.append(v / np.linalg.norm(v))
    return np.column_stack(Q)


def test_symmetry_spectrum_and_krylov(rng):
    checked = 0
    while checked < 15:
        g = random_graph(rng, int(rng.integers(3, 8)), p=0.5)
        A = g.dense_adjacency()
        n = A.shape[0]
        k_l = int(rng.integers(1, n + 1))
        w_full = np.sort(np.linalg.eigvalsh(a_hat(A)))[::-1]
        if k_l < n and w_full[k_l - 1] - w_full[k_l] < 1e-8:
            continue  # a split through a repeated eigenvalue is not a function of A-hat
        cache = full_split(A, k_l)
        p = FggParams.from_vector(rng.normal(scale=2.0, size=13), 3, 3)
        out = generate(cache, p)
        assert np.array_equal(out, out.T)
        w = np.linalg.eigvalsh(out)
        assert w.min() > -1e-8 and w.max() < 1 + 1e-8
        x = rng.normal(size=n)
        Q = krylov_basis(a_hat(A), x)
        y = out @ x
        assert np.linalg.norm(y - Q @ (Q.T @ y)) < 1e-6
        checked += 1


def test_empty_branch_is_zero(caplog):
    A = np.array([[0, 1], [1, 0.0]])
    cache = preprocess_adjacency(A, 2, 1)
    assert cache.k_s == 0
    p = FggParams.from_vector(np.zeros(5), 1, 1)
    np.testing.assert_allclose(generate(cache, p), 0.5 * a_hat(A), atol=1e-14)


def test_central_difference_quadratic():
    step = 1e-3
    g = central_difference_gradient(lambda t: (t[0] - 2.0) ** 2, np.array([0.0]), step)
    assert abs(g[0] + 4.0) <= 2 * step**2


def _tiny_problem(rng, n_graphs=6):
    inputs, caches, labels = [], [], []
    for i in range(n_graphs):
        g = random_graph(rng, 5, p=0.5, n_features=2)
        inputs.append((g.dense_adjacency(), g.features))
        caches.append(preprocess_adjacency(g.adjacency, 2, 2))
        labels.append(i % 2)
    return inputs, caches, labels


def test_constant_model_gives_zero_update(rng):
    inputs, caches, labels = _tiny_problem(rng)
    model = GinModel.init(GinConfig(input_dim=2, hidden_dim=4), 0)
    for k in model.params:
        model.params[k][:] = 0.0
    model.frozen = True
    p0 = FggParams.from_vector(rng.normal(size=13), 3, 3)
    p1, _, hist = train_fgg(p0, model, inputs, caches, labels, (3, 3), steps=3)
    assert np.array_equal(p0.to_vector(), p1.to_vector())
    assert all(h["grad_norm"] == 0 for h in hist)


def test_train_fgg_logs_each_step(rng):
    inputs, caches, labels = _tiny_problem(rng)
    model = GinModel.init(GinConfig(input_dim=2, hidden_dim=4), 0)
    with pytest.raises(ContractError):
        train_fgg(FggParams.zeros(), model, inputs, caches, labels, (3, 3))
    model.frozen = True
    logged = []
    p, opt, hist = train_fgg(FggParams.zeros(), model, inputs, caches, labels, (3, 3),
                             steps=10, log=logged.append)
    assert len(hist) == len(logged) == 10 and opt.step == 10
    assert [h["step"] for h in hist] == list(range(10))
    assert not np.array_equal(p.to_vector(), FggParams.zeros().to_vector())


def test_train_fgg_matches_fd_of_objective(rng):
    """First Adam step moves each coordinate by lr against the FD gradient sign."""
    inputs, caches, labels = _tiny_problem(rng)
    model = GinModel.init(GinConfig(input_dim=2, hidden_dim=4), 1)
    model.frozen = True
    p, _, hist = train_fgg(FggParams.zeros(), model, inputs, caches, labels, (3, 3), steps=1)
    moved = p.to_vector()
    assert np.all(np.abs(moved[np.abs(moved) > 0]) == pytest.approx(1e-2, rel=5e-3))
