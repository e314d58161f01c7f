"""Seeded numerical verification suites behind ``fracaug verify``.

Every suite returns a JSON-serializable report with a top-level
``"pass"`` flag.
"""

from __future__ import annotations

import time

import numpy as np

from .gnn import GinConfig, GinModel, backward, forward
from .losses import wdml_batch
from .mvp import prop1_simulate
from .spectral import hat_transform, normalize_adjacency, thm1_decay_check, thm2_identity_check

THM1_ALPHAS = (0.3, 0.5, 1.7)
PROP1_DELTAS = (0.05, 0.1, 0.2)
PROP1_RHOS = (0.0, 0.25, 0.5, 1.0)


def random_psd(rng, n: int, low: float, high: float) -> np.ndarray:
    """Random orthogonal conjugate of a spectrum drawn from ``[low, high]``.

    The extreme eigenvalues are pinned to ``low`` and ``high``.
    """
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    lam = rng.uniform(low, high, size=n)
    lam[0], lam[-1] = low, high
    M = (Q * lam) @ Q.T
    return 0.5 * (M + M.T)


def thm1_suite(alphas=THM1_ALPHAS, n_matrices: int = 10, n: int = 16, T_max: int = 20,
               low: float = 0.1, high: float = 1.0, seed: int = 0) -> dict:
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    mats = [random_psd(rng, n, low, high) for _ in range(n_matrices)]
    cases = []
    for i, M in enumerate(mats):
        for alpha in alphas:
            fit = thm1_decay_check(M, float(alpha), T_max, interval=(low, high))
            cases.append({"matrix": i, **fit.to_dict()})
    return {
        "suite": "thm1",
        "seed": seed,
        "T_max": T_max,
        "cases": cases,
        "seconds": time.perf_counter() - start,
        "pass": all(c["passed"] for c in cases),
    }


def thm2_suite(n_instances: int = 100, max_n: int = 16, tol: float = 1e-8, seed: int = 0,
               alphas=None) -> dict:
    rng = np.random.default_rng(seed)
    cases = []
    for i in range(n_instances):
        n = int(rng.integers(2, max_n + 1))
        alpha = float(rng.uniform(0.05, 3.0)) if alphas is None else float(alphas[i % len(alphas)])
        if i % 2:
            # half the instances are h-transformed random graphs
            upper = np.triu(rng.random((n, n)) < 0.4, k=1)
            B = hat_transform(normalize_adjacency((upper | upper.T).astype(float)))
        else:
            B = random_psd(rng, n, 0.0, float(rng.uniform(0.5, 2.0)))
        lhs, rhs, ok = thm2_identity_check(B, alpha, tol)
        cases.append({"n": n, "alpha": alpha, "lhs": lhs, "rhs": rhs, "gap": abs(lhs - rhs), "pass": ok})
    return {"suite": "thm2", "seed": seed, "tol": tol, "cases": cases,
            "max_gap": max(c["gap"] for c in cases), "pass": all(c["pass"] for c in cases)}


def prop1_suite(deltas=PROP1_DELTAS, rhos=PROP1_RHOS, trials: int = 1_000_000, seed: int = 0) -> dict:
    cases = []
    for i, delta in enumerate(deltas):
        for j, rho in enumerate(rhos):
            cell_seed = int(np.random.SeedSequence([seed, i, j]).generate_state(1)[0])
            cases.append(prop1_simulate(float(delta), float(rho), trials, cell_seed))
    return {"suite": "prop1", "seed": seed, "trials": trials, "cases": cases,
            "pass": all(c["pass"] for c in cases)}


def _rel_err(fd: float, analytic: float, floor: float = 1e-7) -> float:
    scale = max(abs(fd), abs(analytic))
    return abs(fd - analytic) / scale if scale > floor else 0.0


def gin_gradcheck(n_graphs: int = 5, max_n: int = 8, seed: int = 0, step: float = 1e-5) -> dict:
    """Compare backprop with central differences of a random linear functional.

    Biases are drawn away from zero so no hidden unit sits on a relu kink.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_graphs):
        n = int(rng.integers(2, max_n + 1))
        upper = np.triu(rng.random((n, n)) < 0.5, k=1)
        A = (upper | upper.T).astype(float)
        X = rng.normal(size=(n, 3))
        model = GinModel.init(GinConfig(input_dim=3, hidden_dim=8), rng)
        for k in model.params:
            if k.startswith("b"):
                model.params[k] = rng.normal(0.0, 0.3, size=model.params[k].shape)
        ds, do = rng.normal(size=2), rng.normal(size=8)
        grads = backward(model, forward(model, A, X), ds, do)

        def objective(m):
            out = forward(m, A, X, keep_cache=False)
            return float(out.logits @ ds + out.embedding @ do)

        for key, value in model.params.items():
            for idx in np.ndindex(value.shape):
                plus, minus = model.copy(), model.copy()
                plus.params[key][idx] += step
                minus.params[key][idx] -= step
                fd = (objective(plus) - objective(minus)) / (2 * step)
                worst = max(worst, _rel_err(fd, float(grads[key][idx])))
    return {"graphs": n_graphs, "max_rel_error": worst}


def wdml_gradcheck(n_batches: int = 5, batch: int = 3, dim: int = 4, seed: int = 0,
                   step: float = 1e-6) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_batches):
        labels = [int(v) for v in rng.integers(0, 2, size=batch)]
        counts = (max(1, labels.count(0)), max(1, labels.count(1)))
        x = rng.normal(size=2 * batch + 2 * batch * dim)

        def loss(vec):
            s = vec[: 2 * batch].reshape(batch, 2)
            o = vec[2 * batch: 2 * batch + batch * dim].reshape(batch, dim)
            op = vec[2 * batch + batch * dim:].reshape(batch, dim)
            return wdml_batch(list(zip(s, o)), list(zip(s, op)), labels, counts)

        r = loss(x)
        analytic = np.concatenate([np.ravel(r.grad_s), np.ravel(r.grad_o), np.ravel(r.grad_o_prime)])
        for k in range(x.size):
            e = np.zeros_like(x)
            e[k] = step
            fd = (loss(x + e).loss - loss(x - e).loss) / (2 * step)
            worst = max(worst, _rel_err(fd, analytic[k]))
    return {"batches": n_batches, "batch_size": batch, "max_rel_error": float(worst)}


def gradcheck_suite(seed: int = 0, tol: float = 1e-4) -> dict:
    gin = gin_gradcheck(seed=seed)
    wdml = wdml_gradcheck(seed=seed)
    return {
        "suite": "gradcheck",
        "seed": seed,
        "tol": tol,
        "gin": gin,
        "wdml": wdml,
        "pass": bool(gin["max_rel_error"] < tol and wdml["max_rel_error"] < tol),
    }


SUITES = {"thm1": thm1_suite, "thm2": thm2_suite, "prop1": prop1_suite, "gradcheck": gradcheck_suite}
