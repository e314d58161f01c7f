"""Fractional graph generator: learnable mixtures of fractional eigengraph sums.

A generated adjacency is

    A' = w * sum_h wl_h U_l diag(l_l ** al_h) U_l^T
       + (1 - w) * sum_h ws_h U_s diag(l_s ** as_h) U_s^T

with every power in (0, 3) and each weight vector on the simplex. The
constraints are enforced by reparameterization (``3 * sigmoid`` for
powers, softmax for branch weights, sigmoid for the mixing weight), so
the unconstrained vector can be probed freely by finite differences.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit, softmax

from .exceptions import ContractError, NumericError
from .gnn import AdamState, GinModel, adam_step, forward
from .losses import MarginSpec, margin_batch
from .spectral import SpectralCache, _power

logger = logging.getLogger(__name__)

ALPHA_MAX = 3.0


@dataclass
class FggParams:
    theta_alpha_l: np.ndarray
    theta_omega_l: np.ndarray
    theta_alpha_s: np.ndarray
    theta_omega_s: np.ndarray
    theta_mix: float = 0.0

    def __post_init__(self):
        self.theta_alpha_l = np.asarray(self.theta_alpha_l, dtype=np.float64).ravel()
        self.theta_omega_l = np.asarray(self.theta_omega_l, dtype=np.float64).ravel()
        self.theta_alpha_s = np.asarray(self.theta_alpha_s, dtype=np.float64).ravel()
        self.theta_omega_s = np.asarray(self.theta_omega_s, dtype=np.float64).ravel()
        self.theta_mix = float(self.theta_mix)
        if self.theta_alpha_l.size != self.theta_omega_l.size:
            raise ContractError("large-branch power and weight blocks differ in length")
        if self.theta_alpha_s.size != self.theta_omega_s.size:
            raise ContractError("small-branch power and weight blocks differ in length")

    @classmethod
    def zeros(cls, H_l: int = 3, H_s: int = 3) -> "FggParams":
        return cls(np.zeros(H_l), np.zeros(H_l), np.zeros(H_s), np.zeros(H_s), 0.0)

    @property
    def H_l(self) -> int:
        return self.theta_alpha_l.size

    @property
    def H_s(self) -> int:
        return self.theta_alpha_s.size

    @property
    def size(self) -> int:
        return 2 * (self.H_l + self.H_s) + 1

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.theta_alpha_l, self.theta_omega_l, self.theta_alpha_s,
                               self.theta_omega_s, [self.theta_mix]])

    @classmethod
    def from_vector(cls, vec, H_l: int, H_s: int) -> "FggParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != 2 * (H_l + H_s) + 1:
            raise ContractError(f"expected {2 * (H_l + H_s) + 1} parameters, got {vec.size}")
        cuts = np.cumsum([H_l, H_l, H_s, H_s])
        al, wl, as_, ws, mix = np.split(vec, cuts)
        return cls(al, wl, as_, ws, float(mix[0]))

    def to_dict(self) -> dict:
        m = materialize(self)
        return {
            "H_l": self.H_l,
            "H_s": self.H_s,
            "theta_alpha_l": self.theta_alpha_l.tolist(),
            "theta_omega_l": self.theta_omega_l.tolist(),
            "theta_alpha_s": self.theta_alpha_s.tolist(),
            "theta_omega_s": self.theta_omega_s.tolist(),
            "theta_mix": self.theta_mix,
            "alpha_l": m.alpha_l.tolist(),
            "omega_l": m.omega_l.tolist(),
            "alpha_s": m.alpha_s.tolist(),
            "omega_s": m.omega_s.tolist(),
            "omega": m.omega,
        }

    @classmethod
    def from_dict(cls, blob: dict) -> "FggParams":
        params = cls(blob["theta_alpha_l"], blob["theta_omega_l"], blob["theta_alpha_s"],
                     blob["theta_omega_s"], blob["theta_mix"])
        if (params.H_l, params.H_s) != (blob.get("H_l", params.H_l), blob.get("H_s", params.H_s)):
            raise ContractError("FGG parameter blocks disagree with the recorded H_l/H_s")
        return params

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path) -> "FggParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


class Materialized(NamedTuple):
    alpha_l: np.ndarray
    omega_l: np.ndarray
    alpha_s: np.ndarray
    omega_s: np.ndarray
    omega: float


def materialize(params: FggParams) -> Materialized:
    """Constrained powers and weights from the unconstrained parameters."""
    return Materialized(
        ALPHA_MAX * expit(params.theta_alpha_l),
        softmax(params.theta_omega_l) if params.H_l else np.zeros(0),
        ALPHA_MAX * expit(params.theta_alpha_s),
        softmax(params.theta_omega_s) if params.H_s else np.zeros(0),
        float(expit(params.theta_mix)),
    )


_warned_empty_branch = False


def _branch(U, lam, alphas, weights) -> np.ndarray:
    spectrum = np.zeros_like(lam)
    for a, w in zip(alphas, weights):
        spectrum += w * _power(lam, float(a))
    return (U * spectrum) @ U.T


def generate(cache: SpectralCache, params) -> np.ndarray:
    """Dense generated adjacency for one graph.

    ``params`` may be an :class:`FggParams` or an already materialized
    tuple. An empty retained block contributes the zero matrix.
    """
    global _warned_empty_branch
    m = materialize(params) if isinstance(params, FggParams) else params
    n = cache.n
    out = np.zeros((n, n))
    if cache.k_l:
        out += m.omega * _branch(cache.U_l, cache.lambda_l, m.alpha_l, m.omega_l)
    if cache.k_s:
        out += (1.0 - m.omega) * _branch(cache.U_s, cache.lambda_s, m.alpha_s, m.omega_s)
    if (not cache.k_l or not cache.k_s) and not _warned_empty_branch:
        logger.info("graph with n=%d has an empty eigen-block; that branch contributes zero", n)
        _warned_empty_branch = True
    # (B + B^T) / 2 is exactly symmetric in floating point
    return 0.5 * (out + out.T)


def generate_many(caches, params) -> list[np.ndarray]:
    m = materialize(params) if isinstance(params, FggParams) else params
    return [generate(c, m) for c in caches]


def central_difference_gradient(fn: Callable[[np.ndarray], float], theta, step: float) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a vector."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step
        grad[i] = (fn(theta + e) - fn(theta - e)) / (2.0 * step)
    return grad


def fgg_objective(model: GinModel, inputs, caches, labels, class_counts,
                  spec: MarginSpec = MarginSpec(), original_outputs=None):
    """Return ``f(theta) -> mean margin loss`` for a frozen model.

    The original graphs' outputs do not depend on ``theta`` and are
    computed once.
    """
    if original_outputs is None:
        original_outputs = [forward(model, W, X, keep_cache=False) for W, X in inputs]
    originals = [(o.logits, o.embedding) for o in original_outputs]
    feats = [X for _, X in inputs]
    n = len(inputs)

    def objective(theta, H_l, H_s):
        m = materialize(FggParams.from_vector(theta, H_l, H_s))
        frac = []
        for cache, X in zip(caches, feats):
            out = forward(model, generate(cache, m), X, keep_cache=False)
            frac.append((out.logits, out.embedding))
        return margin_batch(originals, frac, labels, class_counts, spec).loss / n

    return objective


def train_fgg(params: FggParams, model: GinModel, inputs, caches, labels, class_counts,
              steps: int = 10, fd_step: float = 1e-3, opt: AdamState | None = None,
              spec: MarginSpec = MarginSpec(), log: Callable[[dict], None] | None = None):
    """Adam on finite-difference gradients of the margin loss, GNN frozen.

    Returns ``(params, opt, history)`` where ``history`` has one entry
    per optimizer step.
    """
    if not model.frozen:
        raise ContractError("train_fgg requires a frozen GNN")
    if not (len(inputs) == len(caches) == len(labels)):
        raise ContractError("inputs, caches and labels must be aligned")
    opt = opt or AdamState(lr=1e-2)
    H_l, H_s = params.H_l, params.H_s
    objective = fgg_objective(model, inputs, caches, labels, class_counts, spec)
    fn = lambda th: objective(th, H_l, H_s)  # noqa: E731
    theta = params.to_vector()
    history = []
    for step in range(steps):
        h = fd_step
        loss = fn(theta)
        grad = central_difference_gradient(fn, theta, h)
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            h = fd_step / 2.0
            logger.warning("non-finite FGG probe at step %d; retrying with fd_step=%g", step, h)
            loss = fn(theta)
            grad = central_difference_gradient(fn, theta, h)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                raise NumericError(
                    f"FGG step {step}: loss {loss} / gradient non-finite even with fd_step={h}"
                )
        box = {"theta": theta}
        adam_step(opt, box, {"theta": grad})
        theta = box["theta"]
        record = {"step": step, "loss": float(loss), "grad_norm": float(np.linalg.norm(grad)),
                  "fd_step": h}
        history.append(record)
        if log:
            log(record)
    return FggParams.from_vector(theta, H_l, H_s), opt, history
