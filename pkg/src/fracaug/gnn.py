"""A small GIN graph classifier with hand-written forward and backward passes.

Each layer computes ``h' = relu(relu(((1 + eps) h + W h) W1 + b1) W2 + b2)``
where ``W`` is the (possibly weighted, dense) adjacency. The graph
embedding ``o`` is the mean (or sum) of final node states and the two
logits are ``s = o Wc + bc``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .exceptions import ContractError, NumericError
from .losses import balanced_weights, margin_ce

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GinConfig:
    input_dim: int
    num_layers: int = 2
    hidden_dim: int = 64
    readout: str = "mean"
    epsilon: float = 0.0

    def __post_init__(self):
        if self.num_layers < 1 or self.hidden_dim < 1 or self.input_dim < 1:
            raise ContractError(f"invalid GIN dimensions: {self}")
        if self.readout not in ("mean", "sum"):
            raise ContractError(f"readout must be 'mean' or 'sum', got {self.readout!r}")


@dataclass
class GinModel:
    config: GinConfig
    params: dict[str, np.ndarray]
    frozen: bool = False

    @classmethod
    def init(cls, config: GinConfig, rng) -> "GinModel":
        rng = np.random.default_rng(rng)
        params = {}
        fan_in = config.input_dim
        for layer in range(config.num_layers):
            h = config.hidden_dim
            params[f"W1_{layer}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, h))
            params[f"b1_{layer}"] = np.zeros(h)
            params[f"W2_{layer}"] = rng.normal(0.0, np.sqrt(2.0 / h), size=(h, h))
            params[f"b2_{layer}"] = np.zeros(h)
            fan_in = h
        params["Wc"] = rng.normal(0.0, np.sqrt(1.0 / fan_in), size=(fan_in, 2))
        params["bc"] = np.zeros(2)
        return cls(config, params)

    def copy(self) -> "GinModel":
        return GinModel(self.config, {k: v.copy() for k, v in self.params.items()}, self.frozen)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


@dataclass
class ForwardOutput:
    logits: np.ndarray
    probs: np.ndarray
    embedding: np.ndarray
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def anomaly_prob(self) -> float:
        return float(self.probs[1])


def _softmax(s):
    e = np.exp(s - s.max())
    return e / e.sum()


def forward(model: GinModel, adjacency, features, keep_cache: bool = True) -> ForwardOutput:
    cfg = model.config
    X = np.asarray(features, dtype=np.float64)
    n = X.shape[0]
    if X.ndim != 2 or X.shape[1] != cfg.input_dim:
        raise ContractError(f"features must be (n, {cfg.input_dim}), got {X.shape}")
    if adjacency.shape != (n, n):
        raise ContractError(f"adjacency must be ({n}, {n}), got {adjacency.shape}")
    W = adjacency
    p = model.params
    h = X
    layers = []
    for layer in range(cfg.num_layers):
        z = (1.0 + cfg.epsilon) * h + np.asarray(W @ h)
        a1 = z @ p[f"W1_{layer}"] + p[f"b1_{layer}"]
        r1 = np.maximum(a1, 0.0)
        a2 = r1 @ p[f"W2_{layer}"] + p[f"b2_{layer}"]
        h = np.maximum(a2, 0.0)
        layers.append((z, a1, r1, a2))
    if n == 0:
        o = np.zeros(cfg.hidden_dim)
    elif cfg.readout == "mean":
        o = h.mean(axis=0)
    else:
        o = h.sum(axis=0)
    s = o @ p["Wc"] + p["bc"]
    cache = {"W": W, "layers": layers, "h": h, "n": n} if keep_cache else {}
    return ForwardOutput(s, _softmax(s), o, cache)


def backward(model: GinModel, state: ForwardOutput, d_logits, d_embedding=None) -> dict:
    """Reverse-mode gradients of all parameters.

    ``d_embedding`` is an optional extra gradient arriving directly at
    the graph embedding (used by losses whose margin depends on it).
    """
    if not state.cache:
        raise ContractError("forward state carries no cache; call forward(keep_cache=True)")
    cfg = model.config
    p = model.params
    layers = state.cache["layers"]
    if len(layers) != cfg.num_layers:
        raise ContractError("forward state does not match the model depth")
    ds = np.asarray(d_logits, dtype=np.float64)
    grads = {"Wc": np.outer(state.embedding, ds), "bc": ds.copy()}
    do = p["Wc"] @ ds
    if d_embedding is not None:
        do = do + np.asarray(d_embedding, dtype=np.float64)
    n = state.cache["n"]
    W = state.cache["W"]
    scale = 1.0 / n if (cfg.readout == "mean" and n) else 1.0
    dh = np.tile(do * scale, (n, 1))
    for layer in reversed(range(cfg.num_layers)):
        z, a1, r1, a2 = layers[layer]
        da2 = dh * (a2 > 0)
        grads[f"W2_{layer}"] = r1.T @ da2
        grads[f"b2_{layer}"] = da2.sum(axis=0)
        da1 = (da2 @ p[f"W2_{layer}"].T) * (a1 > 0)
        grads[f"W1_{layer}"] = z.T @ da1
        grads[f"b1_{layer}"] = da1.sum(axis=0)
        if layer:
            dz = da1 @ p[f"W1_{layer}"].T
            dh = (1.0 + cfg.epsilon) * dz + np.asarray(W.T @ dz)
    return grads


def predict_proba(model: GinModel, inputs) -> np.ndarray:
    """Anomaly probabilities for an iterable of ``(adjacency, features)``."""
    return np.array([forward(model, W, X, keep_cache=False).probs[1] for W, X in inputs])


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict):
    """Bias-corrected adaptive-moment update, applied in place.

    Raises :class:`NumericError` (leaving everything untouched) when any
    gradient is non-finite.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {k!r}; Adam step {state.step + 1} rejected")
        if np.shape(g) != np.shape(params[k]):
            raise ContractError(f"gradient shape {np.shape(g)} != parameter shape for {k!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for k, g in grads.items():
        if k not in state.m:
            state.m[k], state.v[k] = np.zeros_like(g), np.zeros_like(g)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[k] = params[k] - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


class _FlatAdam:
    """Adam over all parameters at once.

    Parameters and moments are re-bound as views into three flat buffers
    so one update is a handful of vector operations. Elementwise
    arithmetic matches :func:`adam_step` exactly.
    """

    def __init__(self, model: GinModel, state: AdamState):
        self.keys = list(model.params)
        self.state = state
        shapes = [model.params[k].shape for k in self.keys]
        sizes = [int(np.prod(s)) for s in shapes]
        self.P = np.concatenate([model.params[k].ravel() for k in self.keys])
        self.M = np.concatenate([state.m[k].ravel() if k in state.m else np.zeros(n)
                                 for k, n in zip(self.keys, sizes)])
        self.V = np.concatenate([state.v[k].ravel() if k in state.v else np.zeros(n)
                                 for k, n in zip(self.keys, sizes)])
        offset = 0
        for k, shape, n in zip(self.keys, shapes, sizes):
            sl = slice(offset, offset + n)
            model.params[k] = self.P[sl].reshape(shape)
            if state.step or k in state.m:
                state.m[k] = self.M[sl].reshape(shape)
                state.v[k] = self.V[sl].reshape(shape)
            offset += n
        self.model = model
        self.shapes, self.sizes = shapes, sizes
        self._buf = np.empty_like(self.P)

    def _bind_moments(self):
        offset = 0
        for k, shape, n in zip(self.keys, self.shapes, self.sizes):
            self.state.m[k] = self.M[offset:offset + n].reshape(shape)
            self.state.v[k] = self.V[offset:offset + n].reshape(shape)
            offset += n

    def step(self, grads: dict):
        g = np.concatenate([grads[k].ravel() for k in self.keys])
        if not np.isfinite(g).all():
            bad = next(k for k in self.keys if not np.all(np.isfinite(grads[k])))
            raise NumericError(f"non-finite gradient for {bad!r}; Adam step {self.state.step + 1} rejected")
        st = self.state
        if not st.m:
            self._bind_moments()
        st.step += 1
        c1 = 1.0 - st.beta1**st.step
        c2 = 1.0 - st.beta2**st.step
        buf = self._buf
        self.M *= st.beta1
        np.multiply(g, 1.0 - st.beta1, out=buf)
        self.M += buf
        self.V *= st.beta2
        np.multiply(g, 1.0 - st.beta2, out=buf)
        buf *= g
        self.V += buf
        # P -= lr * (M / c1) / (sqrt(V / c2) + eps), same operation order
        np.divide(self.V, c2, out=buf)
        np.sqrt(buf, out=buf)
        buf += st.eps
        np.divide(self.M, c1, out=g)
        np.multiply(st.lr, g, out=g)
        g /= buf
        self.P -= g


# ---------------------------------------------------------------------------
# training


def train_epoch(model: GinModel, inputs, labels, class_counts, opt: AdamState, rng) -> float:
    """One pass of per-graph updates under class-balanced cross-entropy.

    ``inputs`` is a sequence of ``(adjacency, features)`` pairs; the visit
    order is a permutation drawn from ``rng``. Returns the mean loss.
    """
    if model.frozen:
        raise ContractError("cannot train a frozen model")
    if len(inputs) == 0:
        return 0.0
    weights = balanced_weights(labels, class_counts)
    flat = _FlatAdam(model, opt)
    total = 0.0
    for idx in rng.permutation(len(inputs)):
        W, X = inputs[idx]
        out = forward(model, W, X)
        loss, ds = margin_ce(out.logits, int(labels[idx]), 0.0, weights[idx])
        total += loss
        flat.step(backward(model, out, ds))
    return total / len(inputs)


def class_counts_of(labels) -> tuple[int, int]:
    labels = np.asarray(labels, dtype=np.int64)
    return int(np.sum(labels == 0)), int(np.sum(labels == 1))


# ---------------------------------------------------------------------------
# checkpoints


def _encode(arrays: dict) -> dict:
    return {k: {"shape": list(np.shape(v)), "data": np.ravel(v).tolist()} for k, v in arrays.items()}


def _decode(blob: dict) -> dict:
    return {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob.items()}


def save_checkpoint(path, model: GinModel, opt: AdamState | None = None, rng=None, extra=None) -> Path:
    """JSON checkpoint: config, weights, optimizer moments and RNG state."""
    blob = {
        "format": "fracaug-gin",
        "version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "params": _encode(model.params),
    }
    if opt is not None:
        blob["optimizer"] = {
            "lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "step": opt.step, "m": _encode(opt.m), "v": _encode(opt.v),
        }
    if rng is not None:
        blob["rng"] = rng.bit_generator.state
    if extra:
        blob["extra"] = extra
    path = Path(path)
    path.write_text(json.dumps(blob))
    return path


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(model, opt, rng, extra)``."""
    blob = json.loads(Path(path).read_text())
    if blob.get("format") != "fracaug-gin" or blob.get("version") != CHECKPOINT_VERSION:
        raise ContractError(f"{path}: not a version-{CHECKPOINT_VERSION} GIN checkpoint")
    model = GinModel(GinConfig(**blob["config"]), _decode(blob["params"]))
    opt = None
    if "optimizer" in blob:
        o = blob["optimizer"]
        opt = AdamState(o["lr"], o["beta1"], o["beta2"], o["eps"], o["step"],
                        _decode(o["m"]), _decode(o["v"]))
    rng = None
    if "rng" in blob:
        rng = np.random.default_rng()
        rng.bit_generator.state = blob["rng"]
    return model, opt, rng, blob.get("extra")


def as_operator(adjacency):
    """Adjacency in the cheapest form for ``W @ h`` (CSR when sparse)."""
    if sp.issparse(adjacency):
        return adjacency.tocsr()
    return np.asarray(adjacency, dtype=np.float64)
