"""scikit-learn style wrappers around the training pipeline.

Inputs are sequences of graphs, each either a :class:`~fracaug.graphs.Graph`
or an ``(adjacency, features)`` pair. In :meth:`FracAugClassifier.fit`
the label ``-1`` marks an unlabeled graph; those graphs form the pool
that pseudo-labeling draws from.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError
from .fgg import FggParams, generate
from .gnn import GinConfig, predict_proba
from .graphs import Dataset, Graph, SplitAssignment
from .pipeline import LabelVault, PipelineConfig, run_fracaug, run_vanilla
from .spectral import preprocess_adjacency

UNLABELED = -1


def check_graphs(X, n_features: int | None = None) -> list[Graph]:
    """Validate a sequence of graphs and return them as :class:`Graph` objects.

    Adjacencies must be square, symmetric, loop-free and finite; feature
    matrices need one row per node and (if given) ``n_features`` columns.
    """
    if isinstance(X, Dataset):
        X = X.graphs
    try:
        items = list(X)
    except TypeError:
        raise ContractError(f"expected a sequence of graphs, got {type(X).__name__}") from None
    if not items:
        raise ContractError("need at least one graph")
    out = []
    for i, item in enumerate(items):
        if isinstance(item, Graph):
            g = item
        else:
            try:
                A, F = item
            except (TypeError, ValueError):
                raise ContractError(f"graph {i}: expected a Graph or an (adjacency, features) pair") from None
            A = sp.csr_matrix(A, dtype=np.float64)
            if A.nnz and not np.all(np.isfinite(A.data)):
                raise ContractError(f"graph {i}: adjacency has non-finite entries")
            g = Graph(i, A, np.asarray(F, dtype=np.float64))
        if not np.all(np.isfinite(g.features)):
            raise ContractError(f"graph {i}: features have non-finite entries")
        if g.n_nodes == 0:
            raise ContractError(f"graph {i}: empty graph")
        out.append(g)
    widths = {g.features.shape[1] for g in out}
    if len(widths) != 1:
        raise ContractError(f"feature widths differ across graphs: {sorted(widths)}")
    if n_features is not None and widths != {n_features}:
        raise ContractError(f"expected {n_features} feature columns, got {widths.pop()}")
    return out


def _check_labels(y, n: int, allow_unlabeled: bool) -> np.ndarray:
    y = np.asarray(y).ravel()
    if y.size != n:
        raise ContractError(f"got {n} graphs but {y.size} labels")
    allowed = (UNLABELED, 0, 1) if allow_unlabeled else (0, 1)
    if not np.isin(y, allowed).all():
        raise ContractError(f"labels must be in {allowed}")
    return y.astype(np.int64)


class FracAugClassifier(ClassifierMixin, BaseEstimator):
    """GIN graph classifier trained with fractional augmentation and pseudo-labels.

    ``fit(X, y)`` treats graphs with ``y == -1`` as unlabeled. Passing
    ``X_val``/``y_val`` enables checkpoint selection by the summed
    validation AUROC, AUPRC and F1; without them the last epoch is kept.
    ``augment=False`` gives the plain class-balanced GIN baseline.
    """

    def __init__(self, augment=True, k_l=4, k_s=4, H_l=3, H_s=3, e_warmup=25, e_aug=25,
                 e_fgg=10, e_f=200, tau_n=0.05, tau_a=0.95, lr=1e-3, fgg_lr=1e-2, fd_step=1e-3,
                 margin="wdml", mutual=True, threshold=0.5, hidden_dim=64, num_layers=2,
                 readout="mean", epsilon=0.0, random_state=0):
        self.augment = augment
        self.k_l = k_l
        self.k_s = k_s
        self.H_l = H_l
        self.H_s = H_s
        self.e_warmup = e_warmup
        self.e_aug = e_aug
        self.e_fgg = e_fgg
        self.e_f = e_f
        self.tau_n = tau_n
        self.tau_a = tau_a
        self.lr = lr
        self.fgg_lr = fgg_lr
        self.fd_step = fd_step
        self.margin = margin
        self.mutual = mutual
        self.threshold = threshold
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.readout = readout
        self.epsilon = epsilon
        self.random_state = random_state

    def _pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            k_l=self.k_l, k_s=self.k_s, H_l=self.H_l, H_s=self.H_s, e_warmup=self.e_warmup,
            e_aug=self.e_aug, e_fgg=self.e_fgg, e_f=self.e_f, tau_n=self.tau_n, tau_a=self.tau_a,
            lr=self.lr, fgg_lr=self.fgg_lr, fd_step=self.fd_step, margin=self.margin,
            mutual=self.mutual, threshold=self.threshold, seed=int(self.random_state or 0),
        )

    def fit(self, X, y, X_val=None, y_val=None):
        graphs = check_graphs(X)
        y = _check_labels(y, len(graphs), allow_unlabeled=True)
        labeled = np.flatnonzero(y != UNLABELED)
        if np.unique(y[labeled]).size < 2:
            raise ContractError("need labeled graphs of both classes")
        val_graphs, y_val_arr = [], np.zeros(0, dtype=np.int64)
        if X_val is not None:
            val_graphs = check_graphs(X_val, graphs[0].features.shape[1])
            y_val_arr = _check_labels(y_val, len(val_graphs), allow_unlabeled=False)
            if np.unique(y_val_arr).size < 2:
                raise ContractError("validation labels must contain both classes")
        pool = graphs + val_graphs
        # unlabeled graphs carry a placeholder; only training ids are read
        stored = [int(v) if v != UNLABELED else 0 for v in y] + y_val_arr.tolist()
        dataset = Dataset("fit", tuple(Graph(i, g.adjacency, g.features, stored[i])
                                       for i, g in enumerate(pool)))
        n = len(graphs)
        val_ids = tuple(range(n, n + len(val_graphs)))
        split = SplitAssignment(tuple(int(i) for i in labeled), val_ids,
                                tuple(int(i) for i in np.flatnonzero(y == UNLABELED)),
                                int(self.random_state or 0))
        vault = LabelVault({i: stored[i] for i in val_ids})
        cfg = self._pipeline_config()
        gin = GinConfig(graphs[0].features.shape[1], self.num_layers, self.hidden_dim,
                        self.readout, self.epsilon)
        if self.augment:
            record = run_fracaug(dataset, split, gin, cfg, vault=vault)
        else:
            record = run_vanilla(dataset, split, gin, cfg=cfg, vault=vault)
        self.model_ = record.checkpoint["model"]
        self.record_ = record
        self.fgg_params_ = record.fgg_params
        self.best_epoch_ = record.best_epoch
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = graphs[0].features.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        graphs = check_graphs(X, self.n_features_in_)
        p = predict_proba(self.model_, [(g.dense_adjacency(), g.features) for g in graphs])
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X) -> np.ndarray:
        return self.predict_proba(X)[:, 1]

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) >= self.threshold).astype(np.int64)


class FractionalGraphTransformer(TransformerMixin, BaseEstimator):
    """Map graphs to generated fractional adjacencies.

    ``fgg_params`` may be an :class:`FggParams`, its dict form, or
    ``None`` for the all-zero parameters. ``transform`` returns a list of
    dense symmetric matrices, one per input graph.
    """

    def __init__(self, k_l=4, k_s=4, H_l=3, H_s=3, fgg_params=None):
        self.k_l = k_l
        self.k_s = k_s
        self.H_l = H_l
        self.H_s = H_s
        self.fgg_params = fgg_params

    def fit(self, X=None, y=None):
        p = self.fgg_params
        if p is None:
            p = FggParams.zeros(self.H_l, self.H_s)
        elif isinstance(p, dict):
            p = FggParams.from_dict(p)
        elif not isinstance(p, FggParams):
            raise ContractError(f"fgg_params must be FggParams, dict or None, got {type(p).__name__}")
        if X is not None:
            check_graphs(X)
        self.params_ = p
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self, "params_")
        graphs = check_graphs(X)
        return [generate(preprocess_adjacency(g.adjacency, self.k_l, self.k_s), self.params_)
                for g in graphs]
