"""Graph containers, TUDataset ingestion, stratified splits and a synthetic benchmark."""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .exceptions import (
    ContractError,
    FormatError,
    IntegrityError,
    SplitInfeasibleError,
    UnsupportedDatasetError,
)

logger = logging.getLogger(__name__)

NORMAL, ANOMALOUS = 0, 1


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with binary adjacency, dense node features and a label.

    ``label`` is ``None`` for graphs whose ground truth is withheld.
    """

    id: int
    adjacency: sp.csr_matrix
    features: np.ndarray
    label: int | None = None

    def __post_init__(self):
        adj = sp.csr_matrix(self.adjacency, dtype=np.float64)
        n = adj.shape[0]
        if adj.shape != (n, n):
            raise ContractError(f"graph {self.id}: adjacency must be square, got {adj.shape}")
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] != n:
            raise ContractError(
                f"graph {self.id}: features must have {n} rows, got shape {feats.shape}"
            )
        if (abs(adj - adj.T) > 0).nnz:
            raise ContractError(f"graph {self.id}: adjacency is not symmetric")
        if n and np.any(adj.diagonal() != 0):
            raise ContractError(f"graph {self.id}: adjacency has self-loops")
        adj.sort_indices()
        feats.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", feats)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.nnz // 2)

    def dense_adjacency(self) -> np.ndarray:
        return self.adjacency.toarray()


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    graphs: tuple[Graph, ...]
    class_counts: tuple[int, int] = field(init=False)

    def __post_init__(self):
        graphs = tuple(self.graphs)
        object.__setattr__(self, "graphs", graphs)
        labels = [g.label for g in graphs]
        n1 = sum(1 for y in labels if y == ANOMALOUS)
        n0 = sum(1 for y in labels if y == NORMAL)
        if n0 + n1 != len(graphs):
            raise ContractError("every dataset graph needs a label in {0, 1}")
        if graphs:
            widths = {g.features.shape[1] for g in graphs}
            if len(widths) != 1:
                raise ContractError(f"feature widths differ across graphs: {sorted(widths)}")
        object.__setattr__(self, "class_counts", (n0, n1))

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, idx: int) -> Graph:
        return self.graphs[idx]

    @property
    def n_features(self) -> int:
        return self.graphs[0].features.shape[1] if self.graphs else 0

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    def summary(self) -> dict:
        nodes = [g.n_nodes for g in self.graphs]
        edges = [g.n_edges for g in self.graphs]
        return {
            "name": self.name,
            "graphs": len(self.graphs),
            "normal": self.class_counts[0],
            "anomalous": self.class_counts[1],
            "avg_nodes": float(np.mean(nodes)) if nodes else 0.0,
            "avg_edges": float(np.mean(edges)) if edges else 0.0,
            "features": self.n_features,
        }

    def fingerprint(self) -> str:
        """Content hash over structure, features and labels."""
        h = hashlib.sha256(self.name.encode())
        for g in self.graphs:
            h.update(np.int64(g.n_nodes).tobytes())
            h.update(g.adjacency.indptr.astype(np.int64).tobytes())
            h.update(g.adjacency.indices.astype(np.int64).tobytes())
            h.update(np.ascontiguousarray(g.features).tobytes())
            h.update(np.int64(g.label).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SplitAssignment:
    train_ids: tuple[int, ...]
    val_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    seed: int


# ---------------------------------------------------------------------------
# TUDataset text format


def _read_int_column(path: Path) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(int(text.split(",")[0]))
            except ValueError:
                raise FormatError(f"{path.name}:{lineno}: expected an integer, got {text!r}") from None
    return np.asarray(values, dtype=np.int64)


def _read_edges(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Return (edges as (m, 2) 1-indexed array, source line numbers)."""
    pairs, lines = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise FormatError(f"{path.name}:{lineno}: expected 'i, j', got {text!r}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise FormatError(f"{path.name}:{lineno}: non-integer node id in {text!r}") from None
            lines.append(lineno)
    edges = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return edges, np.asarray(lines, dtype=np.int64)


def _read_attributes(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.strip()
            if not text:
                continue
            try:
                rows.append([float(v) for v in text.split(",")])
            except ValueError:
                raise FormatError(f"{path.name}:{lineno}: non-numeric attribute in {text!r}") from None
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise FormatError(f"{path.name}: ragged attribute rows (widths {sorted(widths)})")
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)


def load_tudataset(directory, name: str) -> Dataset:
    """Load a binary graph classification dataset in TUDataset text format.

    Node labels become one-hot features (concatenated in front of raw node
    attributes when both files exist). Graph labels are remapped so that
    the minority class is 1. Duplicate edges collapse; self-loops are
    dropped with a warning.
    """
    directory = Path(directory)
    path = {s: directory / f"{name}_{s}.txt" for s in
            ("A", "graph_indicator", "graph_labels", "node_labels", "node_attributes")}
    for key in ("A", "graph_indicator", "graph_labels"):
        if not path[key].is_file():
            raise FormatError(f"missing mandatory file {path[key].name} in {directory}")
    has_labels = path["node_labels"].is_file()
    has_attrs = path["node_attributes"].is_file()
    if not (has_labels or has_attrs):
        raise FormatError(
            f"need {path['node_labels'].name} or {path['node_attributes'].name} in {directory}"
        )

    indicator = _read_int_column(path["graph_indicator"]) - 1
    graph_labels = _read_int_column(path["graph_labels"])
    n_nodes_total = indicator.size
    n_graphs = graph_labels.size
    if n_nodes_total and (indicator.min() < 0 or indicator.max() >= n_graphs):
        raise IntegrityError(
            f"{path['graph_indicator'].name}: graph ids must lie in 1..{n_graphs}"
        )

    blocks = []
    if has_labels:
        node_labels = _read_int_column(path["node_labels"])
        if node_labels.size != n_nodes_total:
            raise IntegrityError(
                f"{path['node_labels'].name}: {node_labels.size} lines, expected {n_nodes_total}"
            )
        alphabet, codes = np.unique(node_labels, return_inverse=True)
        blocks.append(np.eye(alphabet.size)[codes])
    if has_attrs:
        attrs = _read_attributes(path["node_attributes"])
        if attrs.shape[0] != n_nodes_total:
            raise IntegrityError(
                f"{path['node_attributes'].name}: {attrs.shape[0]} lines, expected {n_nodes_total}"
            )
        blocks.append(attrs)
    features = np.hstack(blocks) if len(blocks) > 1 else blocks[0]

    # local index of every node inside its own graph
    order = np.argsort(indicator, kind="stable")
    sizes = np.bincount(indicator, minlength=n_graphs)
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    local = np.empty(n_nodes_total, dtype=np.int64)
    local[order] = np.arange(n_nodes_total) - starts[indicator[order]]

    edges, lines = _read_edges(path["A"])
    edges = edges - 1
    if edges.size:
        bad = np.flatnonzero((edges < 0).any(axis=1) | (edges >= n_nodes_total).any(axis=1))
        if bad.size:
            raise IntegrityError(
                f"{path['A'].name}:{lines[bad[0]]}: node id outside 1..{n_nodes_total}"
            )
        g_src, g_dst = indicator[edges[:, 0]], indicator[edges[:, 1]]
        bad = np.flatnonzero(g_src != g_dst)
        if bad.size:
            raise IntegrityError(
                f"{path['A'].name}:{lines[bad[0]]}: edge joins graphs {g_src[bad[0]] + 1} "
                f"and {g_dst[bad[0]] + 1}"
            )
        loops = edges[:, 0] == edges[:, 1]
        if loops.any():
            logger.warning("%s: dropping %d self-loop line(s), first at line %d",
                           path["A"].name, int(loops.sum()), int(lines[np.argmax(loops)]))
            edges, g_src = edges[~loops], g_src[~loops]
    else:
        g_src = np.empty(0, dtype=np.int64)

    values, counts = np.unique(graph_labels, return_counts=True)
    if values.size > 2:
        raise UnsupportedDatasetError(
            f"{path['graph_labels'].name}: {values.size} classes {values.tolist()}; only binary supported"
        )
    # minority -> 1; on a tie the larger raw label is treated as anomalous
    if values.size == 2:
        minority = values[1] if counts[1] <= counts[0] else values[0]
        remapped = (graph_labels == minority).astype(np.int64)
    else:
        remapped = np.zeros_like(graph_labels)

    edge_order = np.argsort(g_src, kind="stable")
    edges = edges[edge_order]
    edge_bounds = np.searchsorted(g_src[edge_order], np.arange(n_graphs + 1))
    graphs = []
    for gid in range(n_graphs):
        n = int(sizes[gid])
        e = edges[edge_bounds[gid]:edge_bounds[gid + 1]]
        li, lj = local[e[:, 0]], local[e[:, 1]]
        adj = sp.coo_matrix(
            (np.ones(2 * li.size), (np.concatenate([li, lj]), np.concatenate([lj, li]))),
            shape=(n, n),
        ).tocsr()
        adj.data[:] = 1.0
        node_rows = order[starts[gid]:starts[gid] + n]
        graphs.append(Graph(gid, adj, features[node_rows], int(remapped[gid])))
    return Dataset(name, tuple(graphs))


def write_tudataset(dataset: Dataset, directory, name: str | None = None) -> Path:
    """Write ``dataset`` in TUDataset text format (features as node attributes)."""
    name = name or dataset.name
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    offset = 0
    with open(directory / f"{name}_A.txt", "w") as fa, \
            open(directory / f"{name}_graph_indicator.txt", "w") as fi, \
            open(directory / f"{name}_node_attributes.txt", "w") as fx:
        for gid, g in enumerate(dataset.graphs, 1):
            coo = g.adjacency.tocoo()
            for i, j in zip(coo.row, coo.col):
                fa.write(f"{i + offset + 1}, {j + offset + 1}\n")
            for row in g.features:
                fi.write(f"{gid}\n")
                fx.write(", ".join(repr(float(v)) for v in row) + "\n")
            offset += g.n_nodes
    with open(directory / f"{name}_graph_labels.txt", "w") as fl:
        for g in dataset.graphs:
            fl.write(f"{g.label}\n")
    return directory


def save_archive(dataset: Dataset, path) -> Path:
    """Store a dataset as a single compressed ``.npz`` archive."""
    path = Path(path)
    arrays = {"name": np.array(dataset.name),
              "labels": dataset.labels,
              "sizes": np.array([g.n_nodes for g in dataset.graphs], dtype=np.int64)}
    rows, cols, feats = [], [], []
    offset = 0
    for g in dataset.graphs:
        coo = g.adjacency.tocoo()
        rows.append(coo.row + offset)
        cols.append(coo.col + offset)
        feats.append(g.features)
        offset += g.n_nodes
    arrays["edge_rows"] = np.concatenate(rows) if rows else np.empty(0, np.int64)
    arrays["edge_cols"] = np.concatenate(cols) if cols else np.empty(0, np.int64)
    arrays["features"] = np.vstack(feats) if feats else np.empty((0, 0))
    np.savez_compressed(path, **arrays)
    return path


def load_archive(path) -> Dataset:
    with np.load(path) as z:
        sizes, labels = z["sizes"], z["labels"]
        rows, cols, feats = z["edge_rows"], z["edge_cols"], z["features"]
        name = str(z["name"])
    starts = np.concatenate([[0], np.cumsum(sizes)])
    graph_of = np.repeat(np.arange(sizes.size), sizes)
    eg = graph_of[rows] if rows.size else rows
    bounds = np.searchsorted(eg, np.arange(sizes.size + 1))
    graphs = []
    for gid, n in enumerate(sizes):
        lo, hi = bounds[gid], bounds[gid + 1]
        r, c = rows[lo:hi] - starts[gid], cols[lo:hi] - starts[gid]
        adj = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(n, n))
        graphs.append(Graph(gid, adj, feats[starts[gid]:starts[gid + 1]], int(labels[gid])))
    return Dataset(name, tuple(graphs))


# ---------------------------------------------------------------------------
# splitting


def _ceil_fraction(fraction: float, count: int) -> int:
    # round first so that e.g. 0.01 * 900 does not ceil to 10
    return max(1, math.ceil(round(fraction * count, 9)))


def stratified_split(dataset: Dataset, fractions: Sequence[float] = (0.01, 0.01),
                     seed: int = 0) -> SplitAssignment:
    """Per-class shuffled train/val/test assignment.

    Each class contributes ``ceil(f * count)`` graphs (at least one) to
    train and to val; the remainder goes to test.
    """
    f_train, f_val = (float(f) for f in fractions)
    if not (f_train > 0 and f_val > 0 and f_train + f_val < 1):
        raise ContractError(f"fractions must be positive and sum below 1, got {fractions}")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    train, val, test = [], [], []
    for cls in (NORMAL, ANOMALOUS):
        members = np.flatnonzero(labels == cls)
        if members.size < 3:
            raise SplitInfeasibleError(
                f"class {cls} has {members.size} graph(s); need at least 3 for train/val/test"
            )
        n_tr, n_va = _ceil_fraction(f_train, members.size), _ceil_fraction(f_val, members.size)
        if n_tr + n_va >= members.size:
            raise SplitInfeasibleError(
                f"class {cls}: {n_tr} train + {n_va} val leaves no test graphs out of {members.size}"
            )
        members = rng.permutation(members)
        train.extend(members[:n_tr].tolist())
        val.extend(members[n_tr:n_tr + n_va].tolist())
        test.extend(members[n_tr + n_va:].tolist())
    return SplitAssignment(tuple(sorted(train)), tuple(sorted(val)), tuple(sorted(test)), int(seed))


# ---------------------------------------------------------------------------
# synthetic benchmark


def _sbm(rng, n, blocks, p_in, p_out):
    assign = rng.integers(0, blocks, size=n)
    same = assign[:, None] == assign[None, :]
    prob = np.where(same, p_in, p_out)
    upper = np.triu(rng.random((n, n)) < prob, k=1)
    return upper | upper.T


def _ring_lattice(rng, n, k, rewire):
    adj = np.zeros((n, n), dtype=bool)
    for offset in range(1, k // 2 + 1):
        idx = np.arange(n)
        adj[idx, (idx + offset) % n] = True
    for i, j in zip(*np.nonzero(np.triu(adj, 1))):
        if rng.random() < rewire:
            candidates = np.flatnonzero(~adj[i] & (np.arange(n) != i))
            if candidates.size:
                new = rng.choice(candidates)
                adj[i, j] = adj[j, i] = False
                adj[i, new] = adj[new, i] = True
    return adj | adj.T


def _connect(adj, rng):
    # join isolated nodes to a random neighbour so every node has degree >= 1
    n = adj.shape[0]
    for i in np.flatnonzero(adj.sum(1) == 0):
        j = rng.choice([v for v in range(n) if v != i])
        adj[i, j] = adj[j, i] = True
    return adj


def make_synthetic_dataset(n_graphs: int = 2000, anomaly_ratio: float = 0.08,
                           seed: int = 0, n_range: tuple[int, int] = (12, 28),
                           noise_features: int = 2, name: str = "SYNTH") -> Dataset:
    """Two structural families with controllable imbalance.

    Normal graphs are two-community stochastic block models; anomalous
    graphs are rewired ring lattices of similar density. Features are a
    one-hot of the (capped) node degree plus Gaussian noise columns, so
    the classes are separable only through structure.
    """
    rng = np.random.default_rng(seed)
    n_anom = int(round(anomaly_ratio * n_graphs))
    labels = np.zeros(n_graphs, dtype=np.int64)
    labels[rng.choice(n_graphs, size=n_anom, replace=False)] = ANOMALOUS
    max_degree = 8
    graphs = []
    for gid, y in enumerate(labels):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        if y == ANOMALOUS:
            adj = _ring_lattice(rng, n, k=4, rewire=float(rng.uniform(0.2, 0.6)))
        else:
            p_in = float(rng.uniform(0.25, 0.45))
            adj = _sbm(rng, n, 2, p_in, p_out=float(rng.uniform(0.02, 0.08)))
        adj = _connect(adj, rng)
        deg = np.minimum(adj.sum(1), max_degree).astype(np.int64)
        feats = np.hstack([np.eye(max_degree + 1)[deg], rng.normal(size=(n, noise_features))])
        graphs.append(Graph(gid, sp.csr_matrix(adj.astype(np.float64)), feats, int(y)))
    return Dataset(name, tuple(graphs))
