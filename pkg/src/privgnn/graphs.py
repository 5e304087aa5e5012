"""Directed graph datasets: construction, file formats, synthetic generation,
and in-degree bounding by neighbor sampling.

Conventions used throughout the package:
  * adjacency entry (u, v) = 1 means a directed edge u -> v;
  * aggregation for node v sums over its in-neighbors {u : (u, v) is an edge};
  * duplicate edges are collapsed (the adjacency is binary);
  * self-loops pass through unchanged.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

SPLIT_TRAIN = 0
SPLIT_VAL = 1
SPLIT_TEST = 2
_SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}

DATASET_MAGIC = b"GAPD"
DATASET_VERSION = 1

# Ratios for generated train/val/test masks.
_SPLIT_RATIOS = (0.75, 0.10, 0.15)


class GraphFormatError(Exception):
    """Raised for malformed dataset files (CSV or binary)."""


def _csr_from_edges(num_nodes, edges, by_dst=False):
    """Build (indptr, indices) keyed by source, or by destination if by_dst."""
    if len(edges) == 0:
        return (
            np.zeros(num_nodes + 1, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )
    key = edges[:, 1] if by_dst else edges[:, 0]
    val = edges[:, 0] if by_dst else edges[:, 1]
    order = np.lexsort((val, key))
    key, val = key[order], val[order]
    indptr = np.zeros(num_nodes + 1, dtype=np.int64)
    np.add.at(indptr, key + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, np.ascontiguousarray(val)


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True)
class GraphDataset:
    """Immutable directed graph with node features, labels and split masks.

    The adjacency is held twice: once keyed by source (``out_*``, the CSR
    adjacency proper) and once keyed by destination (``in_*``), because
    aggregation consumes in-neighbor lists.
    """

    num_nodes: int
    num_features: int
    num_classes: int
    features: np.ndarray  # (N, d) float32
    labels: np.ndarray  # (N,) int64, values in [0, C)
    split: np.ndarray  # (N,) uint8, values in {0, 1, 2}
    out_indptr: np.ndarray
    out_indices: np.ndarray
    in_indptr: np.ndarray = field(repr=False, default=None)
    in_indices: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.in_indptr is None:
            edges = self.edge_array()
            in_indptr, in_indices = _csr_from_edges(self.num_nodes, edges, by_dst=True)
            object.__setattr__(self, "in_indptr", in_indptr)
            object.__setattr__(self, "in_indices", in_indices)
        _freeze(
            self.features,
            self.labels,
            self.split,
            self.out_indptr,
            self.out_indices,
            self.in_indptr,
            self.in_indices,
        )

    @property
    def num_edges(self):
        return int(self.out_indices.shape[0])

    def edge_array(self):
        """All edges as an (E, 2) int64 array in canonical (src, dst) order."""
        src = np.repeat(
            np.arange(self.num_nodes, dtype=np.int64), np.diff(self.out_indptr)
        )
        return np.column_stack([src, self.out_indices])

    def validate(self):
        """Check the structural invariants; raises ValueError on violation."""
        n, d = self.num_nodes, self.num_features
        if self.features.shape != (n, d):
            raise ValueError("feature matrix shape mismatch")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite values")
        if self.labels.shape != (n,):
            raise ValueError("label vector shape mismatch")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")
        if self.split.shape != (n,) or (n and self.split.max() > SPLIT_TEST):
            raise ValueError("invalid split mask")
        if self.out_indices.size and (
            self.out_indices.min() < 0 or self.out_indices.max() >= n
        ):
            raise ValueError("edge endpoint outside [0, num_nodes)")
        edges = self.edge_array()
        if edges.shape[0] != len(np.unique(edges, axis=0)):
            raise ValueError("duplicate edges in adjacency")

    @classmethod
    def from_edges(cls, features, labels, split, edges, num_classes=None):
        """Construct from an edge list; deduplicates and validates."""
        features = np.ascontiguousarray(features, dtype=np.float32)
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        split = np.ascontiguousarray(split, dtype=np.uint8)
        n = features.shape[0]
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise ValueError(f"unknown node id in edge list (num_nodes={n})")
            edges = np.unique(edges, axis=0)
        if num_classes is None:
            num_classes = int(labels.max()) + 1 if n else 0
        out_indptr, out_indices = _csr_from_edges(n, edges, by_dst=False)
        ds = cls(
            num_nodes=n,
            num_features=features.shape[1],
            num_classes=int(num_classes),
            features=features,
            labels=labels,
            split=split,
            out_indptr=out_indptr,
            out_indices=out_indices,
        )
        ds.validate()
        return ds


@dataclass(frozen=True)
class DegreeBoundedView:
    """A graph view whose in-degrees are capped at ``max_degree``.

    Edges are a per-node uniform without-replacement sample of the base
    graph's in-edges; identical (base, max_degree, seed) give identical views.
    """

    base: GraphDataset
    max_degree: int
    sampler_seed: int
    in_indptr: np.ndarray = field(repr=False)
    in_indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        _freeze(self.in_indptr, self.in_indices)

    @property
    def num_nodes(self):
        return self.base.num_nodes

    @property
    def num_edges(self):
        return int(self.in_indices.shape[0])

    def edge_array(self):
        dst = np.repeat(
            np.arange(self.num_nodes, dtype=np.int64), np.diff(self.in_indptr)
        )
        return np.column_stack([self.in_indices, dst])


def in_degrees(g):
    """In-degree of every node; sums to the edge count."""
    return np.diff(g.in_indptr)


def bound_degree(g: GraphDataset, max_degree: int, seed: int) -> DegreeBoundedView:
    """Cap every node's in-degree at ``max_degree`` by uniform sampling.

    Nodes already within the bound keep all their in-neighbors. Deterministic
    for a fixed (g, max_degree, seed).
    """
    if max_degree < 1:
        raise ValueError("max_degree must be >= 1")
    rng = np.random.default_rng(seed)
    indptr = np.zeros(g.num_nodes + 1, dtype=np.int64)
    chunks = []
    for v in range(g.num_nodes):
        lo, hi = g.in_indptr[v], g.in_indptr[v + 1]
        neigh = g.in_indices[lo:hi]
        if hi - lo > max_degree:
            neigh = np.sort(rng.choice(neigh, size=max_degree, replace=False))
        chunks.append(neigh)
        indptr[v + 1] = indptr[v] + len(neigh)
    indices = (
        np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    ).astype(np.int64)
    return DegreeBoundedView(
        base=g,
        max_degree=max_degree,
        sampler_seed=seed,
        in_indptr=indptr,
        in_indices=indices,
    )


def _generated_split(num_nodes, rng):
    """Random 75/10/15 split; each part within one node of its target size."""
    n_train = round(_SPLIT_RATIOS[0] * num_nodes)
    n_val = round(_SPLIT_RATIOS[1] * num_nodes)
    split = np.full(num_nodes, SPLIT_TEST, dtype=np.uint8)
    perm = rng.permutation(num_nodes)
    split[perm[:n_train]] = SPLIT_TRAIN
    split[perm[n_train : n_train + n_val]] = SPLIT_VAL
    return split


def generate_sbm(
    num_nodes,
    num_classes,
    p_in,
    p_out,
    feature_dim,
    feature_signal,
    seed,
):
    """Directed stochastic-block-model dataset with Gaussian class features.

    Edge (u, v) is present with probability p_in when u and v share a class
    and p_out otherwise (no self-loops). Features are
    unit-norm class centroid * feature_signal + standard Gaussian noise.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise ValueError("need 0 <= p_out <= p_in <= 1")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if feature_signal < 0:
        raise ValueError("feature_signal must be >= 0")
    rng = np.random.default_rng(seed)

    counts = np.full(num_classes, num_nodes // num_classes, dtype=np.int64)
    counts[: num_nodes % num_classes] += 1
    labels = rng.permutation(np.repeat(np.arange(num_classes, dtype=np.int64), counts))

    centroids = rng.standard_normal((num_classes, feature_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    features = centroids[labels] * feature_signal + rng.standard_normal(
        (num_nodes, feature_dim)
    )

    # Row blocks keep the probability matrix small while staying deterministic.
    edge_chunks = []
    block = 256
    for start in range(0, num_nodes, block):
        stop = min(start + block, num_nodes)
        same = labels[start:stop, None] == labels[None, :]
        prob = np.where(same, p_in, p_out)
        draws = rng.random((stop - start, num_nodes))
        rows, cols = np.nonzero(draws < prob)
        rows = rows + start
        keep = rows != cols
        edge_chunks.append(np.column_stack([rows[keep], cols[keep]]))
    edges = (
        np.concatenate(edge_chunks) if edge_chunks else np.zeros((0, 2), dtype=np.int64)
    )

    split = _generated_split(num_nodes, rng)
    return GraphDataset.from_edges(
        features, labels, split, edges, num_classes=num_classes
    )


# ---------------------------------------------------------------------------
# CSV loading
# ---------------------------------------------------------------------------


def _parse_nodes_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GraphFormatError(f"{path}: empty nodes file") from None
        if len(header) < 2 or header[0] != "id" or header[1] != "label":
            raise GraphFormatError(f"{path}: nodes header must be id,label,f0,...")
        dim = len(header) - 2
        ids, labels, feats = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise GraphFormatError(f"{path}:{lineno}: expected {dim + 2} fields")
            try:
                ids.append(int(row[0]))
                labels.append(int(row[1]))
                feats.append([float(x) for x in row[2:]])
            except ValueError as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from None
            if labels[-1] < 0:
                raise GraphFormatError(f"{path}:{lineno}: negative label")
    n = len(ids)
    if sorted(ids) != list(range(n)):
        raise GraphFormatError(f"{path}: node ids must be consecutive 0..{n - 1}")
    order = np.argsort(ids)
    features = np.asarray(feats, dtype=np.float32).reshape(n, dim)[order]
    labels_arr = np.asarray(labels, dtype=np.int64)[order]
    if not np.all(np.isfinite(features)):
        raise GraphFormatError(f"{path}: non-finite feature value")
    return features, labels_arr


def _parse_edges_csv(path, num_nodes):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise GraphFormatError(f"{path}: empty edges file") from None
        if header != ["src", "dst"]:
            raise GraphFormatError(f"{path}: edges header must be src,dst")
        edges = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise GraphFormatError(f"{path}:{lineno}: expected 2 fields")
            try:
                s, t = int(row[0]), int(row[1])
            except ValueError as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from None
            if not (0 <= s < num_nodes and 0 <= t < num_nodes):
                raise GraphFormatError(f"{path}:{lineno}: unknown node id")
            edges.append((s, t))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def load_splits_csv(path, num_nodes):
    """Read an `id,split` CSV; returns (ids, tags) for the listed nodes."""
    ids, tags = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "split"]:
            raise GraphFormatError(f"{path}: splits header must be id,split")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                i = int(row[0])
            except (ValueError, IndexError) as exc:
                raise GraphFormatError(f"{path}:{lineno}: {exc}") from None
            if not 0 <= i < num_nodes:
                raise GraphFormatError(f"{path}:{lineno}: unknown node id")
            if len(row) != 2 or row[1] not in _SPLIT_NAMES:
                raise GraphFormatError(f"{path}:{lineno}: split must be train/val/test")
            ids.append(i)
            tags.append(_SPLIT_NAMES[row[1]])
    return np.asarray(ids, dtype=np.int64), np.asarray(tags, dtype=np.uint8)


def load_csv(nodes_path, edges_path, splits_path=None):
    """Load a dataset from nodes/edges CSV files.

    Splits default to a deterministic 75/10/15 assignment (fixed seed) and can
    be overridden per node with the optional splits file.
    """
    features, labels = _parse_nodes_csv(nodes_path)
    n = features.shape[0]
    edges = _parse_edges_csv(edges_path, n)
    split = _generated_split(n, np.random.default_rng(0))
    if splits_path is not None:
        ids, tags = load_splits_csv(splits_path, n)
        split[ids] = tags
    return GraphDataset.from_edges(features, labels, split, edges)


# ---------------------------------------------------------------------------
# Binary container
# ---------------------------------------------------------------------------


def save_binary(g: GraphDataset, path):
    """Write the GAPD binary container (round-trips bit-exactly)."""
    edges = g.edge_array()
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(
            struct.pack(
                "<HQIIQ",
                DATASET_VERSION,
                g.num_nodes,
                g.num_features,
                g.num_classes,
                g.num_edges,
            )
        )
        fh.write(np.ascontiguousarray(g.features, dtype="<f4").tobytes())
        fh.write(g.labels.astype("<u4").tobytes())
        fh.write(g.split.astype("u1").tobytes())
        fh.write(edges.astype("<u8").tobytes())


def _read_exact(fh, size, what):
    buf = fh.read(size)
    if len(buf) != size:
        raise GraphFormatError(f"truncated payload while reading {what}")
    return buf


def load_binary(path) -> GraphDataset:
    """Read a GAPD binary container written by save_binary."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DATASET_MAGIC:
            raise GraphFormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2, "version"))
        if version != DATASET_VERSION:
            raise GraphFormatError(f"unsupported version {version}")
        n, d, c, e = struct.unpack("<QIIQ", _read_exact(fh, 24, "header"))
        features = np.frombuffer(
            _read_exact(fh, 4 * n * d, "features"), dtype="<f4"
        ).reshape(n, d)
        labels = np.frombuffer(_read_exact(fh, 4 * n, "labels"), dtype="<u4").astype(
            np.int64
        )
        split = np.frombuffer(_read_exact(fh, n, "split tags"), dtype="u1")
        edges = np.frombuffer(_read_exact(fh, 16 * e, "edges"), dtype="<u8").reshape(
            e, 2
        )
        if fh.read(1):
            raise GraphFormatError("trailing bytes after payload")
    return GraphDataset.from_edges(
        features.copy(), labels, split.copy(), edges.astype(np.int64), num_classes=c
    )
