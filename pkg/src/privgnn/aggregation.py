"""Private multi-hop aggregation: normalize, sparse sum over in-neighbors,
Gaussian perturbation, repeated for a configured number of hops.

The K+1 resulting matrices are cached and reused by training and inference;
their privacy cost is what the accounting module charges for graph access.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from privgnn import kernels
from privgnn.accounting import RdpCurve
from privgnn.graphs import DegreeBoundedView, GraphFormatError

CACHE_MAGIC = b"GAPC"
CACHE_VERSION = 1

_MASK64 = (1 << 64) - 1


def derive_seed(master_seed, *branch):
    """Deterministic 64-bit child seed for (master, branch...) counters."""
    entropy = [master_seed & _MASK64] + [int(b) & _MASK64 for b in branch]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class PmaConfig:
    hops: int
    sigma: float
    level: str = "edge"  # 'edge' or 'node'
    max_degree: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.hops < 0:
            raise ValueError("hops must be >= 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.level not in ("edge", "node"):
            raise ValueError("level must be 'edge' or 'node'")
        if self.level == "node" and (self.max_degree is None or self.max_degree < 1):
            raise ValueError("node level requires max_degree >= 1")


@dataclass(frozen=True)
class AggregationCache:
    """The K+1 unit-row matrices produced by one run of the mechanism."""

    matrices: tuple  # (K+1) arrays of shape (N, width), float64

    def __post_init__(self):
        for m in self.matrices:
            m.setflags(write=False)

    @property
    def hops(self):
        return len(self.matrices) - 1

    @property
    def num_nodes(self):
        return self.matrices[0].shape[0]

    @property
    def width(self):
        return self.matrices[0].shape[1]

    def stacked(self):
        """All matrices as one (K+1, N, width) array."""
        return np.stack(self.matrices)


def row_normalize(m):
    """Unit-norm rows; all-zero rows are returned as zero."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise ValueError("non-finite entries in matrix")
    return kernels.unit_rows(np.ascontiguousarray(m))


def aggregate(x_norm, g):
    """Sum of in-neighbor rows for every node: row v = sum over {u : u -> v}.

    Isolated nodes (no in-neighbors) get the zero row.
    """
    x_norm = np.ascontiguousarray(x_norm, dtype=np.float64)
    if x_norm.shape[0] != g.num_nodes:
        raise ValueError(
            f"row count {x_norm.shape[0]} does not match num_nodes {g.num_nodes}"
        )
    return kernels.gather_sum(g.in_indptr, g.in_indices, x_norm)


def perturb(m, sigma, seed):
    """Add i.i.d. Gaussian noise of standard deviation sigma to every entry.

    Deterministic per seed (counter-based generator); sigma = 0 is identity.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    m = np.asarray(m, dtype=np.float64)
    if sigma == 0:
        return m.copy()
    rng = np.random.Generator(np.random.Philox(seed))
    return m + rng.standard_normal(m.shape) * sigma


def run_pma(g, x0, cfg: PmaConfig) -> AggregationCache:
    """Run the noisy multi-hop aggregation mechanism.

    cache[0] is the normalized input; cache[k] = normalize(perturb(aggregate(
    cache[k-1]))) with a distinct derived noise seed per hop. With hops = 0
    the graph is never read.
    """
    if cfg.level == "node":
        if not isinstance(g, DegreeBoundedView) or g.max_degree != cfg.max_degree:
            raise ValueError(
                "node-level aggregation requires a DegreeBoundedView with the "
                "configured max_degree"
            )
    matrices = [row_normalize(x0)]
    for k in range(1, cfg.hops + 1):
        summed = aggregate(matrices[-1], g)
        noisy = perturb(summed, cfg.sigma, derive_seed(cfg.seed, k))
        matrices.append(row_normalize(noisy))
    return AggregationCache(matrices=tuple(matrices))


def pma_rdp_curve(cfg: PmaConfig) -> RdpCurve:
    """RDP cost of the mechanism: K alpha / (2 sigma^2) per edge adjacency,
    D K alpha / (2 sigma^2) per node adjacency; zero when hops = 0."""
    if cfg.hops == 0:
        return RdpCurve.zero()
    if cfg.sigma == 0:
        raise ValueError("sigma = 0 with hops >= 1 has unbounded privacy cost")
    factor = cfg.hops if cfg.level == "edge" else cfg.hops * cfg.max_degree
    scale = factor / (2.0 * cfg.sigma * cfg.sigma)
    return RdpCurve(lambda alpha: scale * alpha, label=f"pma({cfg.level})")


def save_cache(cache: AggregationCache, path):
    """Write the GAPC binary container."""
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(
            struct.pack(
                "<HIQI",
                CACHE_VERSION,
                len(cache.matrices),
                cache.num_nodes,
                cache.width,
            )
        )
        for m in cache.matrices:
            fh.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def load_cache(path) -> AggregationCache:
    """Read a GAPC binary container written by save_cache."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CACHE_MAGIC:
            raise GraphFormatError(f"bad magic {magic!r}")
        header = fh.read(18)
        if len(header) != 18:
            raise GraphFormatError("truncated payload while reading header")
        version, count, n, width = struct.unpack("<HIQI", header)
        if version != CACHE_VERSION:
            raise GraphFormatError(f"unsupported version {version}")
        matrices = []
        for _ in range(count):
            buf = fh.read(8 * n * width)
            if len(buf) != 8 * n * width:
                raise GraphFormatError("truncated payload while reading matrices")
            matrices.append(np.frombuffer(buf, dtype="<f8").reshape(n, width).copy())
        if fh.read(1):
            raise GraphFormatError("trailing bytes after payload")
    return AggregationCache(matrices=tuple(matrices))
