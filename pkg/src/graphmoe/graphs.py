"""Graph containers, dataset I/O, normalization, homophily analytics, SBM
generation and split management.

Dataset directory layout (all little-endian):
  meta.json     {"name", "num_nodes", "num_features", "num_classes"}
  edges.tsv     one undirected edge per line: "<src>\t<dst>" (0-based)
  features.bin  16-byte header: magic b"GMXF", u32 rows, u32 cols, u32 zero;
                then rows*cols float32, row-major (widened to float64 on load)
  labels.tsv    one integer class id per line, line i = node i
  splits.json   optional {"<seed>": {"train": [...], "val": [...], "test": [...]}}
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import RngState
from .sparse import SparseMatrix

_MAGIC = b"GMXF"


class DatasetFormatError(ValueError):
    pass


@dataclass
class GraphDataset:
    name: str
    num_nodes: int
    num_features: int
    num_classes: int
    adjacency: SparseMatrix  # symmetric, self-loops stripped
    features: np.ndarray  # |V| x d float64
    labels: np.ndarray  # int64, length |V|

    def degrees(self) -> np.ndarray:
        return np.diff(self.adjacency.row_ptr)

    @property
    def num_edges(self) -> int:
        """Undirected edge count (stored entries / 2)."""
        return self.adjacency.nnz // 2


@dataclass
class SplitSpec:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int


@dataclass
class HomophilyProfile:
    homophily: np.ndarray  # NaN for isolated nodes
    degree: np.ndarray
    h_bin: np.ndarray  # -1 for isolated nodes
    d_bin: np.ndarray  # -1 for isolated nodes
    homophily_bins: int
    degree_bins: int
    degree_edges: np.ndarray

    def subspace_id(self) -> np.ndarray:
        out = self.h_bin * self.degree_bins + self.d_bin
        out[self.h_bin < 0] = -1
        return out


def _symmetrize(num_nodes: int, src: np.ndarray, dst: np.ndarray) -> SparseMatrix:
    keep = src != dst  # drop self-loops
    src, dst = src[keep], dst[keep]
    r = np.concatenate([src, dst])
    c = np.concatenate([dst, src])
    adj = SparseMatrix.from_coo(num_nodes, num_nodes, r, c, np.ones(r.shape[0]))
    adj.values[:] = 1.0  # collapse duplicates to unweighted edges
    return adj


def load_dataset(directory) -> GraphDataset:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(meta_path)
    meta = json.loads(meta_path.read_text())
    n = int(meta["num_nodes"])

    edges = np.loadtxt(directory / "edges.tsv", dtype=np.int64, delimiter="\t", ndmin=2)
    if edges.size == 0:
        edges = np.zeros((0, 2), dtype=np.int64)
    if edges.shape[1] != 2:
        raise DatasetFormatError("edges.tsv must have two columns")
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise DatasetFormatError("edge endpoint out of range")

    raw = (directory / "features.bin").read_bytes()
    if raw[:4] != _MAGIC:
        raise DatasetFormatError("features.bin: bad magic")
    rows, cols, reserved = struct.unpack("<III", raw[4:16])
    if reserved != 0:
        raise DatasetFormatError("features.bin: reserved field must be zero")
    if rows != n or cols != int(meta["num_features"]):
        raise DatasetFormatError("features.bin shape disagrees with meta.json")
    feats = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=16)
    if feats.shape[0] != rows * cols:
        raise DatasetFormatError("features.bin truncated")
    features = feats.astype(np.float64).reshape(rows, cols)

    labels = np.loadtxt(directory / "labels.tsv", dtype=np.int64, ndmin=1)
    if labels.shape[0] != n:
        raise DatasetFormatError("labels.tsv row count disagrees with meta.json")
    if labels.min() < 0 or labels.max() >= int(meta["num_classes"]):
        raise DatasetFormatError("label out of range")

    return GraphDataset(
        name=str(meta["name"]),
        num_nodes=n,
        num_features=int(meta["num_features"]),
        num_classes=int(meta["num_classes"]),
        adjacency=_symmetrize(n, edges[:, 0], edges[:, 1]),
        features=features,
        labels=labels,
    )


def save_dataset(g: GraphDataset, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {"name": g.name, "num_nodes": g.num_nodes,
            "num_features": g.num_features, "num_classes": g.num_classes}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    src = g.adjacency.edge_rows()
    dst = g.adjacency.col_idx
    keep = src < dst  # store each undirected edge once
    lines = [f"{int(s)}\t{int(d)}" for s, d in zip(src[keep], dst[keep])]
    (directory / "edges.tsv").write_text("\n".join(lines) + ("\n" if lines else ""))
    header = _MAGIC + struct.pack("<III", g.num_nodes, g.num_features, 0)
    body = g.features.astype("<f4").tobytes()
    (directory / "features.bin").write_bytes(header + body)
    (directory / "labels.tsv").write_text(
        "\n".join(str(int(y)) for y in g.labels) + "\n")


def load_splits(directory, seed: int) -> SplitSpec | None:
    path = Path(directory) / "splits.json"
    if not path.exists():
        return None
    table = json.loads(path.read_text())
    entry = table.get(str(seed))
    if entry is None:
        return None
    return SplitSpec(train=np.asarray(entry["train"], dtype=np.int64),
                     val=np.asarray(entry["val"], dtype=np.int64),
                     test=np.asarray(entry["test"], dtype=np.int64),
                     seed=seed)


def normalize_adjacency(g: GraphDataset) -> SparseMatrix:
    """(D+I)^{-1/2} (A+I) (D+I)^{-1/2}, self-loops included."""
    n = g.num_nodes
    inv_sqrt = 1.0 / np.sqrt(g.degrees() + 1.0)
    src = np.concatenate([g.adjacency.edge_rows(), np.arange(n, dtype=np.int64)])
    dst = np.concatenate([g.adjacency.col_idx, np.arange(n, dtype=np.int64)])
    vals = inv_sqrt[src] * inv_sqrt[dst]
    return SparseMatrix.from_coo(n, n, src, dst, vals)


def mean_neighbor_matrix(g: GraphDataset) -> SparseMatrix:
    """D^{-1} A with zero rows for isolated nodes (self excluded)."""
    deg = g.degrees().astype(np.float64)
    src = g.adjacency.edge_rows()
    vals = 1.0 / deg[src]
    return SparseMatrix(g.num_nodes, g.num_nodes, g.adjacency.row_ptr,
                        g.adjacency.col_idx, vals)


def attention_graph(g: GraphDataset) -> SparseMatrix:
    """A + I pattern (unit values), the edge set N(i) ∪ {i} for attention."""
    n = g.num_nodes
    src = np.concatenate([g.adjacency.edge_rows(), np.arange(n, dtype=np.int64)])
    dst = np.concatenate([g.adjacency.col_idx, np.arange(n, dtype=np.int64)])
    return SparseMatrix.from_coo(n, n, src, dst, np.ones(src.shape[0]))


def node_homophily(g: GraphDataset) -> np.ndarray:
    """Fraction of same-label neighbors; NaN for isolated nodes."""
    src = g.adjacency.edge_rows()
    dst = g.adjacency.col_idx
    same = (g.labels[src] == g.labels[dst]).astype(np.float64)
    agree = np.zeros(g.num_nodes)
    np.add.at(agree, src, same)
    deg = g.degrees().astype(np.float64)
    out = np.full(g.num_nodes, np.nan)
    nz = deg > 0
    out[nz] = agree[nz] / deg[nz]
    return out


def partition_subspaces(g: GraphDataset, homophily_bins: int,
                        degree_bins: int) -> HomophilyProfile:
    """Equal-width homophily bins over [0,1]; quantile degree bins."""
    if homophily_bins < 1 or degree_bins < 1:
        raise ValueError("bin counts must be >= 1")
    h = node_homophily(g)
    deg = g.degrees()
    nz = deg > 0

    h_bin = np.full(g.num_nodes, -1, dtype=np.int64)
    h_bin[nz] = np.minimum((h[nz] * homophily_bins).astype(np.int64),
                           homophily_bins - 1)

    qs = np.quantile(deg[nz], np.linspace(0, 1, degree_bins + 1)[1:-1]) if nz.any() else np.array([])
    d_bin = np.full(g.num_nodes, -1, dtype=np.int64)
    d_bin[nz] = np.searchsorted(qs, deg[nz], side="left")

    return HomophilyProfile(homophily=h, degree=deg, h_bin=h_bin, d_bin=d_bin,
                            homophily_bins=homophily_bins, degree_bins=degree_bins,
                            degree_edges=qs)


def generate_sbm_from_blocks(n: int, block_probs: np.ndarray, d: int,
                             noise: float, rng: RngState, name: str = "sbm",
                             centroid_scale: float = 2.0) -> GraphDataset:
    """Balanced stochastic block model with an arbitrary symmetric block
    probability matrix and noisy class-centroid features."""
    classes = block_probs.shape[0]
    if n < classes:
        raise ValueError("need at least one node per class")
    if d < classes:
        raise ValueError("feature dim must be >= number of classes")
    labels = np.arange(n, dtype=np.int64) % classes

    u = rng.uniform((n, n))
    p = block_probs[labels[:, None], labels[None, :]]
    upper = np.triu(u < p, k=1)
    src, dst = np.nonzero(upper)
    adj = _symmetrize(n, src.astype(np.int64), dst.astype(np.int64))

    features = rng.normal((n, d), scale=noise)
    features[np.arange(n), labels] += centroid_scale

    return GraphDataset(name=name, num_nodes=n, num_features=d,
                        num_classes=classes, adjacency=adj,
                        features=features, labels=labels)


def generate_sbm(n: int, classes: int, p_in: float, p_out: float, d: int,
                 noise: float, rng: RngState, name: str = "sbm",
                 centroid_scale: float = 2.0) -> GraphDataset:
    """Two-probability SBM: p_in within a class, p_out across classes."""
    block = np.full((classes, classes), p_out)
    np.fill_diagonal(block, p_in)
    return generate_sbm_from_blocks(n, block, d, noise, rng, name=name,
                                    centroid_scale=centroid_scale)


def generate_mixed_sbm(n: int, classes: int, p_hi: float, p_lo: float, d: int,
                       noise: float, rng: RngState,
                       name: str = "sbm-mixed") -> GraphDataset:
    """Half the communities assortative, half disassortative.

    The first half of the classes link densely within themselves; the second
    half link sparsely within themselves but densely to each other, giving a
    graph that mixes high- and low-homophily regions.
    """
    block = np.full((classes, classes), p_lo)
    half = classes // 2
    for c in range(half):
        block[c, c] = p_hi
    for c in range(half, classes):
        for c2 in range(half, classes):
            block[c, c2] = p_lo if c == c2 else p_hi
    return generate_sbm_from_blocks(n, block, d, noise, rng, name=name)


def make_splits(g: GraphDataset, ratios=(0.48, 0.32, 0.20), seed: int = 0) -> SplitSpec:
    """Per-class stratified split, deterministic for a fixed seed."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    rng = RngState(seed)
    train, val, test = [], [], []
    for c in range(g.num_classes):
        idx = np.flatnonzero(g.labels == c)
        if idx.shape[0] < 3:
            raise ValueError(f"class {c} has fewer than 3 nodes; cannot stratify")
        idx = idx[rng.permutation(idx.shape[0])]
        n_tr = int(round(ratios[0] * idx.shape[0]))
        n_val = int(round(ratios[1] * idx.shape[0]))
        n_tr = max(n_tr, 1)
        train.append(idx[:n_tr])
        val.append(idx[n_tr : n_tr + n_val])
        test.append(idx[n_tr + n_val :])
    return SplitSpec(train=np.sort(np.concatenate(train)),
                     val=np.sort(np.concatenate(val)),
                     test=np.sort(np.concatenate(test)), seed=seed)
