"""Vectorization and approximate retrieval substrate.

TF-IDF text encoding, PCA projection, and an inverted-file (Voronoi) index
over an inner-product metric. Everything is seeded and deterministic: k-means
uses k-means++ initialization with a fixed iteration budget, queries break
ties by ascending id, and probing every cell reproduces brute-force search
exactly.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EncodingError, FitError, QueryError, RetrievalError
from .world import RngLike, as_rng

INDEX_FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# TF-IDF
# ---------------------------------------------------------------------------

@dataclass
class TfIdfEncoder:
    vocabulary: dict[str, int]
    idf: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.vocabulary)


def tfidf_fit(corpus: Sequence[Sequence[str]]) -> TfIdfEncoder:
    """Classic tf-idf: idf(t) = ln(N / df(t)), so terms present in every
    document carry zero weight and idf is always >= 0."""
    docs = [list(doc) for doc in corpus]
    if not docs:
        raise FitError("cannot fit tf-idf on an empty corpus")
    df: Counter[str] = Counter()
    for doc in docs:
        df.update(set(doc))
    vocabulary = {term: i for i, term in enumerate(sorted(df))}
    n = len(docs)
    idf = np.zeros(len(vocabulary), dtype=np.float64)
    for term, i in vocabulary.items():
        idf[i] = math.log(n / df[term])
    return TfIdfEncoder(vocabulary=vocabulary, idf=idf)


def tfidf_encode(encoder: TfIdfEncoder, tokens: Sequence[str]) -> np.ndarray:
    """L2-normalized tf-idf vector; unknown tokens are ignored and empty or
    all-zero encodings stay the zero vector."""
    vec = np.zeros(encoder.dim, dtype=np.float64)
    for term, count in Counter(tokens).items():
        idx = encoder.vocabulary.get(term)
        if idx is not None:
            vec[idx] = count * encoder.idf[idx]
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass
class PcaProjector:
    mean: np.ndarray
    components: np.ndarray  # (k, d) orthonormal rows

    @property
    def dim(self) -> int:
        return self.components.shape[0]


def pca_fit(vectors: np.ndarray, k: int = 320) -> PcaProjector:
    """Project onto the top-k covariance eigenvectors after mean-centering.

    When fewer than k informative directions exist, the available rank is
    retained. Component signs are fixed for determinism."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise FitError("pca_fit needs a nonempty 2-D sample matrix")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(1, x.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    tol = max(eigvals[0], 0.0) * 1e-12 + 1e-15
    rank = min(k, int((eigvals > tol).sum()), x.shape[1])
    rank = max(rank, 1)
    components = eigvecs[:, :rank].T.copy()
    for row in components:
        pivot = np.argmax(np.abs(row))
        if row[pivot] < 0:
            row *= -1.0
    return PcaProjector(mean=mean, components=components)


def pca_project(projector: PcaProjector, vectors: np.ndarray) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    return (x - projector.mean) @ projector.components.T


# ---------------------------------------------------------------------------
# k-means and the IVF index
# ---------------------------------------------------------------------------

def kmeans(points: np.ndarray, cells: int, rng: RngLike, iters: int = 25
           ) -> tuple[np.ndarray, np.ndarray]:
    """Seeded k-means++ with a fixed iteration budget.

    Empty cells are re-seeded from the largest cell (its farthest member), so
    every centroid stays live. Returns (centroids, labels)."""
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise FitError("cannot cluster zero points")
    cells = min(cells, n)
    gen = as_rng(rng)

    centroids = np.empty((cells, x.shape[1]), dtype=np.float64)
    centroids[0] = x[int(gen.integers(n))]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for i in range(1, cells):
        total = d2.sum()
        if total <= 0:
            centroids[i:] = x[gen.integers(n, size=cells - i)]
            break
        centroids[i] = x[int(gen.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, np.sum((x - centroids[i]) ** 2, axis=1))

    sq = np.sum(x * x, axis=1)
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(iters):
        dist = sq[:, None] - 2.0 * (x @ centroids.T) + np.sum(centroids ** 2, axis=1)
        labels = np.argmin(dist, axis=1)
        counts = np.bincount(labels, minlength=cells)
        for c in range(cells):
            if counts[c] > 0:
                centroids[c] = x[labels == c].mean(axis=0)
        for c in np.flatnonzero(counts == 0):
            big = int(np.argmax(counts))
            members = np.flatnonzero(labels == big)
            far = members[int(np.argmax(np.sum((x[members] - centroids[big]) ** 2, axis=1)))]
            centroids[c] = x[far]
            labels[far] = c
            counts[big] -= 1
            counts[c] += 1
    return centroids, labels


@dataclass
class IvfIndex:
    centroids: np.ndarray        # (cells, dim)
    cell_ids: list[np.ndarray]   # per-cell posting list of ids
    cell_vectors: list[np.ndarray]
    count: int

    @property
    def cells(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def ivf_build(vectors: np.ndarray, cells: int = 512, rng: RngLike = 0,
              iters: int = 25, ids: Sequence[int] | None = None) -> IvfIndex:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise FitError("cannot build an index over an empty vector set")
    all_ids = np.arange(x.shape[0], dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
    centroids, labels = kmeans(x, cells, rng, iters)
    cell_ids = []
    cell_vectors = []
    for c in range(centroids.shape[0]):
        members = np.flatnonzero(labels == c)
        order = members[np.argsort(all_ids[members])]
        cell_ids.append(all_ids[order])
        cell_vectors.append(x[order])
    return IvfIndex(centroids=centroids, cell_ids=cell_ids,
                    cell_vectors=cell_vectors, count=x.shape[0])


def ivf_query(index: IvfIndex, query: np.ndarray, k: int, probes: int = 10
              ) -> list[tuple[int, float]]:
    """Top-k ids by inner product over the `probes` nearest cells.

    Ties break by ascending id; probes >= cells reproduces exact search."""
    if k <= 0:
        raise QueryError(f"k must be positive, got {k}")
    if index.count == 0:
        raise RetrievalError("query against an empty index")
    q = np.asarray(query, dtype=np.float64)
    probes = min(probes, index.cells)
    cell_scores = index.centroids @ q
    chosen = np.argsort(-cell_scores, kind="stable")[:probes]
    ids: list[np.ndarray] = []
    scores: list[np.ndarray] = []
    for c in chosen:
        if len(index.cell_ids[c]):
            ids.append(index.cell_ids[c])
            scores.append(index.cell_vectors[c] @ q)
    if not ids:
        return []
    flat_ids = np.concatenate(ids)
    flat_scores = np.concatenate(scores)
    order = np.lexsort((flat_ids, -flat_scores))[:k]
    return [(int(flat_ids[i]), float(flat_scores[i])) for i in order]


def brute_force_query(vectors: np.ndarray, ids: np.ndarray | None, query: np.ndarray,
                      k: int) -> list[tuple[int, float]]:
    """Exact reference search with the same (score desc, id asc) ordering."""
    x = np.asarray(vectors, dtype=np.float64)
    all_ids = np.arange(x.shape[0], dtype=np.int64) if ids is None else np.asarray(ids)
    scores = x @ np.asarray(query, dtype=np.float64)
    order = np.lexsort((all_ids, -scores))[:k]
    return [(int(all_ids[i]), float(scores[i])) for i in order]


def save_index(index: IvfIndex, path: str | Path) -> None:
    """Versioned binary persistence; header fields cells/dim/count."""
    flat_ids = np.concatenate([c for c in index.cell_ids]) if index.count else np.empty(0, np.int64)
    flat_vecs = (np.concatenate([c for c in index.cell_vectors])
                 if index.count else np.empty((0, index.dim)))
    lengths = np.asarray([len(c) for c in index.cell_ids], dtype=np.int64)
    np.savez(
        path,
        version=np.int64(INDEX_FORMAT_VERSION),
        cells=np.int64(index.cells),
        dim=np.int64(index.dim),
        count=np.int64(index.count),
        centroids=index.centroids,
        lengths=lengths,
        ids=flat_ids,
        vectors=flat_vecs,
    )


def load_index(path: str | Path) -> IvfIndex:
    with np.load(path) as data:
        if int(data["version"]) != INDEX_FORMAT_VERSION:
            raise FitError(f"unsupported index version {int(data['version'])}")
        lengths = data["lengths"]
        ids = data["ids"]
        vectors = data["vectors"]
        cell_ids = []
        cell_vectors = []
        offset = 0
        for length in lengths:
            cell_ids.append(ids[offset:offset + length])
            cell_vectors.append(vectors[offset:offset + length])
            offset += length
        return IvfIndex(centroids=data["centroids"], cell_ids=cell_ids,
                        cell_vectors=cell_vectors, count=int(data["count"]))


# ---------------------------------------------------------------------------
# Hybrid state+instruction encoding
# ---------------------------------------------------------------------------

def hybrid_encode(state_vec: np.ndarray, instr_vec: np.ndarray, alpha: float,
                  balance: bool = False) -> np.ndarray:
    """Concatenate a state block with an alpha-weighted instruction block and
    renormalize. With balance=True the instruction block is first rescaled to
    the state block's norm (so alpha weighs two equally-sized components)."""
    state_vec = np.asarray(state_vec, dtype=np.float64)
    instr_vec = np.asarray(instr_vec, dtype=np.float64)
    if not (np.isfinite(state_vec).all() and np.isfinite(instr_vec).all()):
        raise EncodingError("non-finite input to hybrid_encode")
    if balance:
        instr_norm = np.linalg.norm(instr_vec)
        state_norm = np.linalg.norm(state_vec)
        if instr_norm > 0:
            instr_vec = instr_vec * (state_norm / instr_norm)
    combined = np.concatenate([state_vec, alpha * instr_vec])
    norm = np.linalg.norm(combined)
    if norm == 0:
        raise EncodingError("zero combined norm in hybrid_encode")
    return combined / norm
