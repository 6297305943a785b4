"""Whole-graph embeddings from Weisfeiler-Lehman subtree tokens.

Each graph is a "document" whose "words" are its WL labels. Vectors are
learned with the distributed bag-of-words paragraph-vector objective and
negative sampling: the document vector alone predicts each of its tokens.
"""
from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ValidationError
from .graphs import Graph


@dataclass(frozen=True)
class WlTokenBag:
    graph_id: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class G2VConfig:
    epochs: int = 10
    learning_rate: float = 0.025
    min_learning_rate: float = 0.0001
    wl_iters: int = 2
    downsample: float = 1e-4
    dim: int = 128
    negatives: int = 5
    ns_exponent: float = 0.75
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.dim < 1 or self.negatives < 1:
            raise ValidationError(f"invalid Graph2Vec configuration {self}")


def _label_hash(text: str) -> str:
    return hashlib.blake2b(text.encode(), digest_size=8).hexdigest()


def wl_tokens(g: Graph, iters: int = 2) -> WlTokenBag:
    """Node labels for WL iterations ``0..iters``; iteration 0 is the degree."""
    if iters < 0:
        raise ValueError("iters must be >= 0")
    nbrs = g.neighbors()
    labels = [str(len(nb)) for nb in nbrs]
    tokens = [f"0:{lab}" for lab in labels]
    for t in range(1, iters + 1):
        labels = [_label_hash(labels[v] + "|" + ",".join(sorted(labels[u] for u in nbrs[v])))
                  for v in range(g.n)]
        tokens += [f"{t}:{lab}" for lab in labels]
    return WlTokenBag(g.id, tuple(tokens))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -30.0, 30.0)))


def _init_vectors(n_docs: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return (rng.random((n_docs, dim)) - 0.5) / dim


def train_graph2vec(corpus: list[WlTokenBag], cfg: G2VConfig = G2VConfig()) -> dict[str, np.ndarray]:
    """Fit one vector per graph; deterministic given ``cfg.seed``."""
    if not corpus:
        raise ValidationError("empty corpus")
    ids = [bag.graph_id for bag in corpus]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate graph ids in corpus")
    counts = Counter(tok for bag in corpus for tok in bag.tokens)
    if not counts:
        raise ValidationError("empty vocabulary")
    vocab = sorted(counts)
    index = {tok: i for i, tok in enumerate(vocab)}
    freq = np.array([counts[t] for t in vocab], dtype=float)
    total = freq.sum()

    # keep-probability for frequent-token downsampling
    if cfg.downsample > 0:
        thresh = cfg.downsample * total
        keep = np.minimum(1.0, (np.sqrt(freq / thresh) + 1.0) * thresh / freq)
    else:
        keep = np.ones_like(freq)
    noise = freq ** cfg.ns_exponent
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0

    docs = _init_vectors(len(corpus), cfg.dim, cfg.seed)
    out_vecs = np.zeros((len(vocab), cfg.dim))
    doc_tokens = [np.array([index[t] for t in bag.tokens], dtype=np.int64) for bag in corpus]
    rng = np.random.default_rng(cfg.seed + 1)

    total_words = cfg.epochs * int(total)
    seen = 0
    labels = np.zeros(cfg.negatives + 1)
    labels[0] = 1.0
    for _ in range(cfg.epochs):
        for d in rng.permutation(len(corpus)):
            toks = doc_tokens[d]
            toks = toks[rng.random(len(toks)) < keep[toks]]
            for w in toks:
                alpha = cfg.learning_rate - (cfg.learning_rate - cfg.min_learning_rate) * seen / total_words
                negs = np.searchsorted(noise_cdf, rng.random(cfg.negatives), side="right")
                targets = np.concatenate(([w], negs))
                vecs = out_vecs[targets]
                g = (labels - _sigmoid(vecs @ docs[d])) * alpha
                # a sampled negative equal to the positive is skipped (word2vec convention)
                g[1:][negs == w] = 0.0
                doc_grad = g @ vecs
                np.add.at(out_vecs, targets, np.outer(g, docs[d]))
                docs[d] += doc_grad
                seen += 1
            seen += len(doc_tokens[d]) - len(toks)
    return {gid: docs[i].copy() for i, gid in enumerate(ids)}


def embed_graphs(graphs: Iterable[Graph], cfg: G2VConfig = G2VConfig()) -> dict[str, np.ndarray]:
    return train_graph2vec([wl_tokens(g, cfg.wl_iters) for g in graphs], cfg)


def closeness_topk(acceptor_emb: np.ndarray, donor_embs: dict[str, np.ndarray], k: int) -> list[str]:
    """Donor ids by ascending Euclidean distance (ties: lexicographic id)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    dist = {d: float(np.linalg.norm(np.asarray(v) - acceptor_emb)) for d, v in donor_embs.items()}
    return sorted(dist, key=lambda d: (dist[d], d))[:k]


def write_embeddings(embs: dict[str, np.ndarray], path: str | Path) -> None:
    with open(path, "w") as fh:
        for gid, vec in embs.items():
            fh.write(gid + ", " + " ".join(f"{x:.9g}" for x in vec) + "\n")


def read_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    out = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                gid, rest = line.split(",", 1)
                out[gid] = np.array([float(x) for x in rest.split()])
    return out
