"""Interaction-graph masks over a sampled neighbourhood."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .hin import FeatureSchema, HinGraph, SparseFeatureVector, shared_group_indices
from .sampler import BOTH, U_SIDE, V_SIDE, Neighbourhood

INDUCED = "induced"
SIMILARITY = "similarity"
CROSS = "cross"
COMPLETE = "complete"
MASK_KINDS = (INDUCED, SIMILARITY, CROSS, COMPLETE)

# short names used on the command line
KIND_ALIASES = {"IG": INDUCED, "SG": SIMILARITY, "CG": CROSS, "PG": COMPLETE}


def parse_kinds(text: str) -> tuple[str, ...]:
    """``"IG,SG"`` or ``"induced,similarity"`` -> canonical kinds in fixed order."""
    kinds = set()
    for tok in filter(None, (t.strip() for t in text.split(","))):
        kind = KIND_ALIASES.get(tok.upper(), tok.lower())
        if kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {tok!r}")
        kinds.add(kind)
    if not kinds:
        raise ValueError("empty mask subset")
    return tuple(k for k in MASK_KINDS if k in kinds)


@dataclass
class Mask:
    kind: str
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass
class MaskSet:
    induced: Mask
    similarity: Mask
    cross: Mask
    complete: Mask

    def __post_init__(self):
        shapes = {m.matrix.shape for m in self.masks()}
        if len(shapes) != 1:
            raise ValueError(f"mask shapes disagree: {shapes}")

    @property
    def n(self) -> int:
        return self.induced.n

    def masks(self) -> list[Mask]:
        return [self.induced, self.similarity, self.cross, self.complete]

    def stacked(self) -> np.ndarray:
        """``(4, n, n)`` array in :data:`MASK_KINDS` order."""
        return np.stack([m.matrix for m in self.masks()])


def build_induced_mask(nb: Neighbourhood | int, edges) -> Mask:
    n = nb if isinstance(nb, int) else len(nb)
    m = np.eye(n)
    for i, j in edges:
        m[i, j] = m[j, i] = 1.0
    return Mask(INDUCED, m)


def build_complete_mask(n: int) -> Mask:
    if n < 1:
        raise ValueError("n must be >= 1")
    return Mask(COMPLETE, np.ones((n, n)))


def assign_sides(nb: Neighbourhood, edges, rng: np.random.Generator | None = None,
                 seed: int = 0) -> list[str]:
    """Resolve ``both`` nodes to the side holding more of their induced edges.

    Edges are counted towards nodes whose side is already fixed; exact ties
    are broken with ``rng``. u always lands on the u side and v on the v side.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    labels = [s if s != BOTH else None for s in nb.sides]
    labels[0], labels[1] = U_SIDE, V_SIDE
    fixed = list(labels)
    pending = [i for i, s in enumerate(labels) if s is None]
    if not pending:
        return labels
    adj: dict[int, list[int]] = {i: [] for i in pending}
    for i, j in edges:
        if i in adj:
            adj[i].append(j)
        if j in adj:
            adj[j].append(i)
    for i in pending:
        nu = sum(1 for j in adj[i] if fixed[j] == U_SIDE)
        nv = sum(1 for j in adj[i] if fixed[j] == V_SIDE)
        if nu != nv:
            labels[i] = U_SIDE if nu > nv else V_SIDE
        else:
            labels[i] = U_SIDE if rng.random() < 0.5 else V_SIDE
    return labels


def build_cross_mask(sides: list[str]) -> Mask:
    s = np.array([x == U_SIDE for x in sides])
    m = (s[:, None] != s[None, :]).astype(np.float64)
    np.fill_diagonal(m, 1.0)
    return Mask(CROSS, m)


S1, S2, S3, S4 = "S1", "S2", "S3", "S4"
STRATEGIES = (S1, S2, S3, S4)


@dataclass
class FeaturePartition:
    """Which feature groups feed the node input and which feed similarity.

    ``node_input[t]`` and ``similarity[t]`` are sorted group indices of
    type ``t``.
    """

    strategy: str
    threshold: int
    node_input: dict[str, list[int]] = field(default_factory=dict)
    similarity: dict[str, list[int]] = field(default_factory=dict)

    @property
    def uses_similarity(self) -> bool:
        return any(self.similarity.values())


def partition_feature_groups(schema: FeatureSchema, strategy: str = S3,
                             threshold: int = 1) -> FeaturePartition:
    """Route feature groups by dimension against ``threshold``.

    S1 keeps everything as input and computes no similarity; S2 drops groups
    wider than the threshold; S3 keeps everything as input and also uses the
    wide groups for similarity; S4 moves the wide groups from input to
    similarity.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    node_input, similarity = {}, {}
    for t, groups in schema.groups.items():
        wide = [i for i, g in enumerate(groups) if g.dim > threshold]
        narrow = [i for i, g in enumerate(groups) if g.dim <= threshold]
        everything = list(range(len(groups)))
        node_input[t] = {S1: everything, S2: narrow, S3: everything, S4: narrow}[strategy]
        similarity[t] = {S1: [], S2: [], S3: wide, S4: wide}[strategy]
    return FeaturePartition(strategy, threshold, node_input, similarity)


def similarity(f_i: SparseFeatureVector, f_j: SparseFeatureVector, schema: FeatureSchema,
               t_i: str, t_j: str, allowed_i=None, allowed_j=None) -> float:
    """Cosine similarity of two nodes over their shared feature groups.

    ``allowed_i`` / ``allowed_j`` optionally restrict the groups (by index in
    each type) that may take part. Returns 0 when nothing is shared or either
    restricted vector is zero.
    """
    gi, gj = shared_group_indices(schema, t_i, t_j)
    dot = ni = nj = 0.0
    for a, b in zip(gi, gj):
        if (allowed_i is not None and a not in allowed_i) or (allowed_j is not None and b not in allowed_j):
            continue
        xa, xb = f_i.group(a), f_j.group(b)
        dot += sum(v * xb.get(k, 0.0) for k, v in xa.items())
        ni += sum(v * v for v in xa.values())
        nj += sum(v * v for v in xb.values())
    if ni == 0.0 or nj == 0.0:
        return 0.0
    return float(min(1.0, dot / (np.sqrt(ni) * np.sqrt(nj))))


class SimilarityIndex:
    """Row-normalised sparse feature blocks for fast pairwise similarity.

    For every ordered type pair ``(a, b)`` with shared groups routed to
    similarity, nodes of type ``a`` get a unit-norm CSR row over the
    concatenation of those groups, aligned with the matching rows for ``b``.
    """

    DENSE_LIMIT = 4_000_000

    def __init__(self, g: HinGraph, partition: FeaturePartition | None = None):
        self.graph = g
        self.blocks: dict[tuple[str, str], np.ndarray | sp.csr_matrix] = {}
        schema = g.schema
        for a in g.type_names:
            for b in g.type_names:
                ga, gb = shared_group_indices(schema, a, b)
                pairs = [(x, y) for x, y in zip(ga, gb)
                         if partition is None
                         or (x in partition.similarity.get(a, []) and y in partition.similarity.get(b, []))]
                if not pairs:
                    continue
                mat = sp.hstack([g.features[a][x] for x, _ in pairs], format="csr")
                norms = np.sqrt(np.asarray(mat.multiply(mat).sum(axis=1)).ravel())
                scale = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
                block = sp.csr_matrix(sp.diags(scale) @ mat)
                # dense rows make per-neighbourhood lookups cheap when they fit
                self.blocks[(a, b)] = block.toarray() if block.shape[0] * block.shape[1] <= self.DENSE_LIMIT else block

    def matrix(self, nodes) -> np.ndarray:
        g = self.graph
        nodes = np.asarray(nodes, dtype=np.int64)
        n = len(nodes)
        out = np.zeros((n, n))
        codes = g.node_type[nodes]
        groups = {k: np.flatnonzero(codes == k) for k in np.unique(codes).tolist()}
        for ka, pos_a in groups.items():
            for kb, pos_b in groups.items():
                if ka > kb:
                    continue
                a, b = g.type_names[ka], g.type_names[kb]
                if (a, b) not in self.blocks:
                    continue
                ra = self.blocks[(a, b)][g.type_row[nodes[pos_a]]]
                rb = self.blocks[(b, a)][g.type_row[nodes[pos_b]]]
                block = ra @ rb.T
                if sp.issparse(block):
                    block = block.toarray()
                out[np.ix_(pos_a, pos_b)] = block
                out[np.ix_(pos_b, pos_a)] = block.T
        np.clip(out, 0.0, 1.0, out=out)
        return out


def knn_select(sim: np.ndarray, k: int) -> np.ndarray:
    """Symmetric 0/1 k-NN adjacency: keep pair (i, j) if either picks the other.

    Only pairs with positive similarity are eligible; ties are resolved by
    lower index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = sim.shape[0]
    out = np.zeros((n, n))
    for i in range(n):
        row = sim[i].copy()
        row[i] = -np.inf
        order = np.argsort(-row, kind="stable")
        chosen = [j for j in order[:k] if row[j] > 0]
        out[i, chosen] = 1.0
    out = np.maximum(out, out.T)
    np.fill_diagonal(out, 1.0)
    return out


def build_similarity_mask(nb: Neighbourhood, g: HinGraph, partition: FeaturePartition | None = None,
                          mode: str = "weighted", k: int = 3,
                          index: SimilarityIndex | None = None) -> Mask:
    """Similarity mask in ``"weighted"`` (raw cosine) or ``"knn"`` mode."""
    if index is None:
        index = SimilarityIndex(g, partition)
    sim = index.matrix(nb.nodes)
    if mode == "weighted":
        m = sim
        np.fill_diagonal(m, 1.0)
    elif mode == "knn":
        m = knn_select(sim, k)
    else:
        raise ValueError(f"unknown similarity mode {mode!r}")
    return Mask(SIMILARITY, m)


def build_masks(nb: Neighbourhood, g: HinGraph, edges, index: SimilarityIndex,
                mode: str = "weighted", k: int = 3,
                rng: np.random.Generator | None = None) -> MaskSet:
    sides = assign_sides(nb, edges, rng=rng)
    return MaskSet(
        build_induced_mask(nb, edges),
        build_similarity_mask(nb, g, mode=mode, k=k, index=index),
        build_cross_mask(sides),
        build_complete_mask(len(nb)),
    )
