"""Neighbour samplers and neighbourhood assembly for a (user, item) pair."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .hin import HinGraph

U_SIDE = "u"
V_SIDE = "v"
BOTH = "both"


@dataclass
class SamplerBudget:
    """Per-type sampling budgets for :func:`ghn_sample`.

    Targets are not charged against their own type's budget.
    """

    sizes: dict[str, int]
    max_hops: int = 4
    seed: int = 0

    def __post_init__(self):
        if any(s < 0 for s in self.sizes.values()):
            raise ValueError("budgets must be non-negative")
        if not any(s > 0 for s in self.sizes.values()):
            raise ValueError("at least one type needs a positive budget")
        if self.max_hops < 1:
            raise ValueError("max_hops must be >= 1")

    @classmethod
    def parse(cls, text: str, **kwargs) -> "SamplerBudget":
        """Parse ``"user=4,item=4"``."""
        sizes = {}
        for part in filter(None, (p.strip() for p in text.split(","))):
            name, _, count = part.partition("=")
            if not count:
                raise ValueError(f"bad budget entry {part!r}; expected type=count")
            sizes[name.strip()] = int(count)
        return cls(sizes, **kwargs)


def exponential_keys_sample(candidates: np.ndarray, weights: np.ndarray, k: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Weighted sample of ``k`` candidates without replacement.

    One uniform is drawn per candidate; the ``k`` smallest keys
    ``-ln(u) / w`` win (ties resolved by candidate position).
    """
    if k >= len(candidates):
        return candidates.copy()
    u = rng.random(len(candidates))
    keys = -np.log1p(-u) / weights
    order = np.argsort(keys, kind="stable")
    return candidates[np.sort(order[:k])]


def ghn_sample(g: HinGraph, target, budget: SamplerBudget,
               rng: np.random.Generator | None = None) -> dict[int, int]:
    """Greedy heterogeneous neighbour sampling.

    Expands hop by hop from ``target``. At each hop the candidates are the
    unvisited neighbours of the previous hop's picks; for each type with
    remaining budget, candidates are drawn without replacement with weight
    equal to their number of edges into the already-sampled set. Stops when
    every budget is met, nothing new was picked, or ``max_hops`` is reached.

    Returns ``{node index: hop}`` including the target at hop 0.
    """
    r = g.resolve(target)
    if rng is None:
        rng = np.random.default_rng(budget.seed)
    unknown = set(budget.sizes) - set(g.type_names)
    if unknown:
        raise KeyError(f"budget names unknown node types {sorted(unknown)}")
    sizes = np.array([budget.sizes.get(t, 0) for t in g.type_names], dtype=np.int64)
    taken = np.zeros(len(sizes), dtype=np.int64)
    sampled = {r: 0}
    reach = [g.adj(r)]      # neighbour lists of every sampled node
    frontier = [r]
    for hop in range(1, budget.max_hops + 1):
        if np.all(taken >= sizes):
            break
        cand = np.unique(np.concatenate([g.adj(i) for i in frontier]))
        cand = cand[[c not in sampled for c in cand.tolist()]] if len(cand) else cand
        if len(cand) == 0:
            break
        # f_t: edges from each candidate into the sampled set
        touched, counts = np.unique(np.concatenate(reach), return_counts=True)
        f = counts[np.searchsorted(touched, cand)].astype(np.float64)
        f[f == 0] = 1.0
        picked = []
        ctype = g.node_type[cand]
        for k in range(len(sizes)):
            room = sizes[k] - taken[k]
            if room <= 0:
                continue
            sel = ctype == k
            if not sel.any():
                continue
            chosen = exponential_keys_sample(cand[sel], f[sel], int(room), rng)
            taken[k] += len(chosen)
            picked.append(chosen)
        if not picked:
            break
        frontier = np.sort(np.concatenate(picked)).tolist()
        for i in frontier:
            sampled[i] = hop
            reach.append(g.adj(i))
    return sampled


def node_wise_sample(g: HinGraph, target, fanout: int, depth: int, seed: int = 0,
                     rng: np.random.Generator | None = None) -> dict[int, int]:
    """Recursive uniform neighbour sampling (GraphSAGE style).

    Every frontier node draws up to ``fanout`` neighbours uniformly without
    replacement; the next frontier is the set of newly reached nodes.
    """
    if fanout < 1 or depth < 1:
        raise ValueError("fanout and depth must be >= 1")
    r = g.resolve(target)
    if rng is None:
        rng = np.random.default_rng(seed)
    sampled = {r: 0}
    frontier = [r]
    for hop in range(1, depth + 1):
        nxt = []
        for i in frontier:
            nb = g.adj(i)
            if len(nb) > fanout:
                nb = np.sort(rng.choice(nb, size=fanout, replace=False))
            for j in nb.tolist():
                if j not in sampled:
                    sampled[j] = hop
                    nxt.append(j)
        if not nxt:
            break
        frontier = nxt
    return sampled


def metapath_sample(g: HinGraph, target, metapaths: Sequence[Sequence[str]],
                    walks_per_path: int, seed: int = 0,
                    rng: np.random.Generator | None = None) -> dict[int, int]:
    """Random walks constrained to type sequences, e.g. ``["user", "publisher", "item"]``.

    Each metapath gets ``walks_per_path`` walks from the target; a walk stops
    early when the current node has no neighbour of the next type.
    """
    r = g.resolve(target)
    ttype = g.type_of(r)
    for path in metapaths:
        if not path or path[0] != ttype:
            raise ValueError(f"metapath {list(path)} does not start at target type {ttype!r}")
        for t in path:
            if t not in g.type_names:
                raise KeyError(f"unknown node type {t!r} in metapath")
    if rng is None:
        rng = np.random.default_rng(seed)
    sampled = {r: 0}
    for path in metapaths:
        codes = [g.type_names.index(t) for t in path[1:]]
        for _ in range(walks_per_path):
            cur = r
            for hop, code in enumerate(codes, 1):
                nb = g.adj(cur)
                nb = nb[g.node_type[nb] == code]
                if len(nb) == 0:
                    break
                cur = int(nb[rng.integers(len(nb))])
                if cur not in sampled or sampled[cur] > hop:
                    sampled[cur] = hop
    return sampled


@dataclass
class Neighbourhood:
    """Merged node list for one (u, v) pair.

    ``nodes[0]`` is u and ``nodes[1]`` is v; the rest follow in
    (hop, index) order. ``sides[i]`` is one of ``"u"``, ``"v"``, ``"both"``.
    """

    u: int
    v: int
    nodes: list[int]
    sides: list[str]
    hops: list[int]
    _pos: dict[int, int] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self._pos = {nid: i for i, nid in enumerate(self.nodes)}
        if len(self._pos) != len(self.nodes):
            raise ValueError("neighbourhood contains duplicate nodes")
        if self.nodes[:2] != [self.u, self.v]:
            raise ValueError("neighbourhood must start with u, v")

    def __len__(self) -> int:
        return len(self.nodes)

    def position(self, node: int) -> int:
        return self._pos[node]


def merge_neighbourhoods(u_set: Mapping[int, int], v_set: Mapping[int, int],
                         u: int, v: int) -> Neighbourhood:
    """Union of two sampled sets with side flags; u, v first, then by (hop, id)."""
    if u not in u_set or v not in v_set:
        raise ValueError("each target must belong to its own sampled set")
    hop = {}
    side = {}
    for nid, h in u_set.items():
        hop[nid] = h
        side[nid] = U_SIDE
    for nid, h in v_set.items():
        if nid in side:
            side[nid] = BOTH
            hop[nid] = min(hop[nid], h)
        else:
            hop[nid] = h
            side[nid] = V_SIDE
    rest = sorted((n for n in hop if n not in (u, v)), key=lambda n: (hop[n], n))
    order = [u, v] + rest
    return Neighbourhood(u, v, order, [side[n] for n in order], [hop[n] for n in order])


def induced_edges(g: HinGraph, nb: Neighbourhood) -> list[tuple[int, int]]:
    """Edges of ``g`` inside the neighbourhood as local ``(i, j)`` pairs, ``i < j``."""
    out = []
    for i, node in enumerate(nb.nodes):
        for j in g.adj(node).tolist():
            pj = nb._pos.get(j)
            if pj is not None and pj > i:
                out.append((i, pj))
    return sorted(out)


SAMPLERS = ("ghn", "nodewise", "metapath")


@dataclass
class SamplerConfig:
    """Which sampler to use for both targets, with its parameters."""

    kind: str = "ghn"
    budgets: dict[str, int] = field(default_factory=lambda: {"user": 4, "item": 4,
                                                              "publisher": 2, "article": 2})
    max_hops: int = 4
    fanout: int = 3
    depth: int = 2
    metapaths: list[list[str]] = field(default_factory=list)
    walks_per_path: int = 4

    def __post_init__(self):
        if self.kind not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.kind!r}; expected one of {SAMPLERS}")

    def sample(self, g: HinGraph, target: int, rng: np.random.Generator) -> dict[int, int]:
        if self.kind == "ghn":
            sizes = {t: s for t, s in self.budgets.items() if t in g.type_names}
            return ghn_sample(g, target, SamplerBudget(sizes, self.max_hops), rng=rng)
        if self.kind == "nodewise":
            return node_wise_sample(g, target, self.fanout, self.depth, rng=rng)
        ttype = g.type_of(target)
        paths = [p for p in self.metapaths if p and p[0] == ttype]
        if not paths:
            return {target: 0}
        return metapath_sample(g, target, paths, self.walks_per_path, rng=rng)

    def neighbourhood(self, g: HinGraph, u: int, v: int, rng: np.random.Generator) -> Neighbourhood:
        return merge_neighbourhoods(self.sample(g, u, rng), self.sample(g, v, rng), u, v)
