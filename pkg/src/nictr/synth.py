"""Synthetic four-type HIN with planted, graph-dependent click labels."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .hin import MULTI_HOT, ONE_HOT, FeatureGroup, FeatureSchema, HinGraph, SparseFeatureVector, dump_schema, write_graph
from .train import Instance, write_instances

USER, ITEM, PUBLISHER, ARTICLE = "user", "item", "publisher", "article"


@dataclass
class SynthConfig:
    users: int = 500
    items: int = 300
    publishers: int = 30
    articles: int = 300
    tag_space: int = 200
    tags_per_node: int = 5
    communities: int = 5
    topic_purity: float = 0.8        # chance a tag comes from the node's community topic
    subscriptions: int = 3           # user-publisher edges per user
    item_clicks: int = 6             # historical user-item edges per user (mean)
    article_clicks: int = 4          # user-article edges per user
    in_community: float = 0.85       # chance an edge stays inside the user's community
    weights: tuple[float, float, float] = (1.0, 2.0, 1.0)
    positive_rate: float = 0.25
    temperature: float = 0.0         # 0 = labels are a hard threshold of the planted score
    noise: float = 0.0               # label flip probability
    train: int = 4000
    test: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.weights = tuple(float(w) for w in self.weights)
        for name in ("users", "items", "publishers", "articles", "tag_space", "communities",
                     "tags_per_node", "train", "test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("topic_purity", "in_community", "positive_rate", "noise"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.tags_per_node > self.tag_space:
            raise ValueError("tags_per_node exceeds tag_space")


def synth_schema(cfg: SynthConfig) -> FeatureSchema:
    tags = FeatureGroup("tags", cfg.tag_space, MULTI_HOT)
    cat = FeatureGroup("category", cfg.communities, ONE_HOT)
    groups = {
        USER: [FeatureGroup("age", 8, ONE_HOT), tags],
        ITEM: [cat, tags],
        PUBLISHER: [cat],
        ARTICLE: [cat, tags],
    }
    shared = {
        (USER, ITEM): [(1, 1)], (USER, ARTICLE): [(1, 1)], (ITEM, ARTICLE): [(0, 0), (1, 1)],
        (ITEM, PUBLISHER): [(0, 0)], (ARTICLE, PUBLISHER): [(0, 0)],
    }
    return FeatureSchema(groups, shared)


@dataclass
class SynthData:
    config: SynthConfig
    graph: HinGraph
    train: list[Instance]
    test: list[Instance]
    community: np.ndarray = field(repr=False)
    planted: dict = field(repr=False, default_factory=dict)


def _tags(rng, comm: int, cfg: SynthConfig) -> np.ndarray:
    width = cfg.tag_space // cfg.communities
    lo = comm * width
    out: set[int] = set()
    while len(out) < cfg.tags_per_node:
        if rng.random() < cfg.topic_purity and width > 0:
            out.add(int(lo + rng.integers(width)))
        else:
            out.add(int(rng.integers(cfg.tag_space)))
    return np.array(sorted(out), dtype=np.int64)


def _pick(rng, pool_by_comm, everything, comm, p_in):
    pool = pool_by_comm[comm] if rng.random() < p_in and len(pool_by_comm[comm]) else everything
    return int(pool[rng.integers(len(pool))])


def generate(cfg: SynthConfig) -> SynthData:
    rng = np.random.default_rng(cfg.seed)
    C = cfg.communities
    ids, types, feats, comm = [], [], [], []

    def add(prefix, ntype, count, make):
        start = len(ids)
        for k in range(count):
            c, fv = make(k)
            ids.append(f"{prefix}{k}")
            types.append(ntype)
            feats.append(fv)
            comm.append(c)
        return np.arange(start, start + count)

    one = lambda j: (np.array([j], dtype=np.int64), np.ones(1))
    multi = lambda idx: (idx, np.ones(len(idx)))

    def make_publisher(k):
        c = k % C
        return c, SparseFeatureVector((one(c),))

    pubs = add("p", PUBLISHER, cfg.publishers, make_publisher)
    pub_comm = np.array([comm[p] for p in pubs])
    pub_of = {}

    def make_content(k):
        p = int(pubs[rng.integers(len(pubs))])
        c = int(pub_comm[p - pubs[0]])
        return c, SparseFeatureVector((one(c), multi(_tags(rng, c, cfg)))), p

    def add_content(prefix, ntype, count):
        nodes = []
        for k in range(count):
            c, fv, p = make_content(k)
            nid = len(ids)
            ids.append(f"{prefix}{k}")
            types.append(ntype)
            feats.append(fv)
            comm.append(c)
            pub_of[nid] = p
            nodes.append(nid)
        return np.array(nodes)

    items = add_content("i", ITEM, cfg.items)
    articles = add_content("a", ARTICLE, cfg.articles)

    def make_user(k):
        c = int(rng.integers(C))
        return c, SparseFeatureVector((one(int(rng.integers(8))), multi(_tags(rng, c, cfg))))

    users = add("u", USER, cfg.users, make_user)
    comm = np.array(comm)

    by_comm = lambda nodes: [nodes[comm[nodes] == c] for c in range(C)]
    pubs_c, items_c, arts_c = by_comm(pubs), by_comm(items), by_comm(articles)
    edges = set()
    for node, p in pub_of.items():
        edges.add((min(node, p), max(node, p)))
    subscribed = {int(u): set() for u in users}
    for u in users:
        cu = comm[u]
        for _ in range(cfg.subscriptions):
            p = _pick(rng, pubs_c, pubs, cu, cfg.in_community)
            subscribed[int(u)].add(p)
            edges.add((min(u, p), max(u, p)))
        for _ in range(max(0, int(rng.poisson(cfg.item_clicks)))):
            v = _pick(rng, items_c, items, cu, cfg.in_community)
            edges.add((min(u, v), max(u, v)))
        for _ in range(cfg.article_clicks):
            a = _pick(rng, arts_c, articles, cu, cfg.in_community)
            edges.add((min(u, a), max(u, a)))

    g = HinGraph(synth_schema(cfg), ids, types, feats, sorted(edges))

    # planted score on candidate pairs that are not historical clicks
    total = cfg.train + cfg.test
    pairs, seen = [], set()
    while len(pairs) < total:
        u = int(users[rng.integers(len(users))])
        v = int(items[rng.integers(len(items))])
        if (u, v) in seen or (min(u, v), max(u, v)) in edges:
            continue
        seen.add((u, v))
        pairs.append((u, v))
    w1, w2, w3 = cfg.weights
    tags = {n: set(feats[n].groups[1][0].tolist()) for n in np.concatenate([users, items])}
    raw = np.array([
        w1 * float(comm[u] == comm[v])
        + w2 * len(tags[u] & tags[v]) / np.sqrt(len(tags[u]) * len(tags[v]))
        + w3 * float(pub_of[v] in subscribed[u])
        for u, v in pairs])
    bias = -float(np.quantile(raw, 1.0 - cfg.positive_rate))
    logit = raw + bias
    if cfg.temperature > 0:
        y = (rng.random(total) < 1.0 / (1.0 + np.exp(-logit / cfg.temperature))).astype(int)
    else:
        y = (logit > 0).astype(int)
    flip = rng.random(total) < cfg.noise
    y = np.where(flip, 1 - y, y)
    order = rng.permutation(total)
    inst = [Instance(pairs[i][0], pairs[i][1], int(y[i])) for i in order]
    return SynthData(cfg, g, inst[:cfg.train], inst[cfg.train:], comm,
                     {"score": raw[order], "bias": bias})


FILES = {"nodes": "nodes.tsv", "edges": "edges.tsv", "schema": "schema.yaml",
         "train": "train.tsv", "test": "test.tsv"}


def write(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: out / v for k, v in FILES.items()}
    write_graph(data.graph, paths["nodes"], paths["edges"])
    paths["schema"].write_text(dump_schema(data.graph.schema), encoding="utf-8")
    write_instances(paths["train"], data.graph, data.train)
    write_instances(paths["test"], data.graph, data.test)
    return paths


def synth(config: SynthConfig, out_dir: str | Path) -> dict[str, Path]:
    """Generate and write node, edge, schema, train and test files."""
    return write(generate(config), out_dir)


def config_dict(cfg: SynthConfig) -> dict:
    d = asdict(cfg)
    d["weights"] = list(cfg.weights)
    return d
