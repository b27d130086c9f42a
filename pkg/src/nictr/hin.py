"""Heterogeneous information network store.

Nodes carry grouped sparse categorical features; edges are undirected and
untyped (the edge type is implied by the endpoint types).
"""
from __future__ import annotations

import hashlib
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import scipy.sparse as sp
import yaml


class GraphFormatError(ValueError):
    """Raised for malformed schema, node or edge input."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


ONE_HOT = "one"
MULTI_HOT = "multi"


@dataclass(frozen=True)
class FeatureGroup:
    name: str
    dim: int
    kind: str = MULTI_HOT


@dataclass
class FeatureSchema:
    """Node types, their feature groups and the shared-group registry.

    ``shared`` maps an ordered type pair ``(a, b)`` to a list of
    ``(group index in a, group index in b)`` pairs. The registry is kept
    symmetric and every type shares all of its groups with itself.
    """

    groups: dict[str, list[FeatureGroup]]
    shared: dict[tuple[str, str], list[tuple[int, int]]] = field(default_factory=dict)

    def __post_init__(self):
        for t, groups in self.groups.items():
            names = [g.name for g in groups]
            if len(set(names)) != len(names):
                raise GraphFormatError(f"duplicate group name in type {t!r}")
            for g in groups:
                if g.dim < 1:
                    raise GraphFormatError(f"group {t}.{g.name} has dimension {g.dim} < 1")
                if g.kind not in (ONE_HOT, MULTI_HOT):
                    raise GraphFormatError(f"group {t}.{g.name}: unknown encoding {g.kind!r}")
        shared: dict[tuple[str, str], list[tuple[int, int]]] = {}
        for (a, b), pairs in self.shared.items():
            for t in (a, b):
                if t not in self.groups:
                    raise GraphFormatError(f"shared groups reference unknown type {t!r}")
            if a == b:
                continue
            for ia, ib in pairs:
                ga, gb = self.groups[a][ia], self.groups[b][ib]
                if ga.dim != gb.dim:
                    raise GraphFormatError(
                        f"shared groups {a}.{ga.name} and {b}.{gb.name} differ in dimension"
                    )
            fwd = shared.setdefault((a, b), [])
            bwd = shared.setdefault((b, a), [])
            for ia, ib in pairs:
                if (ia, ib) not in fwd:
                    fwd.append((ia, ib))
                    bwd.append((ib, ia))
        for t, groups in self.groups.items():
            shared[(t, t)] = [(i, i) for i in range(len(groups))]
        self.shared = shared

    @property
    def node_types(self) -> list[str]:
        return list(self.groups)

    def group_index(self, node_type: str, name: str) -> int:
        for i, g in enumerate(self.groups[node_type]):
            if g.name == name:
                return i
        raise KeyError(f"type {node_type!r} has no group {name!r}")

    def digest(self) -> str:
        """Stable hash of the schema, stored in checkpoints."""
        return hashlib.sha256(dump_schema(self).encode("utf-8")).hexdigest()[:16]


def shared_group_indices(schema: FeatureSchema, t_a: str, t_b: str) -> tuple[list[int], list[int]]:
    """Aligned group indices shared by two node types (in ``t_a`` and in ``t_b``)."""
    for t in (t_a, t_b):
        if t not in schema.groups:
            raise KeyError(f"unknown node type {t!r}")
    pairs = schema.shared.get((t_a, t_b), [])
    return [a for a, _ in pairs], [b for _, b in pairs]


def parse_schema(text: str, path: str | None = None) -> FeatureSchema:
    """Parse the YAML schema document.

    Grammar::

        node_types:
          <type>:
            - {name: <group>, dim: <int>, kind: one|multi}
        shared:
          - {types: [<type_a>, <type_b>], groups: [<group>, ...]}
          - {types: [<type_a>, <type_b>], groups: [[<group in a>, <group in b>], ...]}
    """
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise GraphFormatError(f"invalid YAML: {exc}", path) from exc
    if "node_types" not in doc or not isinstance(doc["node_types"], dict):
        raise GraphFormatError("schema needs a 'node_types' mapping", path)
    groups: dict[str, list[FeatureGroup]] = {}
    for t, entries in doc["node_types"].items():
        groups[str(t)] = [
            FeatureGroup(str(e["name"]), int(e["dim"]), str(e.get("kind", MULTI_HOT)))
            for e in (entries or [])
        ]
    shared: dict[tuple[str, str], list[tuple[int, int]]] = {}
    for entry in doc.get("shared", []) or []:
        a, b = (str(t) for t in entry["types"])
        for t in (a, b):
            if t not in groups:
                raise GraphFormatError(f"shared groups reference unknown type {t!r}", path)
        pairs = []
        for g in entry.get("groups", []):
            ga, gb = (g, g) if isinstance(g, str) else g
            try:
                pairs.append((_index_of(groups[a], ga), _index_of(groups[b], gb)))
            except KeyError as exc:
                raise GraphFormatError(str(exc), path) from exc
        shared.setdefault((a, b), []).extend(pairs)
    return FeatureSchema(groups, shared)


def _index_of(groups: list[FeatureGroup], name: str) -> int:
    for i, g in enumerate(groups):
        if g.name == name:
            return i
    raise KeyError(f"unknown group {name!r}")


def load_schema(path: str | Path) -> FeatureSchema:
    return parse_schema(Path(path).read_text(encoding="utf-8"), str(path))


def dump_schema(schema: FeatureSchema) -> str:
    doc = {
        "node_types": {
            t: [{"name": g.name, "dim": g.dim, "kind": g.kind} for g in groups]
            for t, groups in schema.groups.items()
        },
        "shared": [],
    }
    types = schema.node_types
    for i, a in enumerate(types):
        for b in types[i + 1:]:
            pairs = schema.shared.get((a, b), [])
            if pairs:
                doc["shared"].append({
                    "types": [a, b],
                    "groups": [[schema.groups[a][x].name, schema.groups[b][y].name] for x, y in pairs],
                })
    return yaml.safe_dump(doc, sort_keys=False)


@dataclass(frozen=True)
class SparseFeatureVector:
    """Per-group sorted ``(indices, values)`` arrays for one node."""

    groups: tuple[tuple[np.ndarray, np.ndarray], ...]

    def group(self, i: int) -> dict[int, float]:
        idx, val = self.groups[i]
        return dict(zip(idx.tolist(), val.tolist()))


class HinGraph:
    """Immutable undirected heterogeneous graph.

    Node ids are interned to dense integers in file order; ``ids[i]`` maps
    back. Per-type feature matrices are stored as CSR blocks
    (``features[type][group]``, one row per node of that type).
    """

    def __init__(self, schema: FeatureSchema, ids: list[str], types: list[str],
                 feats: list[SparseFeatureVector], edges: Iterable[tuple[int, int]]):
        self.schema = schema
        self.ids = list(ids)
        self.index = {nid: i for i, nid in enumerate(self.ids)}
        self.type_names = schema.node_types
        type_code = {t: k for k, t in enumerate(self.type_names)}
        self.node_type = np.array([type_code[t] for t in types], dtype=np.int64)
        self._feats = list(feats)

        n = len(self.ids)
        pairs = {(min(a, b), max(a, b)) for a, b in edges if a != b}
        self.edge_list = sorted(pairs)
        if self.edge_list:
            e = np.array(self.edge_list, dtype=np.int64)
            rows = np.concatenate([e[:, 0], e[:, 1]])
            cols = np.concatenate([e[:, 1], e[:, 0]])
        else:
            rows = cols = np.zeros(0, dtype=np.int64)
        self.adjacency = sp.csr_matrix(
            (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
        self.adjacency.sort_indices()

        # row of each node inside its type's feature block
        self.type_row = np.zeros(n, dtype=np.int64)
        self.type_members: dict[str, np.ndarray] = {}
        for k, t in enumerate(self.type_names):
            members = np.flatnonzero(self.node_type == k)
            self.type_members[t] = members
            self.type_row[members] = np.arange(len(members))
        self.features: dict[str, list[sp.csr_matrix]] = {}
        for t in self.type_names:
            members = self.type_members[t]
            blocks = []
            for gi, grp in enumerate(schema.groups[t]):
                indptr = [0]
                indices, data = [], []
                for m in members:
                    idx, val = self._feats[m].groups[gi]
                    indices.append(idx)
                    data.append(val)
                    indptr.append(indptr[-1] + len(idx))
                blocks.append(sp.csr_matrix(
                    (np.concatenate(data) if data else np.zeros(0),
                     np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64),
                     np.array(indptr)),
                    shape=(len(members), grp.dim)))
            self.features[t] = blocks

    @property
    def num_nodes(self) -> int:
        return len(self.ids)

    @property
    def num_edges(self) -> int:
        return len(self.edge_list)

    def type_of(self, i: int) -> str:
        return self.type_names[self.node_type[i]]

    def feature_vector(self, i: int) -> SparseFeatureVector:
        return self._feats[i]

    def adj(self, i: int) -> np.ndarray:
        a = self.adjacency
        return a.indices[a.indptr[i]:a.indptr[i + 1]]

    def degree(self, i: int, node_type: str | None = None) -> int:
        nb = self.adj(i)
        if node_type is None:
            return len(nb)
        return int(np.count_nonzero(self.node_type[nb] == self.type_names.index(node_type)))

    def resolve(self, node: str | int) -> int:
        if isinstance(node, (int, np.integer)):
            if not 0 <= node < self.num_nodes:
                raise KeyError(f"unknown node index {node}")
            return int(node)
        try:
            return self.index[node]
        except KeyError:
            raise KeyError(f"unknown node id {node!r}") from None

    def counts(self) -> dict[str, Counter]:
        nodes = Counter(self.type_of(i) for i in range(self.num_nodes))
        edges = Counter(
            tuple(sorted((self.type_of(a), self.type_of(b)))) for a, b in self.edge_list)
        return {"nodes": nodes, "edges": edges}


def neighbors(g: HinGraph, node: str | int, type_filter: str | None = None) -> list[int]:
    """Sorted neighbour indices of ``node``, optionally restricted to one type."""
    i = g.resolve(node)
    nb = g.adj(i)
    if type_filter is not None:
        if type_filter not in g.type_names:
            raise KeyError(f"unknown node type {type_filter!r}")
        nb = nb[g.node_type[nb] == g.type_names.index(type_filter)]
    return nb.tolist()


def _parse_features(field_text: str, schema: FeatureSchema, node_type: str,
                    path: str, lineno: int) -> SparseFeatureVector:
    groups = schema.groups[node_type]
    per_group: list[dict[int, float]] = [{} for _ in groups]
    names = {g.name: i for i, g in enumerate(groups)}
    for token in filter(None, (t.strip() for t in field_text.split(","))):
        parts = token.split(":")
        if len(parts) not in (2, 3):
            raise GraphFormatError(f"bad feature token {token!r}", path, lineno)
        gname = parts[0]
        if gname not in names:
            raise GraphFormatError(f"type {node_type!r} has no group {gname!r}", path, lineno)
        gi = names[gname]
        try:
            idx = int(parts[1])
            val = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError:
            raise GraphFormatError(f"bad feature token {token!r}", path, lineno) from None
        if not 0 <= idx < groups[gi].dim:
            raise GraphFormatError(
                f"index {idx} out of range for group {gname!r} (dim {groups[gi].dim})", path, lineno)
        if not 0.0 < val <= 1.0:
            raise GraphFormatError(f"feature value {val} outside (0, 1]", path, lineno)
        if idx in per_group[gi]:
            raise GraphFormatError(f"duplicate index {idx} in group {gname!r}", path, lineno)
        per_group[gi][idx] = val
    out = []
    for grp, entries in zip(groups, per_group):
        if grp.kind == ONE_HOT and len(entries) != 1:
            raise GraphFormatError(
                f"one-hot group {grp.name!r} has {len(entries)} entries", path, lineno)
        idx = np.array(sorted(entries), dtype=np.int64)
        out.append((idx, np.array([entries[j] for j in idx.tolist()], dtype=np.float64)))
    return SparseFeatureVector(tuple(out))


def _data_lines(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line


def load_graph(node_path: str | Path, edge_path: str | Path, schema: FeatureSchema,
               stats: dict | None = None) -> HinGraph:
    """Read node and edge files into a validated :class:`HinGraph`.

    Duplicate edges are dropped; if ``stats`` is given it receives the
    per-type node/edge counts and the number of duplicates removed.
    """
    node_path, edge_path = Path(node_path), Path(edge_path)
    ids: list[str] = []
    types: list[str] = []
    feats: list[SparseFeatureVector] = []
    seen: set[str] = set()
    for lineno, line in _data_lines(node_path):
        cols = line.split("\t")
        if len(cols) not in (2, 3):
            raise GraphFormatError("expected 'id<TAB>type<TAB>features'", str(node_path), lineno)
        nid, ntype = cols[0], cols[1]
        if ntype not in schema.groups:
            raise GraphFormatError(f"unknown node type {ntype!r}", str(node_path), lineno)
        if nid in seen:
            raise GraphFormatError(f"duplicate node id {nid!r}", str(node_path), lineno)
        seen.add(nid)
        feats.append(_parse_features(cols[2] if len(cols) == 3 else "", schema, ntype,
                                     str(node_path), lineno))
        ids.append(nid)
        types.append(ntype)
    index = {nid: i for i, nid in enumerate(ids)}
    edges = []
    for lineno, line in _data_lines(edge_path):
        cols = line.split("\t")
        if len(cols) != 2:
            raise GraphFormatError("expected 'src<TAB>dst'", str(edge_path), lineno)
        try:
            a, b = index[cols[0]], index[cols[1]]
        except KeyError as exc:
            raise GraphFormatError(f"edge references missing node {exc.args[0]!r}",
                                   str(edge_path), lineno) from None
        if a == b:
            raise GraphFormatError("self-edge", str(edge_path), lineno)
        edges.append((a, b))
    g = HinGraph(schema, ids, types, feats, edges)
    if stats is not None:
        stats.update(g.counts())
        stats["duplicate_edges"] = len(edges) - g.num_edges
    return g


def format_features(schema: FeatureSchema, node_type: str, fv: SparseFeatureVector) -> str:
    tokens = []
    for grp, (idx, val) in zip(schema.groups[node_type], fv.groups):
        for j, x in zip(idx.tolist(), val.tolist()):
            tokens.append(f"{grp.name}:{j}" if x == 1.0 else f"{grp.name}:{j}:{x!r}")
    return ",".join(tokens)


def write_graph(g: HinGraph, node_path: str | Path, edge_path: str | Path) -> None:
    buf = io.StringIO()
    for i, nid in enumerate(g.ids):
        t = g.type_of(i)
        buf.write(f"{nid}\t{t}\t{format_features(g.schema, t, g.feature_vector(i))}\n")
    Path(node_path).write_text(buf.getvalue(), encoding="utf-8")
    Path(edge_path).write_text(
        "".join(f"{g.ids[a]}\t{g.ids[b]}\n" for a, b in g.edge_list), encoding="utf-8")
