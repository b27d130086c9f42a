"""Graph-masked transformer for (user, item) neighbourhoods."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import numeric as nm
from .hin import FeatureSchema, HinGraph
from .interaction import MASK_KINDS, FeaturePartition, MaskSet
from .sampler import Neighbourhood

READOUT_MODES = ("targets-input", "targets-final")


@dataclass
class ModelConfig:
    hidden: int = 32          # d
    heads: int = 8            # H, split evenly across the active mask kinds
    layers: int = 2           # L
    ffn: int = 64             # d_ff
    embed: int = 8            # width of each feature-group embedding
    mlp_hidden: int = 32
    readout: str = "targets-input"
    shared_output_proj: bool = False
    active_kinds: tuple[str, ...] = MASK_KINDS
    context_dim: int = 0

    def __post_init__(self):
        self.active_kinds = tuple(k for k in MASK_KINDS if k in set(self.active_kinds))
        if not self.active_kinds:
            raise ValueError("at least one mask kind must be active")
        if self.heads % 4:
            raise ValueError("heads must be divisible by 4")
        if self.hidden % self.heads:
            raise ValueError("hidden size must be divisible by heads")
        if self.readout not in READOUT_MODES:
            raise ValueError(f"unknown readout {self.readout!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads

    def head_kinds(self) -> list[str]:
        """Mask kind used by each head: contiguous, evenly sized groups."""
        k = self.active_kinds
        return [k[h * len(k) // self.heads] for h in range(self.heads)]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["active_kinds"] = list(self.active_kinds)
        return d


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


@dataclass
class ModelParams:
    """Named weight arrays, in a fixed creation order."""

    config: ModelConfig
    schema: FeatureSchema
    node_input: dict[str, list[int]]
    u_type: str
    v_type: str
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def input_width(self, t: str) -> int:
        return self.config.embed * len(self.node_input.get(t, []))

    def readout_width(self) -> int:
        c = self.config
        if c.readout == "targets-input":
            return c.hidden + self.input_width(self.u_type) + self.input_width(self.v_type) + c.context_dim
        return 3 * c.hidden + c.context_dim

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.schema, self.node_input, self.u_type, self.v_type,
                           {k: v.copy() for k, v in self.arrays.items()})

    def num_parameters(self) -> int:
        return sum(a.size for a in self.arrays.values())


def init_params(config: ModelConfig, schema: FeatureSchema, partition: FeaturePartition,
                u_type: str, v_type: str, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    p = ModelParams(config, schema, {t: list(partition.node_input.get(t, [])) for t in schema.node_types},
                    u_type, v_type)
    a = p.arrays
    d, dk, H = config.hidden, config.head_dim, config.heads
    for t in schema.node_types:
        for gi in p.node_input[t]:
            dim = schema.groups[t][gi].dim
            a[f"emb/{t}/{schema.groups[t][gi].name}"] = _glorot(rng, (config.embed, dim), dim, config.embed)
        dx = p.input_width(t)
        a[f"in/{t}/W"] = _glorot(rng, (d, dx), dx, d)
        a[f"in/{t}/b"] = np.zeros(d)
    for layer in range(config.layers):
        pre = f"L{layer}"
        for proj in ("q", "k", "v"):
            for t in schema.node_types:
                a[f"{pre}/{proj}/{t}"] = _glorot(rng, (H, dk, d), d, dk)
        for t in (["shared"] if config.shared_output_proj else schema.node_types):
            a[f"{pre}/o/{t}"] = _glorot(rng, (d, d), d, d)
        a[f"{pre}/ln1/g"] = np.ones(d)
        a[f"{pre}/ln1/b"] = np.zeros(d)
        a[f"{pre}/ffn/W1"] = _glorot(rng, (config.ffn, d), d, config.ffn)
        a[f"{pre}/ffn/b1"] = np.zeros(config.ffn)
        a[f"{pre}/ffn/W2"] = _glorot(rng, (d, config.ffn), config.ffn, d)
        a[f"{pre}/ffn/b2"] = np.zeros(d)
        a[f"{pre}/ln2/g"] = np.ones(d)
        a[f"{pre}/ln2/b"] = np.zeros(d)
    dz = p.readout_width()
    a["head/W1"] = _glorot(rng, (config.mlp_hidden, dz), dz, config.mlp_hidden)
    a["head/b1"] = np.zeros(config.mlp_hidden)
    a["head/W2"] = _glorot(rng, (1, config.mlp_hidden), config.mlp_hidden, 1)
    a["head/b2"] = np.zeros(1)
    return p


@dataclass
class Batch:
    """Padded, flattened inputs for a list of neighbourhoods.

    Node ``j`` of instance ``b`` lives at flat row ``b * n + j``.
    """

    size: int
    n: int
    lengths: np.ndarray
    rows: dict[str, np.ndarray]            # type -> sorted flat rows
    features: dict[str, list[sp.csr_matrix]]  # type -> per node-input group block
    masks: np.ndarray                       # (4, B, n, n)
    context: np.ndarray                     # (B, c)
    u_rows: np.ndarray
    v_rows: np.ndarray

    @property
    def pool_weights(self) -> np.ndarray:
        w = np.zeros((self.size, self.n))
        for b, length in enumerate(self.lengths):
            w[b, :length] = 1.0 / length
        return w


def make_batch(g: HinGraph, params: ModelParams, items: Sequence[tuple[Neighbourhood, MaskSet, np.ndarray]]) -> Batch:
    B = len(items)
    lengths = np.array([len(nb) for nb, _, _ in items])
    n = int(lengths.max())
    masks = np.zeros((4, B, n, n))
    idx = np.arange(n)
    masks[:, :, idx, idx] = 1.0
    nodes_flat = np.full(B * n, -1, dtype=np.int64)
    c = params.config.context_dim
    context = np.zeros((B, c))
    for b, (nb, ms, ctx) in enumerate(items):
        if g.type_of(nb.u) != params.u_type or g.type_of(nb.v) != params.v_type:
            raise ValueError(f"instance {b}: targets must be ({params.u_type}, {params.v_type})")
        k = len(nb)
        if ms.n != k:
            raise nm.ShapeError(f"instance {b}: masks are {ms.n}x{ms.n} for {k} nodes")
        masks[:, b, :k, :k] = ms.stacked()
        nodes_flat[b * n:b * n + k] = nb.nodes
        ctx = np.asarray(ctx, dtype=np.float64).reshape(-1)
        if ctx.shape[0] != c:
            raise nm.ShapeError(f"instance {b}: context width {ctx.shape[0]} != {c}")
        context[b] = ctx
    valid = nodes_flat >= 0
    rows, feats = {}, {}
    codes = np.where(valid, g.node_type[np.maximum(nodes_flat, 0)], -1)
    for k, t in enumerate(g.type_names):
        r = np.flatnonzero(codes == k)
        rows[t] = r
        trow = g.type_row[nodes_flat[r]]
        feats[t] = [g.features[t][gi][trow] for gi in params.node_input.get(t, [])]
    starts = np.arange(B) * n
    return Batch(B, n, lengths, rows, feats, masks, context, starts, starts + 1)


def _tensors(tape: nm.Tape, params: ModelParams) -> dict[str, nm.Tensor]:
    return {k: tape.param(k, v) for k, v in params.arrays.items()}


def embed_inputs(P: dict[str, nm.Tensor], params: ModelParams, batch: Batch) -> dict[str, nm.Tensor]:
    """Per-type dense inputs: concatenated group embeddings ``W_i f_i``."""
    schema = params.schema
    out = {}
    for t in schema.node_types:
        m = len(batch.rows[t])
        groups = params.node_input.get(t, [])
        if m == 0:
            continue
        if not groups:
            out[t] = nm.Tensor(np.zeros((m, 0)))
            continue
        parts = [nm.sparse_linear(f, P[f"emb/{t}/{schema.groups[t][gi].name}"])
                 for gi, f in zip(groups, batch.features[t])]
        out[t] = parts[0] if len(parts) == 1 else nm.concat(parts, axis=1)
    return out


def type_transform(P, params: ModelParams, x: dict[str, nm.Tensor]) -> dict[str, nm.Tensor]:
    h = {}
    for t, xt in x.items():
        if xt.shape[1] == 0:
            h[t] = nm.add_bias(nm.Tensor(np.zeros((xt.shape[0], params.config.hidden))), P[f"in/{t}/b"])
        else:
            h[t] = nm.add_bias(nm.linear(xt, P[f"in/{t}/W"]), P[f"in/{t}/b"])
    return h


def _per_type(h: nm.Tensor, rows: dict[str, np.ndarray], weight_for, n_rows: int) -> nm.Tensor:
    parts, idxs = [], []
    for t, r in rows.items():
        if len(r) == 0:
            continue
        parts.append(nm.linear(nm.gather_rows(h, r), weight_for(t)))
        idxs.append(r)
    return nm.assemble_rows(parts, idxs, n_rows)


def gmt_layer(h: nm.Tensor, batch: Batch, P: dict[str, nm.Tensor], config: ModelConfig,
              layer: int, attention: list | None = None) -> nm.Tensor:
    """One graph-masked attention block on flat rows ``h`` of shape (B*n, d).

    Each head attends under the mask of its kind; Q/K/V and the output
    projection are chosen by the node type of the row. Post-norm residual
    blocks around attention and a ReLU feed-forward net.
    """
    B, n, d, H, dk = batch.size, batch.n, config.hidden, config.heads, config.head_dim
    N = B * n
    pre = f"L{layer}"
    proj = {}
    for name in ("q", "k", "v"):
        flat = _per_type(h, batch.rows, lambda t: nm.reshape(P[f"{pre}/{name}/{t}"], (H * dk, d)), N)
        proj[name] = nm.reshape(flat, (B, n, H * dk))
    kind_index = {k: i for i, k in enumerate(MASK_KINDS)}
    inv_scale = 1.0 / np.sqrt(d)
    heads = []
    for hi, kind in enumerate(config.head_kinds()):
        q = nm.slice_last(proj["q"], hi * dk, (hi + 1) * dk)
        k = nm.slice_last(proj["k"], hi * dk, (hi + 1) * dk)
        v = nm.slice_last(proj["v"], hi * dk, (hi + 1) * dk)
        logits = nm.scale(nm.matmul(q, nm.transpose(k)), inv_scale)
        alpha = nm.masked_softmax(logits, batch.masks[kind_index[kind]])
        if attention is not None:
            attention.append((layer, hi, kind, alpha.data))
        heads.append(nm.matmul(alpha, v))
    z = nm.reshape(nm.concat(heads, axis=-1), (N, d))
    if config.shared_output_proj:
        o = nm.linear(z, P[f"{pre}/o/shared"])
    else:
        o = _per_type(z, batch.rows, lambda t: P[f"{pre}/o/{t}"], N)
    h1 = nm.layer_norm(nm.add(h, o), P[f"{pre}/ln1/g"], P[f"{pre}/ln1/b"])
    f = nm.relu(nm.add_bias(nm.linear(h1, P[f"{pre}/ffn/W1"]), P[f"{pre}/ffn/b1"]))
    f = nm.add_bias(nm.linear(f, P[f"{pre}/ffn/W2"]), P[f"{pre}/ffn/b2"])
    return nm.layer_norm(nm.add(h1, f), P[f"{pre}/ln2/g"], P[f"{pre}/ln2/b"])


def _target_inputs(x: dict[str, nm.Tensor], batch: Batch, t: str, rows: np.ndarray) -> nm.Tensor:
    pos = np.searchsorted(batch.rows[t], rows)
    return nm.gather_rows(x[t], pos)


@dataclass
class ForwardOutput:
    logits: nm.Tensor      # (B, 1)
    probs: np.ndarray      # (B,)
    g: nm.Tensor           # (B, d) neighbourhood embeddings
    z: nm.Tensor           # (B*n, d) final node embeddings
    zo: nm.Tensor          # (B, readout width)
    attention: list | None = None


def forward(params: ModelParams, batch: Batch, tape: nm.Tape | None = None,
            record_attention: bool = False) -> ForwardOutput:
    config = params.config
    # without a tape nothing needs gradients, so nothing gets recorded
    P = _tensors(tape, params) if tape is not None else {k: nm.Tensor(v) for k, v in params.arrays.items()}
    x = embed_inputs(P, params, batch)
    h_t = type_transform(P, params, x)
    N = batch.size * batch.n
    present = [t for t in h_t]
    h = nm.assemble_rows([h_t[t] for t in present], [batch.rows[t] for t in present], N)
    attention = [] if record_attention else None
    for layer in range(config.layers):
        try:
            h = gmt_layer(h, batch, P, config, layer, attention)
        except nm.ShapeError as exc:
            raise nm.ShapeError(f"layer {layer}: {exc}") from exc
    g = nm.mean_rows(nm.reshape(h, (batch.size, batch.n, config.hidden)), batch.pool_weights)
    if config.readout == "targets-input":
        parts = [g, _target_inputs(x, batch, params.u_type, batch.u_rows),
                 _target_inputs(x, batch, params.v_type, batch.v_rows)]
    else:
        parts = [g, nm.gather_rows(h, batch.u_rows), nm.gather_rows(h, batch.v_rows)]
    if config.context_dim:
        parts.append(nm.Tensor(batch.context))
    parts = [p for p in parts if p.shape[1] > 0]
    zo = nm.concat(parts, axis=1)
    hid = nm.relu(nm.add_bias(nm.linear(zo, P["head/W1"]), P["head/b1"]))
    logits = nm.add_bias(nm.linear(hid, P["head/W2"]), P["head/b2"])
    probs = nm._sigmoid(logits.data[:, 0])
    return ForwardOutput(logits, probs, g, h, zo, attention)


def predict(g: HinGraph, params: ModelParams, nb: Neighbourhood, masks: MaskSet,
            context=None) -> ForwardOutput:
    """Score a single neighbourhood."""
    ctx = np.zeros(params.config.context_dim) if context is None else context
    return forward(params, make_batch(g, params, [(nb, masks, ctx)]))
