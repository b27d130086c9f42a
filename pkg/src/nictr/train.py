"""Losses, optimisers and the training loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numeric as nm
from .hin import HinGraph
from .interaction import (MASK_KINDS, SIMILARITY, FeaturePartition, SimilarityIndex, build_masks,
                          partition_feature_groups)
from .model import Batch, ModelConfig, ModelParams, forward, init_params, make_batch
from .sampler import SamplerConfig, induced_edges

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    pass


@dataclass(frozen=True)
class Instance:
    u: int
    v: int
    label: int
    context: tuple[float, ...] = ()


def read_instances(path: str | Path, g: HinGraph) -> list[Instance]:
    """Instance file: ``user_id<TAB>item_id<TAB>label[<TAB>c1,c2,...]``."""
    from .hin import GraphFormatError

    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) not in (3, 4):
                raise GraphFormatError("expected 'user<TAB>item<TAB>label[<TAB>context]'", str(path), lineno)
            try:
                u, v = g.resolve(cols[0]), g.resolve(cols[1])
            except KeyError as exc:
                raise GraphFormatError(str(exc.args[0]), str(path), lineno) from None
            if cols[2] not in ("0", "1"):
                raise GraphFormatError(f"label must be 0 or 1, got {cols[2]!r}", str(path), lineno)
            ctx = tuple(float(x) for x in cols[3].split(",") if x) if len(cols) == 4 else ()
            out.append(Instance(u, v, int(cols[2]), ctx))
    return out


def write_instances(path: str | Path, g: HinGraph, instances: Sequence[Instance]) -> None:
    lines = []
    for ins in instances:
        row = f"{g.ids[ins.u]}\t{g.ids[ins.v]}\t{ins.label}"
        if ins.context:
            row += "\t" + ",".join(repr(float(c)) for c in ins.context)
        lines.append(row + "\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


# ---------------------------------------------------------------- losses

def bce_loss(p: float, y: int) -> float:
    """Binary cross-entropy of one prediction."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"prediction {p} outside (0, 1)")
    if y not in (0, 1):
        raise ValueError(f"label {y} not in {{0, 1}}")
    return -math.log(p) if y == 1 else -math.log1p(-p)


def consistency_loss(samples, norm: str = "l2") -> float:
    """Mean over samples of ``||g_s - mean(g)|| / d_g``."""
    g = np.asarray(samples, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("expected an (S, d_g) array of embeddings")
    # shift by the first sample first so identical samples give exactly zero
    d0 = g - g[0]
    dev = d0 - d0.mean(axis=0)
    norms = np.sqrt((dev ** 2).sum(axis=1)) if norm == "l2" else np.abs(dev).sum(axis=1)
    return float(norms.mean() / g.shape[1])


def total_loss(bce: float, cr: float, gamma: float) -> float:
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    return bce + gamma * cr


def batch_loss(out, labels: np.ndarray, resamples: int, gamma: float, norm: str = "l2",
               consistency: bool = True):
    """Graph loss for a forward over ``B * S`` neighbourhoods (S consecutive per pair).

    Returns ``(total, bce, cr)`` tensors. BCE is averaged over all
    neighbourhoods; the consistency term over all pairs and samples.
    """
    S = resamples
    bce = nm.mean_all(nm.bce_with_logits(out.logits, labels.reshape(-1, 1)))
    if not consistency:
        return bce, bce, None
    rows, d = out.g.shape
    B = rows // S
    # (I - 11^T/S)(I - 1 e_1^T) G: the first factor removes sample 0 exactly,
    # so identical resamples give a deviation of exactly zero
    shift = np.eye(S)
    shift[:, 0] -= 1.0
    centre = np.eye(S) - np.full((S, S), 1.0 / S)
    tile = lambda m: nm.Tensor(np.broadcast_to(m, (B, S, S)).copy())
    dev = nm.matmul(tile(centre), nm.matmul(tile(shift), nm.reshape(out.g, (B, S, d))))
    cr = nm.scale(nm.sum_all(nm.row_norm(dev, 2 if norm == "l2" else 1)), 1.0 / (B * S * d))
    return nm.add(bce, nm.scale(cr, gamma)), bce, cr


# ---------------------------------------------------------------- optimisers

class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


# ---------------------------------------------------------------- config

@dataclass
class TrainConfig:
    lr: float = 0.005
    batch_size: int = 32
    epochs: int = 5
    resamples: int = 2                # S
    gamma: float = 0.1
    cr_norm: str = "l2"
    consistency: bool = True
    freeze_resamples: bool = False    # all S draws share one sampler seed
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    strategy: str = "S3"
    threshold: int = 1                # K_ts
    similarity_mode: str = "weighted"
    knn_k: int = 3
    eval_samples: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.sampler, dict):
            self.sampler = SamplerConfig(**self.sampler)
        if self.resamples < 1:
            raise ValueError("resamples (S) must be >= 1")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.lr < 0:
            raise ValueError("learning rate must be >= 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.cr_norm not in ("l1", "l2"):
            raise ValueError("cr_norm must be l1 or l2")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["model"] = self.model.to_dict()
        d["sampler"] = asdict(self.sampler)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------- pipeline

class Pipeline:
    """Turns instances into model batches: sample, merge, build masks."""

    def __init__(self, g: HinGraph, config: TrainConfig, partition: FeaturePartition | None = None):
        self.graph = g
        self.config = config
        self.partition = partition or partition_feature_groups(g.schema, config.strategy, config.threshold)
        self.index = SimilarityIndex(g, self.partition)

    def model_config(self) -> ModelConfig:
        mc = self.config.model
        if not self.partition.uses_similarity and SIMILARITY in mc.active_kinds:
            kinds = tuple(k for k in mc.active_kinds if k != SIMILARITY) or tuple(
                k for k in MASK_KINDS if k != SIMILARITY)
            mc = ModelConfig(**{**mc.to_dict(), "active_kinds": kinds})
        return mc

    def item(self, ins: Instance, rng: np.random.Generator):
        g, c = self.graph, self.config
        nb = c.sampler.neighbourhood(g, ins.u, ins.v, rng)
        edges = induced_edges(g, nb)
        masks = build_masks(nb, g, edges, self.index, c.similarity_mode, c.knn_k, rng)
        return nb, masks, np.asarray(ins.context, dtype=np.float64)

    def batch(self, params: ModelParams, instances: Sequence[Instance], seeds: Sequence[Sequence[int]]) -> Batch:
        items = [self.item(ins, np.random.default_rng(list(s))) for ins, s in zip(instances, seeds)]
        return make_batch(self.graph, params, items)


def new_params(pipeline: Pipeline, instances: Sequence[Instance]) -> ModelParams:
    g, c = pipeline.graph, pipeline.config
    mc = pipeline.model_config()
    ctx = {len(i.context) for i in instances}
    if len(ctx) > 1:
        raise ValueError("instances disagree on context width")
    mc = ModelConfig(**{**mc.to_dict(), "context_dim": ctx.pop() if ctx else 0})
    u_type, v_type = g.type_of(instances[0].u), g.type_of(instances[0].v)
    return init_params(mc, g.schema, pipeline.partition, u_type, v_type, seed=c.seed)


def score(g: HinGraph, params: ModelParams, instances: Sequence[Instance], config: TrainConfig,
          pipeline: Pipeline | None = None, seed: int | None = None, batch_size: int = 256) -> np.ndarray:
    """Predicted click probabilities, averaged over ``eval_samples`` neighbourhoods."""
    pipeline = pipeline or Pipeline(g, config)
    seed = config.seed if seed is None else seed
    S = config.eval_samples
    out = np.zeros(len(instances))
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        reps = [ins for ins in chunk for _ in range(S)]
        seeds = [(seed, 1_000_003, start + i, s) for i in range(len(chunk)) for s in range(S)]
        res = forward(params, pipeline.batch(params, reps, seeds))
        out[start:start + len(chunk)] = res.probs.reshape(len(chunk), S).mean(axis=1)
    return out


@dataclass
class EpochLog:
    epoch: int
    loss: float
    bce: float
    cr: float
    auc: float | None
    wall: float

    def line(self) -> str:
        auc = "nan" if self.auc is None else f"{self.auc:.6f}"
        return (f"epoch={self.epoch}\tloss={self.loss:.6f}\tbce={self.bce:.6f}\tcr={self.cr:.6f}"
                f"\tauc={auc}\twall={self.wall:.2f}")


def train_step(params: ModelParams, batch: Batch, labels: np.ndarray, config: TrainConfig,
               optimizer) -> tuple[float, float, float, dict[str, np.ndarray]]:
    tape = nm.Tape()
    out = forward(params, batch, tape)
    total, bce, cr = batch_loss(out, labels, config.resamples, config.gamma, config.cr_norm,
                                config.consistency)
    loss = total.item()
    if not np.isfinite(loss):
        raise NumericError("non-finite loss")
    grads = nm.backward(tape, total)
    optimizer.step(params.arrays, grads)
    return loss, bce.item(), (cr.item() if cr is not None else 0.0), grads


def fit(g: HinGraph, instances: Sequence[Instance], config: TrainConfig,
        valid: Sequence[Instance] | None = None, params: ModelParams | None = None,
        callback=None) -> tuple[ModelParams, list[EpochLog]]:
    """Train from scratch (or from ``params``); returns params and per-epoch logs."""
    from .metrics import auc

    if not instances:
        raise ValueError("no training instances")
    for i, ins in enumerate(instances):
        if ins.label not in (0, 1):
            raise ValueError(f"instance {i}: label {ins.label} not in {{0, 1}}")
    pipeline = Pipeline(g, config)
    params = params or new_params(pipeline, instances)
    if config.optimizer == "adam":
        opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    else:
        opt = SGD(config.lr)
    S = config.resamples
    history = []
    step = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([config.seed, 7, epoch]).permutation(len(instances))
        sums = np.zeros(3)
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            chunk = [instances[i] for i in idx]
            reps = [ins for ins in chunk for _ in range(S)]
            seeds = [(config.seed, epoch, int(i), 0 if config.freeze_resamples else s)
                     for i in idx for s in range(S)]
            labels = np.array([ins.label for ins in reps], dtype=np.float64)
            batch = pipeline.batch(params, reps, seeds)
            try:
                loss, bce, cr, _ = train_step(params, batch, labels, config, opt)
            except NumericError as exc:
                raise NumericError(f"step {step}: {exc}") from exc
            sums += np.array([loss, bce, cr]) * len(chunk)
            step += 1
            if callback is not None:
                callback(step, loss, bce, cr)
        sums /= len(instances)
        val_auc = None
        if valid:
            scores = score(g, params, valid, config, pipeline)
            labels = np.array([ins.label for ins in valid])
            if 0 < labels.sum() < len(labels):
                val_auc = auc(scores, labels)
        entry = EpochLog(epoch, *sums.tolist(), val_auc, time.perf_counter() - t0)
        log.info(entry.line())
        history.append(entry)
    return params, history
