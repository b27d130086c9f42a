"""scikit-learn compatible wrapper around the training pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .hin import HinGraph
from .interaction import MASK_KINDS
from .model import ModelConfig, forward
from .sampler import SamplerConfig
from .train import Instance, Pipeline, TrainConfig, fit, score


def check_pairs(X, graph: HinGraph, context_dim: int | None = None) -> list[Instance]:
    """Validate ``X`` (rows of ``[user, item, *context]``) against ``graph``.

    Node references may be string ids or integer indices.
    """
    if graph is None:
        raise ValueError("estimator needs a graph")
    rows = list(X.itertuples(index=False)) if hasattr(X, "itertuples") else list(X)
    if not rows:
        raise ValueError("X is empty")
    out = []
    for k, row in enumerate(rows):
        row = list(row)
        if len(row) < 2:
            raise ValueError(f"row {k}: expected at least (user, item)")
        try:
            u, v = graph.resolve(_node_ref(row[0])), graph.resolve(_node_ref(row[1]))
        except KeyError as exc:
            raise ValueError(f"row {k}: {exc.args[0]}") from None
        ctx = tuple(float(c) for c in row[2:])
        if not np.all(np.isfinite(ctx)):
            raise ValueError(f"row {k}: non-finite context")
        out.append(Instance(u, v, 0, ctx))
    widths = {len(i.context) for i in out}
    if len(widths) != 1:
        raise ValueError("rows disagree on context width")
    if context_dim is not None and widths.pop() != context_dim:
        raise ValueError(f"expected context width {context_dim}")
    return out


def _node_ref(x):
    if isinstance(x, (np.integer, int)) and not isinstance(x, bool):
        return int(x)
    return str(x)


class NeighbourhoodCTRClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Click-through classifier over sampled (user, item) neighbourhoods.

    ``X`` rows are ``(user, item, *context)`` node references into ``graph``;
    ``y`` holds 0/1 clicks. ``transform`` returns the pooled neighbourhood
    embedding of each pair.
    """

    def __init__(self, graph: HinGraph | None = None, hidden=32, heads=8, layers=2, ffn=64,
                 embed=8, mlp_hidden=32, readout="targets-input", masks=MASK_KINDS,
                 shared_output_proj=False, lr=0.005, batch_size=32, epochs=5, resamples=2,
                 gamma=0.1, cr_norm="l2", optimizer="adam", strategy="S3", threshold=1,
                 similarity_mode="weighted", knn_k=3, sampler="ghn", budgets=None,
                 max_hops=4, eval_samples=1, random_state=0):
        self.graph = graph
        self.hidden = hidden
        self.heads = heads
        self.layers = layers
        self.ffn = ffn
        self.embed = embed
        self.mlp_hidden = mlp_hidden
        self.readout = readout
        self.masks = masks
        self.shared_output_proj = shared_output_proj
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.resamples = resamples
        self.gamma = gamma
        self.cr_norm = cr_norm
        self.optimizer = optimizer
        self.strategy = strategy
        self.threshold = threshold
        self.similarity_mode = similarity_mode
        self.knn_k = knn_k
        self.sampler = sampler
        self.budgets = budgets
        self.max_hops = max_hops
        self.eval_samples = eval_samples
        self.random_state = random_state

    def to_config(self) -> TrainConfig:
        model = ModelConfig(hidden=self.hidden, heads=self.heads, layers=self.layers, ffn=self.ffn,
                            embed=self.embed, mlp_hidden=self.mlp_hidden, readout=self.readout,
                            shared_output_proj=self.shared_output_proj, active_kinds=tuple(self.masks))
        sampler = SamplerConfig(kind=self.sampler, max_hops=self.max_hops)
        if self.budgets is not None:
            sampler.budgets = dict(self.budgets)
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
                           resamples=self.resamples, gamma=self.gamma, cr_norm=self.cr_norm,
                           optimizer=self.optimizer, seed=int(self.random_state or 0),
                           strategy=self.strategy, threshold=self.threshold,
                           similarity_mode=self.similarity_mode, knn_k=self.knn_k,
                           eval_samples=self.eval_samples, model=model, sampler=sampler)

    def fit(self, X, y):
        pairs = check_pairs(X, self.graph)
        y = np.asarray(y).reshape(-1)
        if len(y) != len(pairs):
            raise ValueError(f"{len(pairs)} rows in X but {len(y)} labels")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        instances = [Instance(p.u, p.v, int(label), p.context) for p, label in zip(pairs, y)]
        self.config_ = self.to_config()
        self.params_, self.history_ = fit(self.graph, instances, self.config_)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = 2 + len(instances[0].context)
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        pairs = check_pairs(X, self.graph, self.params_.config.context_dim)
        p = score(self.graph, self.params_, pairs, self.config_)
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X) -> np.ndarray:
        p = self.predict_proba(X)[:, 1]
        return np.log(p) - np.log1p(-p)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] >= 0.5).astype(int)

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        pairs = check_pairs(X, self.graph, self.params_.config.context_dim)
        pipe = Pipeline(self.graph, self.config_)
        seeds = [(self.config_.seed, 1_000_003, i, 0) for i in range(len(pairs))]
        return forward(self.params_, pipe.batch(self.params_, pairs, seeds)).g.data.copy()
