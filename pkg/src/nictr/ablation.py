"""Retrain-and-compare harness for mask, sampler and feature ablations."""
from __future__ import annotations

import copy
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .hin import HinGraph
from .interaction import MASK_KINDS, STRATEGIES
from .metrics import EvalReport
from .model import ModelConfig
from .sampler import SamplerConfig
from .train import Instance, TrainConfig, fit, score

KIND_SHORT = {"induced": "IG", "similarity": "SG", "cross": "CG", "complete": "PG"}


@dataclass
class AblationRow:
    name: str
    seed: int
    report: EvalReport
    seconds: float


def run_variant(g: HinGraph, train: Sequence[Instance], test: Sequence[Instance],
                config: TrainConfig, name: str) -> AblationRow:
    t0 = time.perf_counter()
    params, _ = fit(g, train, config)
    scores = score(g, params, test, config)
    labels = np.array([i.label for i in test])
    return AblationRow(name, config.seed, EvalReport.from_scores(scores, labels), time.perf_counter() - t0)


def run_ablation(g: HinGraph, train, test, base: TrainConfig, variants: dict[str, TrainConfig],
                 seeds: Iterable[int] = (0,)) -> list[AblationRow]:
    rows = []
    for seed in seeds:
        for name, cfg in variants.items():
            cfg = copy.deepcopy(cfg)
            cfg.seed = seed
            rows.append(run_variant(g, train, test, cfg, name))
    return rows


def with_kinds(base: TrainConfig, kinds: Sequence[str]) -> TrainConfig:
    if not kinds:
        raise ValueError("empty mask subset")
    cfg = copy.deepcopy(base)
    cfg.model = ModelConfig(**{**base.model.to_dict(), "active_kinds": tuple(kinds)})
    return cfg


def subset_name(kinds: Sequence[str]) -> str:
    return "+".join(KIND_SHORT[k] for k in MASK_KINDS if k in kinds)


def run_mask_ablation(g: HinGraph, train, test, base: TrainConfig,
                      subsets: Sequence[Sequence[str]], seeds: Iterable[int] = (0,)) -> list[AblationRow]:
    """Retrain with only the listed mask kinds; removed kinds' heads go to the rest."""
    variants = {subset_name(s): with_kinds(base, s) for s in subsets}
    return run_ablation(g, train, test, base, variants, seeds)


def sampler_variants(base: TrainConfig, metapaths: Sequence[Sequence[str]] = ()) -> dict[str, TrainConfig]:
    out = {}
    for kind in ("ghn", "nodewise", "metapath"):
        cfg = copy.deepcopy(base)
        cfg.sampler = SamplerConfig(**{**vars(base.sampler), "kind": kind,
                                       "metapaths": [list(p) for p in metapaths] or base.sampler.metapaths})
        out[kind] = cfg
    return out


def budget_sweep(base: TrainConfig, totals: Sequence[int]) -> dict[str, TrainConfig]:
    """Scale per-type budgets so their sum is close to each total ``n_s``."""
    out = {}
    base_total = sum(base.sampler.budgets.values())
    for n_s in totals:
        cfg = copy.deepcopy(base)
        cfg.sampler.budgets = {t: max(1, round(b * n_s / base_total)) for t, b in base.sampler.budgets.items()}
        out[f"n_s={n_s}"] = cfg
    return out


def similarity_variants(base: TrainConfig, ks: Sequence[int] = (2, 4)) -> dict[str, TrainConfig]:
    out = {"weighted": copy.deepcopy(base)}
    out["weighted"].similarity_mode = "weighted"
    for k in ks:
        cfg = copy.deepcopy(base)
        cfg.similarity_mode, cfg.knn_k = "knn", k
        out[f"knn{k}"] = cfg
    return out


def strategy_variants(base: TrainConfig, thresholds: Sequence[int]) -> dict[str, TrainConfig]:
    out = {}
    for s in STRATEGIES:
        for k in thresholds:
            cfg = copy.deepcopy(base)
            cfg.strategy, cfg.threshold = s, k
            out[f"{s}/K={k}"] = cfg
    return out


def summarise(rows: Sequence[AblationRow]) -> list[list[str]]:
    """Per-variant mean AUC / logloss over seeds, in first-seen order."""
    names = list(dict.fromkeys(r.name for r in rows))
    out = []
    for name in names:
        sel = [r for r in rows if r.name == name]
        aucs = [r.report.auc for r in sel if r.report.auc is not None]
        lls = [r.report.logloss for r in sel if r.report.logloss is not None]
        out.append([name, f"{np.mean(aucs):.6f}" if aucs else "nan",
                    f"{np.mean(lls):.6f}" if lls else "nan", str(len(sel)),
                    f"{np.mean([r.seconds for r in sel]):.1f}"])
    return out


ABLATION_HEADER = ["variant", "mean_auc", "mean_logloss", "runs", "seconds"]
