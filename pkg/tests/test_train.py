import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nictr import numeric as nm
from nictr.model import ModelConfig, forward
from nictr.sampler import SamplerConfig
from nictr.train import (SGD, Adam, Instance, Pipeline, TrainConfig, batch_loss, bce_loss,
                         consistency_loss, fit, new_params, read_instances, score, total_loss,
                         write_instances)


def small_config(**kw):
    base = dict(lr=0.01, batch_size=4, epochs=1, resamples=2, gamma=0.1, seed=0,
                model=ModelConfig(hidden=8, heads=4, layers=1, ffn=8, embed=4, mlp_hidden=4),
                sampler=SamplerConfig(budgets={"user": 2, "item": 2, "publisher": 1}))
    base.update(kw)
    return TrainConfig(**base)


def fixture_instances(g):
    ix = g.index
    pairs = [("u1", "i3", 0), ("u2", "i1", 1), ("u3", "i5", 0), ("u4", "i4", 1), ("u5", "i2", 1), ("u1", "i4", 0)]
    return [Instance(ix[u], ix[v], y) for u, v, y in pairs]


def test_bce_examples():
    assert bce_loss(0.5, 0) == pytest.approx(math.log(2), abs=1e-15)
    assert bce_loss(0.5, 1) == pytest.approx(0.6931, abs=5e-5)
    assert bce_loss(0.8, 1) == pytest.approx(float(-mpmath.log(mpmath.mpf("0.8"))), abs=1e-15)
    assert bce_loss(0.8, 1) == pytest.approx(0.2231, abs=5e-5)
    assert bce_loss(1 - 1e-12, 1) < 1e-11
    for bad in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            bce_loss(bad, 1)


def brute_cr(samples):
    S, d = len(samples), len(samples[0])
    mean = [sum(s[k] for s in samples) / S for k in range(d)]
    return sum(math.sqrt(sum((s[k] - mean[k]) ** 2 for k in range(d))) / d for s in samples) / S


def test_consistency_examples():
    assert consistency_loss([[0.0, 0.0], [2.0, 0.0]]) == pytest.approx(0.5, abs=1e-15)
    assert brute_cr([[0.0, 0.0], [2.0, 0.0]]) == pytest.approx(0.5, abs=1e-15)
    assert consistency_loss([[1.0, 2.0, 3.0]]) == 0.0
    assert consistency_loss([[1.0, 2.0]] * 4) == 0.0
    with pytest.raises(ValueError):
        consistency_loss([1.0, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 5), st.integers(0, 2**31))
def test_consistency_matches_brute_force(S, d, seed):
    x = np.random.default_rng(seed).normal(size=(S, d))
    val = consistency_loss(x)
    assert val >= 0
    assert val == pytest.approx(brute_cr(x.tolist()), abs=1e-12)
    assert consistency_loss(np.repeat(x[:1], S, axis=0)) == 0.0


def test_batched_cr_tensor_matches_scalar_definition():
    rng = np.random.default_rng(2)
    B, S, d = 3, 4, 5
    g = rng.normal(size=(B * S, d))

    class Out:
        logits = nm.Tensor(np.zeros((B * S, 1)))

    Out.g = nm.Tensor(g)
    _, _, cr = batch_loss(Out, np.zeros(B * S), S, 0.1)
    want = np.mean([consistency_loss(g[b * S:(b + 1) * S]) for b in range(B)])
    assert cr.item() == pytest.approx(want, abs=1e-14)


def test_total_loss():
    assert total_loss(0.3, 0.5, 0.1) == pytest.approx(0.35, abs=1e-15)
    assert total_loss(0.3, 0.5, 0.0) == 0.3
    assert total_loss(0.3, 0.0, 1.0) == 0.3
    with pytest.raises(ValueError):
        total_loss(0.3, 0.5, -1)


def test_config_validation_and_round_trip():
    with pytest.raises(ValueError):
        TrainConfig(resamples=0)
    with pytest.raises(ValueError):
        TrainConfig(gamma=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="lbfgs")
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1})
    cfg = small_config(gamma=0.5)
    again = TrainConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


def test_zero_learning_rate_leaves_params(fixture12):
    cfg = small_config(lr=0.0, optimizer="sgd", epochs=2)
    data = fixture_instances(fixture12)
    init = new_params(Pipeline(fixture12, cfg), data)
    params, _ = fit(fixture12, data, cfg, params=init.copy())
    for k, v in init.arrays.items():
        assert np.array_equal(params.arrays[k], v)


def test_single_step_sgd_oracle(fixture12):
    g = fixture12
    cfg = small_config(lr=0.05, optimizer="sgd", resamples=1, batch_size=1)
    ins = fixture_instances(g)[:1]
    pipe = Pipeline(g, cfg)
    init = new_params(pipe, ins)
    # independent tape: same sampler seed, plain BCE of one forward
    tape = nm.Tape()
    out = forward(init, pipe.batch(init, ins, [(cfg.seed, 0, 0, 0)]), tape)
    p = float(out.probs[0])
    grads = nm.backward(tape, nm.sum_all(nm.bce_with_logits(out.logits, np.array([[float(ins[0].label)]]))))
    assert -math.log1p(-p) == pytest.approx(bce_loss(p, 0))
    params, _ = fit(g, ins, cfg, params=init.copy())
    for k in init.arrays:
        delta = params.arrays[k] - init.arrays[k]
        assert np.allclose(delta, -cfg.lr * grads[k], atol=1e-15, rtol=0)


def test_gamma_zero_matches_plain_bce(fixture12):
    g = fixture12
    data = fixture_instances(g)
    a, ha = fit(g, data, small_config(gamma=0.0, epochs=2))
    b, hb = fit(g, data, small_config(gamma=0.0, consistency=False, epochs=2))
    for k in a.arrays:
        assert np.array_equal(a.arrays[k], b.arrays[k])
    assert [h.loss for h in ha] == [h.loss for h in hb]


def test_fit_is_deterministic(fixture12):
    g = fixture12
    data = fixture_instances(g)
    a, ha = fit(g, data, small_config(epochs=2))
    b, hb = fit(g, data, small_config(epochs=2))
    assert all(np.array_equal(a.arrays[k], b.arrays[k]) for k in a.arrays)
    assert [(h.loss, h.cr) for h in ha] == [(h.loss, h.cr) for h in hb]


def test_frozen_resamples_zero_consistency(fixture12):
    g = fixture12
    data = fixture_instances(g)
    seen = []
    fit(g, data, small_config(resamples=4, freeze_resamples=True),
        callback=lambda step, loss, bce, cr: seen.append(cr))
    assert all(c == 0.0 for c in seen)
    seen = []
    fit(g, data, small_config(resamples=4), callback=lambda step, loss, bce, cr: seen.append(cr))
    assert seen[0] > 0


def test_fit_rejects_bad_input(fixture12):
    with pytest.raises(ValueError):
        fit(fixture12, [], small_config())
    with pytest.raises(ValueError):
        fit(fixture12, [Instance(0, 5, 2)], small_config())


def test_nan_loss_reports_step(fixture12):
    from nictr.train import NumericError

    g = fixture12
    data = fixture_instances(g)
    cfg = small_config()
    params = new_params(Pipeline(g, cfg), data)
    params.arrays["head/b2"][:] = np.nan
    with pytest.raises(NumericError, match="step 0"):
        fit(g, data, cfg, params=params)


def test_adam_first_step_is_lr_sized():
    opt = Adam(0.1)
    p = {"w": np.array([1.0, -1.0])}
    opt.step(p, {"w": np.array([3.0, -0.5])})
    assert np.allclose(p["w"], [0.9, -0.9], atol=1e-8)
    s = SGD(0.5)
    s.step(p, {"w": np.array([1.0, 1.0])})
    assert np.allclose(p["w"], [0.4, -1.4], atol=1e-8)


def test_instance_file_round_trip(tmp_path, fixture12):
    g = fixture12
    data = [Instance(0, 5, 1, (0.5, 1.0)), Instance(1, 6, 0, (0.0, 0.25))]
    write_instances(tmp_path / "x.tsv", g, data)
    assert read_instances(tmp_path / "x.tsv", g) == data
    (tmp_path / "bad.tsv").write_text("u1\ti1\t2\n")
    from nictr.hin import GraphFormatError

    with pytest.raises(GraphFormatError, match="label"):
        read_instances(tmp_path / "bad.tsv", g)


def test_planted_signal_learned_in_two_epochs(small_synth):
    from nictr.metrics import auc

    d = small_synth
    cfg = small_config(epochs=2, batch_size=16, lr=0.01)
    params, _ = fit(d.graph, d.train, cfg)
    scores = score(d.graph, params, d.test, cfg)
    assert auc(scores, np.array([i.label for i in d.test])) > 0.5
