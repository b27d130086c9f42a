import numpy as np
import pytest
from sklearn.base import clone

from nictr.estimator import NeighbourhoodCTRClassifier, check_pairs


def small(graph, **kw):
    return NeighbourhoodCTRClassifier(graph=graph, hidden=8, heads=4, layers=1, ffn=8, embed=4,
                                      mlp_hidden=4, epochs=1, batch_size=8,
                                      budgets={"user": 2, "item": 2, "publisher": 1}, **kw)


def test_params_and_clone(fixture12):
    est = small(fixture12, gamma=0.3)
    p = est.get_params()
    assert p["gamma"] == 0.3 and p["hidden"] == 8
    c = clone(est)
    assert c.get_params()["gamma"] == 0.3
    c.set_params(gamma=0.0)
    assert est.gamma == 0.3


def test_fit_predict_transform(fixture12):
    X = [("u1", "i3"), ("u2", "i1"), ("u3", "i5"), ("u4", "i4"), ("u5", "i2"), ("u1", "i4")]
    y = [0, 1, 0, 1, 1, 0]
    est = small(fixture12).fit(X, y)
    proba = est.predict_proba(X)
    assert proba.shape == (6, 2) and np.allclose(proba.sum(axis=1), 1.0)
    assert set(est.predict(X)) <= {0, 1}
    assert est.transform(X).shape == (6, 8)
    assert np.allclose(est.decision_function(X), np.log(proba[:, 1] / proba[:, 0]))
    assert est.n_features_in_ == 2


def test_validation(fixture12):
    est = small(fixture12)
    with pytest.raises(ValueError, match="empty"):
        est.fit([], [])
    with pytest.raises(ValueError, match="labels"):
        est.fit([("u1", "i1")], [3])
    with pytest.raises(ValueError, match="row 0"):
        est.fit([("nobody", "i1")], [1])
    with pytest.raises(ValueError, match="needs a graph"):
        NeighbourhoodCTRClassifier().fit([("u1", "i1")], [1])
    with pytest.raises(ValueError, match="context width"):
        check_pairs([("u1", "i1", 0.5), ("u2", "i2")], fixture12)
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        est.predict([("u1", "i1")])
