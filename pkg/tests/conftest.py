from pathlib import Path

import pytest

from nictr.hin import load_graph, load_schema

DATA = Path(__file__).parent / "data"


def _load(name):
    d = DATA / name
    return load_graph(d / "nodes.tsv", d / "edges.tsv", load_schema(d / "schema.yaml"))


@pytest.fixture
def tiny():
    return _load("tiny")


@pytest.fixture
def fixture12():
    return _load("fixture12")


@pytest.fixture(scope="session")
def small_synth():
    from nictr.synth import SynthConfig, generate

    return generate(SynthConfig(users=60, items=40, publishers=6, articles=30, tag_space=40,
                                train=200, test=100, seed=3))


def random_hin(seed, n=12, p=0.25, types=("user", "item", "publisher")):
    """Erdos-Renyi style HIN over the tiny schema with random one/multi-hot features."""
    import numpy as np

    from nictr.hin import HinGraph, SparseFeatureVector

    schema = load_schema(DATA / "tiny/schema.yaml")
    rng = np.random.default_rng(seed)
    kinds = [types[k] for k in rng.integers(len(types), size=n)]
    feats = []
    for t in kinds:
        groups = []
        for grp in schema.groups[t]:
            if grp.kind == "one":
                idx = np.array([rng.integers(grp.dim)])
            else:
                idx = np.sort(rng.choice(grp.dim, size=rng.integers(1, grp.dim + 1), replace=False))
            groups.append((idx, rng.uniform(0.1, 1.0, len(idx)) if grp.kind == "multi" else np.ones(1)))
        feats.append(SparseFeatureVector(tuple(groups)))
    upper = np.triu(rng.random((n, n)) < p, 1)
    edges = [(int(i), int(j)) for i, j in zip(*np.nonzero(upper))]
    return HinGraph(schema, [f"n{i}" for i in range(n)], kinds, feats, edges)


ACCEPTANCE: list[str] = []


def record(number, ok, detail=""):
    """Note one acceptance criterion's outcome for the end-of-run summary."""
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
