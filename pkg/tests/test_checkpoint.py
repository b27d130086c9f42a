import struct

import numpy as np
import pytest

from nictr.checkpoint import MAGIC, CheckpointError, from_bytes, load, save, to_bytes
from nictr.hin import FeatureGroup, FeatureSchema
from nictr.interaction import partition_feature_groups
from nictr.model import ModelConfig, init_params


@pytest.fixture
def params(tiny):
    part = partition_feature_groups(tiny.schema, "S4", 2)
    cfg = ModelConfig(hidden=8, heads=4, layers=1, ffn=8, embed=3, active_kinds=("induced", "cross"))
    return init_params(cfg, tiny.schema, part, "user", "item", seed=5)


def test_round_trip(tmp_path, params):
    save(tmp_path / "m.ckpt", params, {"lr": 0.1})
    again, train = load(tmp_path / "m.ckpt", params.schema)
    assert train == {"lr": 0.1}
    assert again.config == params.config
    assert again.node_input == params.node_input
    assert list(again.arrays) == list(params.arrays)
    for k in params.arrays:
        assert np.array_equal(again.arrays[k], params.arrays[k])
    assert to_bytes(again, {"lr": 0.1}) == to_bytes(params, {"lr": 0.1})


def test_layout(params):
    blob = to_bytes(params)
    assert blob[:8] == MAGIC
    version, hlen = struct.unpack("<II", blob[8:16])
    assert version == 1
    first = next(iter(params.arrays.values()))
    start = 16 + hlen
    assert np.array_equal(np.frombuffer(blob[start:start + 8 * first.size], "<f8").reshape(first.shape), first)


def test_rejects_corruption(params):
    blob = to_bytes(params)
    with pytest.raises(CheckpointError, match="magic"):
        from_bytes(b"XXXXXXXX" + blob[8:])
    with pytest.raises(CheckpointError, match="version"):
        from_bytes(blob[:8] + struct.pack("<I", 9) + blob[12:])
    with pytest.raises(CheckpointError, match="truncated"):
        from_bytes(blob[:-8])
    with pytest.raises(CheckpointError, match="trailing"):
        from_bytes(blob + b"\0" * 8)
    other = FeatureSchema({"user": [FeatureGroup("age", 4)], "item": [FeatureGroup("c", 2)]})
    with pytest.raises(CheckpointError, match="different schema"):
        from_bytes(blob, other)
