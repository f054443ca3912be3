import json

import numpy as np
import pytest

from gtlsynth.bench.crop import CropConfig, gen_crop
from gtlsynth.central import synthesize_central
from gtlsynth.fmdp import FactoredPolicy, ModelError, uniform_policy
from gtlsynth.modelio import (
    check_policy_scope,
    load_model,
    load_policy,
    model_from_dict,
    model_to_dict,
    save_model,
    save_policy,
)
from oracles import FIG4, binary_model


def same_model(a, b):
    assert a.graph.agents == b.graph.agents
    assert a.graph.edges == b.graph.edges
    assert a.graph.edge_labels == b.graph.edge_labels
    assert a.local_states == b.local_states and a.local_actions == b.local_actions
    assert a.initial_state == b.initial_state
    assert a.specs == b.specs
    for i in a.agents:
        # loading renormalises rows, which may move the last bit
        assert np.allclose(a.kernels[i].table, b.kernels[i].table, rtol=0, atol=1e-15)
        assert np.array_equal(a.rewards[i], b.rewards[i])
        assert all(a.node_label(i, s) == b.node_label(i, s) for s in range(len(a.local_states[i])))


def test_crop_round_trip(tmp_path):
    m = gen_crop(CropConfig(rows=2, cols=2))
    path = tmp_path / "crop.json"
    save_model(m, path)
    same_model(m, load_model(path))


def test_labelled_graph_round_trip():
    m = binary_model(FIG4, 1)
    same_model(m, model_from_dict(json.loads(json.dumps(model_to_dict(m)))))


def test_missing_file(tmp_path):
    with pytest.raises(ModelError, match="cannot read"):
        load_model(tmp_path / "absent.json")


def test_invalid_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ModelError, match="not valid JSON"):
        load_model(path)
    path.write_text("[1, 2]")
    with pytest.raises(ModelError):
        load_model(path)


def test_dense_model_requires_every_entry():
    doc = model_to_dict(gen_crop(CropConfig(rows=1, cols=2)))
    doc["sparse_default_zero"] = False
    with pytest.raises(ModelError):
        model_from_dict(doc)


def test_bad_probability_rejected():
    doc = model_to_dict(gen_crop(CropConfig(rows=1, cols=2)))
    doc["transitions"][0]["probability"] = 0.5
    with pytest.raises(ModelError):
        model_from_dict(doc)


def test_wrong_key_length_rejected():
    doc = model_to_dict(gen_crop(CropConfig(rows=1, cols=2)))
    doc["transitions"][0]["state"] = ["h"]
    with pytest.raises(ModelError):
        model_from_dict(doc)


def test_policy_round_trip(tmp_path):
    m = gen_crop(CropConfig(rows=1, cols=2, lam=0.8))
    _, pol, _ = synthesize_central(m)
    path = tmp_path / "pol.json"
    save_policy(pol, path)
    back = load_policy(path)
    check_policy_scope(m, back)
    for i in m.agents:
        assert np.array_equal(pol.tables[i], back.tables[i])
        a, b = pol.memory.get(i), back.memory.get(i)
        assert (a is None) == (b is None)
        if a is not None:
            assert np.array_equal(a.delta, b.delta) and np.array_equal(a.letters, b.letters)
            assert a.q_init == b.q_init


def test_policy_scope_mismatch():
    small = gen_crop(CropConfig(rows=1, cols=2))
    big = gen_crop(CropConfig(rows=2, cols=2))
    with pytest.raises(ModelError):
        check_policy_scope(big, uniform_policy(small))
    pol = uniform_policy(small)
    with pytest.raises(ModelError):
        check_policy_scope(small, FactoredPolicy({1: pol.tables[1]}, {}))


def test_malformed_policy(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({"agents": {"1": {}}}))
    with pytest.raises(ModelError):
        load_policy(path)
