import dataclasses
import json

import numpy as np
import pytest

from twohands.config import (
    DEFAULT_FPS,
    DEFAULT_SEQUENCE_LENGTH,
    FULL_MODEL_JOINTS,
    FULL_MODEL_VERTICES,
    RunConfig,
    config_from_dict,
    config_to_dict,
    load_config,
)
from twohands.errors import ContractError, ParseError, ValidationError
from twohands.formats import (
    dumps_sequence,
    fmt,
    load_features,
    load_model,
    load_sequence,
    load_weights_dict,
    matrix_to_csv,
    model_to_dict,
    save_features,
    save_model,
    save_sequence,
    save_weights,
)
from twohands.hand_model import generate_mini_hand
from twohands.sequence import pose_sequence, synthesize_sequence
from twohands.temporal_encoder import init_encoder_weights, weights_from_dict, weights_to_dict


# -- models ------------------------------------------------------------------------

def test_model_round_trip_is_byte_identical(tmp_path, mini_left):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_model(mini_left, a)
    save_model(load_model(a), b)
    assert a.read_bytes() == b.read_bytes()
    back = load_model(a)
    np.testing.assert_array_equal(back.template_vertices, mini_left.template_vertices)
    assert back.side == "left"


def test_model_round_trip_with_pose_pca(tmp_path):
    model = generate_mini_hand(2, "right")
    rng = np.random.default_rng(0)
    model = dataclasses.replace(model, pose_pca=rng.normal(size=(6, 3 * (model.num_nodes - 1)))).validate()
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.pose_pca, model.pose_pca)


def test_model_one_key_per_line(tmp_path, mini_right):
    save_model(mini_right, tmp_path / "m.json")
    lines = (tmp_path / "m.json").read_text().splitlines()
    assert lines[0] == "{" and lines[-1] == "}"
    assert len(lines) == 2 + len(model_to_dict(mini_right))


def _write_doc(path, doc):
    path.write_text(json.dumps(doc))
    return path


def test_model_missing_field_named(tmp_path, mini_right):
    doc = model_to_dict(mini_right)
    del doc["skin_weights"]
    with pytest.raises(ParseError, match="skin_weights"):
        load_model(_write_doc(tmp_path / "m.json", doc))


def test_model_shape_mismatch_named(tmp_path, mini_right):
    doc = model_to_dict(mini_right)
    doc["joint_regressor"] = doc["joint_regressor"][:-1]
    with pytest.raises(ParseError, match="joint_regressor"):
        load_model(_write_doc(tmp_path / "m.json", doc))


def test_model_truncated_file(tmp_path, mini_right):
    save_model(mini_right, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "m.json").write_text(text[: len(text) // 2])
    with pytest.raises(ParseError, match="malformed"):
        load_model(tmp_path / "m.json")


def test_model_bad_skin_weights_is_validation_error(tmp_path, mini_right):
    doc = model_to_dict(mini_right)
    row = np.asarray(doc["skin_weights"][0])
    doc["skin_weights"][0] = (0.5 * row).tolist()
    with pytest.raises(ValidationError, match="skin"):
        load_model(_write_doc(tmp_path / "m.json", doc))


def test_missing_model_file(tmp_path):
    with pytest.raises(ParseError, match="cannot read"):
        load_model(tmp_path / "nope.json")


# -- sequences ---------------------------------------------------------------------

def test_sequence_round_trip_is_byte_identical(tmp_path, mini_right, mini_left):
    seq = synthesize_sequence(mini_right, mini_left, "jittery", seed=1)
    gt = pose_sequence(mini_right, mini_left, seq)
    seq = seq.copy(gt_joints_r=gt.joints_r, gt_joints_l=gt.joints_l,
                   labeled=np.arange(seq.num_frames) % 3 != 0)
    save_sequence(seq, tmp_path / "s.json")
    back = load_sequence(tmp_path / "s.json")
    assert dumps_sequence(back) == (tmp_path / "s.json").read_text()
    np.testing.assert_array_equal(back.gt_joints_l, seq.gt_joints_l)
    np.testing.assert_array_equal(back.labeled, seq.labeled)
    assert back.gt_vertices_r is None


def test_sequence_error_names_frame_and_field(tmp_path, mini_right, mini_left):
    seq = synthesize_sequence(mini_right, mini_left, "disjoint")
    save_sequence(seq, tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    doc["frames"][4]["theta_l"] = doc["frames"][4]["theta_l"][:-1]
    with pytest.raises(ParseError, match=r"frame 4: field 'theta_l'"):
        load_sequence(_write_doc(tmp_path / "bad.json", doc))
    doc = json.loads((tmp_path / "s.json").read_text())
    doc["T"] = 11
    with pytest.raises(ParseError, match="frames"):
        load_sequence(_write_doc(tmp_path / "bad.json", doc))


def test_sequence_partial_ground_truth_rejected(tmp_path, mini_right, mini_left):
    seq = synthesize_sequence(mini_right, mini_left, "disjoint", T=4)
    gt = pose_sequence(mini_right, mini_left, seq)
    save_sequence(seq.copy(gt_joints_r=gt.joints_r), tmp_path / "s.json")
    doc = json.loads((tmp_path / "s.json").read_text())
    del doc["frames"][2]["gt_joints_r"]
    with pytest.raises(ParseError, match="frame 2: missing field 'gt_joints_r'"):
        load_sequence(_write_doc(tmp_path / "bad.json", doc))


# -- encoder files -----------------------------------------------------------------

def test_features_and_weights_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    feats = {"right": rng.normal(size=(10, 32)), "left": rng.normal(size=(10, 32)),
             "global_1": rng.normal(size=(10, 32)), "global_2": rng.normal(size=(10, 16))}
    save_features(feats, tmp_path / "f.json")
    back = load_features(tmp_path / "f.json")
    for k, v in feats.items():
        np.testing.assert_array_equal(back[k], v)
    save_features(back, tmp_path / "g.json")
    assert (tmp_path / "f.json").read_bytes() == (tmp_path / "g.json").read_bytes()

    w = init_encoder_weights(0)
    save_weights(weights_to_dict(w), tmp_path / "w.json")
    save_weights(weights_to_dict(weights_from_dict(load_weights_dict(tmp_path / "w.json"))), tmp_path / "w2.json")
    assert (tmp_path / "w.json").read_bytes() == (tmp_path / "w2.json").read_bytes()


def test_features_missing_key(tmp_path):
    save_features({"right": np.zeros((2, 4))}, tmp_path / "f.json")
    with pytest.raises(ParseError, match="left"):
        load_features(tmp_path / "f.json")


# -- CSV helpers -------------------------------------------------------------------

def test_fmt_and_matrix_csv(tmp_path):
    assert fmt(None) == "n/a"
    assert fmt(1.5) == "1.500000"
    m = np.array([[0.1, 0.9], [1.0 / 3.0, 2.0 / 3.0]])
    matrix_to_csv(m, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "key_0,key_1"
    np.testing.assert_array_equal(np.loadtxt(tmp_path / "m.csv", delimiter=",", skiprows=1), m)


# -- config ------------------------------------------------------------------------

def test_default_constants():
    cfg = RunConfig()
    w = cfg.weights
    assert (w.lambda_j, w.lambda_i, w.lambda_m, w.lambda_r) == (100.0, 10.0, 1.0, 0.1)
    assert w.alpha == 0.02
    assert FULL_MODEL_VERTICES == 778 and FULL_MODEL_JOINTS == 21
    assert DEFAULT_SEQUENCE_LENGTH == 10 and DEFAULT_FPS == 30.0
    assert cfg.metrics.pck_max_mm == 50.0 and cfg.metrics.pck_steps == 51
    assert cfg.encoder.dims == (32, 16, 8) and cfg.encoder.global_dims == (32, 16)


def test_config_round_trip_and_overrides(tmp_path):
    cfg = config_from_dict({"weights": {"lambda_i": 5.0}, "refine": {"max_iters": 7}, "synth": {"frames": 4}})
    assert cfg.weights.lambda_i == 5.0 and cfg.weights.lambda_j == 100.0
    rc = cfg.refine_config(threads=2)
    assert rc.max_iters == 7 and rc.threads == 2 and rc.weights.lambda_i == 5.0
    (tmp_path / "c.json").write_text(json.dumps(config_to_dict(cfg)))
    assert load_config(tmp_path / "c.json") == cfg


@pytest.mark.parametrize("doc", [{"bogus": {}}, {"weights": {"lambda_q": 1.0}}, {"refine": {"speed": 1}},
                                 {"metrics": 3}])
def test_config_unknown_keys_are_parse_errors(doc):
    with pytest.raises(ParseError):
        config_from_dict(doc)


def test_config_bad_values(tmp_path):
    with pytest.raises(ContractError):
        config_from_dict({"refine": {"max_iters": 0}})
    (tmp_path / "c.json").write_text(json.dumps({"refine": {"max_iters": 0}}))
    with pytest.raises(ParseError, match="max_iters"):
        load_config(tmp_path / "c.json")
    (tmp_path / "c.json").write_text("{")
    with pytest.raises(ParseError):
        load_config(tmp_path / "c.json")
