"""Text file formats: hand models, sequences, encoder features/weights, CSV tables.

Structured files are JSON documents with one top-level key per line, so they stay
diffable; floats are written with ``repr`` and therefore round-trip exactly.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import ParseError
from .hand_model import HandModel
from .sequence import HandParamsSequence

MODEL_FORMAT = "twohands-model"
SEQUENCE_FORMAT = "twohands-sequence"
FEATURES_FORMAT = "twohands-features"
WEIGHTS_FORMAT = "twohands-encoder-weights"


def dumps_document(doc: dict, list_key: str | None = None) -> str:
    """Serialize with one top-level key per line (and one list item per line for ``list_key``)."""
    lines = []
    for key, value in doc.items():
        if key == list_key and isinstance(value, list):
            items = ",\n".join("    " + json.dumps(item) for item in value)
            body = "[\n" + items + "\n  ]" if value else "[]"
            lines.append(f"  {json.dumps(key)}: {body}")
        else:
            lines.append(f"  {json.dumps(key)}: {json.dumps(value)}")
    return "{\n" + ",\n".join(lines) + "\n}\n"


def _read_json(path, what: str) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"{path}: cannot read {what}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: malformed {what} (line {exc.lineno}): {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: {what} must be a JSON object")
    return doc


def _field(doc: dict, name: str, where: str, shape=None, dtype=np.float64, optional=False):
    if name not in doc or doc[name] is None:
        if optional:
            return None
        raise ParseError(f"{where}: missing field '{name}'")
    try:
        arr = np.asarray(doc[name], dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{where}: field '{name}' is not a numeric array") from exc
    if shape is not None:
        expected = tuple(shape)
        if arr.size == 0 and 0 in expected:
            arr = arr.reshape(expected)
        if arr.shape != expected:
            raise ParseError(f"{where}: field '{name}' has shape {arr.shape}, header says {expected}")
    return arr


def _int(doc, name, where):
    value = doc.get(name)
    if not isinstance(value, int) or isinstance(value, bool):
        raise ParseError(f"{where}: field '{name}' must be an integer")
    return value


# -- hand model ------------------------------------------------------------------

def model_to_dict(model: HandModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": 1,
        "side": model.side,
        "V": model.num_vertices,
        "F": model.num_faces,
        "K": model.num_nodes,
        "J": model.num_joints,
        "B": model.num_betas,
        "P": model.pose_basis.shape[2],
        "D_pca": None if model.pose_pca is None else model.pose_pca.shape[0],
        "template_vertices": model.template_vertices.tolist(),
        "faces": model.faces.tolist(),
        "shape_basis": model.shape_basis.tolist(),
        "pose_basis": model.pose_basis.tolist(),
        "skin_weights": model.skin_weights.tolist(),
        "joint_regressor": model.joint_regressor.tolist(),
        "kinematic_parents": model.kinematic_parents.tolist(),
        "pose_pca": None if model.pose_pca is None else model.pose_pca.tolist(),
    }


def save_model(model: HandModel, path) -> None:
    Path(path).write_text(dumps_document(model_to_dict(model)))


def load_model(path) -> HandModel:
    """Parse and validate a model file (ParseError for format problems, ValidationError for invariants)."""
    where = str(path)
    doc = _read_json(path, "model file")
    if doc.get("format") != MODEL_FORMAT:
        raise ParseError(f"{where}: field 'format' must be '{MODEL_FORMAT}'")
    dims = {k: _int(doc, k, where) for k in ("V", "F", "K", "J", "B", "P")}
    V, F, K, J, B, P = (dims[k] for k in ("V", "F", "K", "J", "B", "P"))
    d_pca = doc.get("D_pca")
    if d_pca is not None and (not isinstance(d_pca, int) or isinstance(d_pca, bool)):
        raise ParseError(f"{where}: field 'D_pca' must be an integer or null")
    side = doc.get("side")
    if side not in ("left", "right"):
        raise ParseError(f"{where}: field 'side' must be 'left' or 'right'")
    model = HandModel(
        side=side,
        template_vertices=_field(doc, "template_vertices", where, (V, 3)),
        faces=_field(doc, "faces", where, (F, 3), dtype=np.int64),
        shape_basis=_field(doc, "shape_basis", where, (V, 3, B)),
        pose_basis=_field(doc, "pose_basis", where, (V, 3, P)),
        skin_weights=_field(doc, "skin_weights", where, (V, K)),
        joint_regressor=_field(doc, "joint_regressor", where, (J, V)),
        kinematic_parents=_field(doc, "kinematic_parents", where, (K,), dtype=np.int64),
        pose_pca=None if d_pca is None else _field(doc, "pose_pca", where, (d_pca, 3 * (K - 1))),
    )
    return model.validate()


# -- sequences -------------------------------------------------------------------

_SEQ_ARRAYS = ("theta_r", "beta_r", "theta_l", "beta_l", "translation_c")
_SEQ_OPTIONAL = ("gt_joints_r", "gt_joints_l", "gt_vertices_r", "gt_vertices_l")


def sequence_to_dict(seq: HandParamsSequence) -> dict:
    frames = []
    for t in range(seq.num_frames):
        frame = {name: getattr(seq, name)[t].tolist() for name in _SEQ_ARRAYS}
        for name in _SEQ_OPTIONAL:
            arr = getattr(seq, name)
            if arr is not None:
                frame[name] = arr[t].tolist()
        frame["labeled"] = bool(seq.labeled[t])
        frames.append(frame)
    return {
        "format": SEQUENCE_FORMAT,
        "version": 1,
        "fps": float(seq.fps),
        "T": seq.num_frames,
        "dims": {name: int(getattr(seq, name).shape[1]) for name in _SEQ_ARRAYS[:4]},
        "frames": frames,
    }


def dumps_sequence(seq: HandParamsSequence) -> str:
    return dumps_document(sequence_to_dict(seq), list_key="frames")


def save_sequence(seq: HandParamsSequence, path) -> None:
    Path(path).write_text(dumps_sequence(seq))


def load_sequence(path) -> HandParamsSequence:
    where = str(path)
    doc = _read_json(path, "sequence file")
    if doc.get("format") != SEQUENCE_FORMAT:
        raise ParseError(f"{where}: field 'format' must be '{SEQUENCE_FORMAT}'")
    fps = doc.get("fps")
    if not isinstance(fps, (int, float)) or isinstance(fps, bool) or not fps > 0:
        raise ParseError(f"{where}: field 'fps' must be a positive number")
    T = _int(doc, "T", where)
    frames = doc.get("frames")
    if not isinstance(frames, list) or len(frames) != T:
        raise ParseError(f"{where}: field 'frames' must list exactly T={T} frames")
    dims = doc.get("dims")
    if not isinstance(dims, dict):
        raise ParseError(f"{where}: missing field 'dims'")
    widths = {name: _int(dims, name, f"{where}: dims") for name in _SEQ_ARRAYS[:4]}
    widths["translation_c"] = 3

    columns = {name: [] for name in _SEQ_ARRAYS}
    optional = {name: [] for name in _SEQ_OPTIONAL}
    labeled = []
    for t, frame in enumerate(frames):
        fw = f"{where}: frame {t}"
        if not isinstance(frame, dict):
            raise ParseError(f"{fw}: expected an object")
        for name in _SEQ_ARRAYS:
            columns[name].append(_field(frame, name, fw, (widths[name],)))
        for name in _SEQ_OPTIONAL:
            arr = _field(frame, name, fw, optional=True)
            if arr is not None and (arr.ndim != 2 or arr.shape[1] != 3):
                raise ParseError(f"{fw}: field '{name}' must be an (n, 3) array")
            optional[name].append(arr)
        flag = frame.get("labeled", False)
        if not isinstance(flag, bool):
            raise ParseError(f"{fw}: field 'labeled' must be true or false")
        labeled.append(flag)

    extra = {}
    for name, values in optional.items():
        present = [v is not None for v in values]
        if any(present) and not all(present):
            missing = present.index(False)
            raise ParseError(f"{where}: frame {missing}: missing field '{name}' present in other frames")
        if all(present) and values:
            shapes = {v.shape for v in values}
            if len(shapes) != 1:
                raise ParseError(f"{where}: field '{name}' changes shape across frames")
            extra[name] = np.stack(values)
    return HandParamsSequence(fps=float(fps), labeled=np.array(labeled, dtype=bool),
                              **{n: np.stack(v) if T else np.zeros((0, widths[n])) for n, v in columns.items()},
                              **extra)


# -- encoder features and weights -----------------------------------------------

FEATURE_KEYS = ("right", "left", "global_1", "global_2")


def save_features(features: dict[str, np.ndarray], path) -> None:
    doc = {"format": FEATURES_FORMAT, "version": 1}
    doc.update({k: np.asarray(v).tolist() for k, v in features.items()})
    Path(path).write_text(dumps_document(doc))


def load_features(path, keys=FEATURE_KEYS) -> dict[str, np.ndarray]:
    where = str(path)
    doc = _read_json(path, "feature file")
    if doc.get("format") != FEATURES_FORMAT:
        raise ParseError(f"{where}: field 'format' must be '{FEATURES_FORMAT}'")
    out = {}
    for k in keys:
        arr = _field(doc, k, where)
        if arr.ndim != 2:
            raise ParseError(f"{where}: field '{k}' must be a (T, C) array")
        out[k] = arr
    return out


def save_weights(data: dict, path) -> None:
    doc = {"format": WEIGHTS_FORMAT, "version": 1}
    doc.update(data)
    Path(path).write_text(dumps_document(doc))


def load_weights_dict(path) -> dict:
    doc = _read_json(path, "weights file")
    if doc.get("format") != WEIGHTS_FORMAT:
        raise ParseError(f"{path}: field 'format' must be '{WEIGHTS_FORMAT}'")
    if not isinstance(doc.get("blocks"), list):
        raise ParseError(f"{path}: missing field 'blocks'")
    return doc


# -- CSV ---------------------------------------------------------------------------

def fmt(value, digits: int = 6) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    Path(path).write_text(buf.getvalue())


def matrix_to_csv(matrix: np.ndarray, path) -> None:
    matrix = np.asarray(matrix)
    write_csv(path, [f"key_{j}" for j in range(matrix.shape[1])], [[repr(float(x)) for x in row] for row in matrix])
