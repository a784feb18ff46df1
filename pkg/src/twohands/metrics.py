"""Pose, mesh, temporal and penetration metrics. Inputs in meters, outputs in millimeters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .collision import TriMesh, penetration_report
from .errors import AlignmentError, ContractError

M_TO_MM = 1000.0
PCK_MAX_MM = 50.0
PCK_STEPS = 51


def _check_pair(pred, gt, min_frames=1):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 3 or pred.shape[-1] != 3:
        raise ContractError(f"expected matching (T, J, 3) arrays, got {pred.shape} and {gt.shape}")
    if pred.shape[0] < min_frames:
        raise ContractError(f"need at least {min_frames} frame(s), got {pred.shape[0]}")
    return pred, gt


def root_aligned_errors(pred, gt, root_index: int = 0) -> np.ndarray:
    """Per-frame, per-joint distance in mm after subtracting each frame's root joint."""
    pred, gt = _check_pair(pred, gt)
    p = pred - pred[:, root_index:root_index + 1]
    g = gt - gt[:, root_index:root_index + 1]
    return np.linalg.norm(p - g, axis=-1) * M_TO_MM


def mpjpe(pred, gt, root_index: int = 0) -> float:
    return float(root_aligned_errors(pred, gt, root_index).mean())


def similarity_align(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Apply the least-squares similarity transform (s, R, t) mapping ``source`` onto ``target``.

    Umeyama's closed form on the centered cross-covariance, with the reflection
    correction keeping det(R) = +1.
    """
    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    xs = source - mu_s
    xt = target - mu_t
    if np.linalg.svd(xt, compute_uv=False)[1] <= 1e-12 * max(np.abs(xt).max(), 1e-300):
        raise AlignmentError("target joints are collinear; rotation is not determined")
    var_s = (xs * xs).sum()
    if var_s <= 0:
        raise AlignmentError("source joints coincide; scale is not determined")
    U, S, Vt = np.linalg.svd(xt.T @ xs)
    D = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[-1] = -1.0
    R = U @ np.diag(D) @ Vt
    scale = (S * D).sum() / var_s
    return scale * xs @ R.T + mu_t


def pa_mpjpe_per_frame(pred, gt) -> np.ndarray:
    pred, gt = _check_pair(pred, gt)
    if pred.shape[1] < 3:
        raise ContractError("Procrustes alignment needs at least 3 joints")
    return np.array([
        (np.linalg.norm(similarity_align(p, g) - g, axis=-1) * M_TO_MM).mean() for p, g in zip(pred, gt)
    ])


def pa_mpjpe(pred, gt) -> float:
    return float(pa_mpjpe_per_frame(pred, gt).mean())


def mpvpe(pred_vertices, gt_vertices, pred_root, gt_root) -> float:
    """Mean per-vertex error in mm after subtracting the per-frame root joints (T, 3)."""
    pred_vertices, gt_vertices = _check_pair(pred_vertices, gt_vertices)
    pr = np.asarray(pred_root, dtype=np.float64).reshape(-1, 1, 3)
    gr = np.asarray(gt_root, dtype=np.float64).reshape(-1, 1, 3)
    if len(pr) != len(pred_vertices) or len(gr) != len(gt_vertices):
        raise ContractError("need one root position per frame")
    return float((np.linalg.norm((pred_vertices - pr) - (gt_vertices - gr), axis=-1) * M_TO_MM).mean())


def pck_auc(pred, gt, root_index: int = 0, max_threshold_mm: float = PCK_MAX_MM,
            steps: int = PCK_STEPS) -> tuple[list[tuple[float, float]], float]:
    errors = root_aligned_errors(pred, gt, root_index).reshape(-1)
    return pck_curve_from_errors(errors, max_threshold_mm, steps)


def pck_curve_from_errors(errors_mm, max_threshold_mm: float = PCK_MAX_MM, steps: int = PCK_STEPS):
    errors_mm = np.asarray(errors_mm, dtype=np.float64).reshape(-1)
    thresholds = np.linspace(0.0, max_threshold_mm, steps)
    pck = (errors_mm[None, :] <= thresholds[:, None]).mean(axis=1)
    auc = float(np.trapezoid(pck, thresholds) / max_threshold_mm)
    return [(float(t), float(p)) for t, p in zip(thresholds, pck)], auc


def accel_error_per_frame(pred, gt, fps: float) -> np.ndarray:
    pred, gt = _check_pair(pred, gt, min_frames=3)
    if not fps > 0:
        raise ContractError("fps must be positive")
    acc_p = (pred[2:] - 2.0 * pred[1:-1] + pred[:-2]) * fps**2
    acc_g = (gt[2:] - 2.0 * gt[1:-1] + gt[:-2]) * fps**2
    return (np.linalg.norm(acc_p - acc_g, axis=-1) * M_TO_MM).mean(axis=1)


def accel_error(pred, gt, fps: float) -> float:
    """Mean acceleration difference over interior frames and joints, mm/s^2."""
    return float(accel_error_per_frame(pred, gt, fps).mean())


def mmpd_per_frame(mesh_pairs: Sequence[tuple[TriMesh, TriMesh]]) -> np.ndarray:
    return np.array([penetration_report(r, l).max_depth * M_TO_MM for r, l in mesh_pairs])


def mmpd(mesh_pairs: Sequence[tuple[TriMesh, TriMesh]]) -> float:
    """Mean over frames of the deepest right-hand vertex inside the left hand, mm."""
    if len(mesh_pairs) == 0:
        raise ContractError("mmpd needs at least one frame")
    return float(mmpd_per_frame(mesh_pairs).mean())


@dataclass
class MetricsReport:
    """Two-hand metrics; ``None`` marks a metric with no labeled frames to score."""

    mpjpe_mm: float | None
    pa_mpjpe_mm: float | None
    mpvpe_mm: float | None
    auc: float | None
    pck_curve: list[tuple[float, float]] | None
    accel_err_mm_s2: float | None
    mmpd_mm: float
    per_frame: dict[str, list[float | None]] = field(default_factory=dict)

    def table_rows(self) -> list[tuple[str, float | None, str]]:
        return [
            ("mpjpe", self.mpjpe_mm, "mm"),
            ("pa_mpjpe", self.pa_mpjpe_mm, "mm"),
            ("mpvpe", self.mpvpe_mm, "mm"),
            ("auc", self.auc, "ratio"),
            ("accel_e", self.accel_err_mm_s2, "mm/s^2"),
            ("mmpd", self.mmpd_mm, "mm"),
        ]


def _mean_or_none(values):
    return None if any(v is None for v in values) else float(np.mean(values))


def evaluate(pred_joints: dict[str, np.ndarray], gt_joints: dict[str, np.ndarray],
             pred_vertices: dict[str, np.ndarray], gt_vertices: dict[str, np.ndarray],
             labeled, fps: float, mesh_pairs, root_index: int = 0,
             pck_max_mm: float = PCK_MAX_MM, pck_steps: int = PCK_STEPS) -> MetricsReport:
    """Full report for one sequence pair; hands keyed 'right' and 'left'.

    Joint metrics use labeled frames only and are averaged over the two hands with
    equal weight. Acceleration uses only frame triples that are all labeled.
    """
    labeled = np.asarray(labeled, dtype=bool)
    T = len(labeled)
    idx = np.flatnonzero(labeled)
    hands = ("right", "left")
    per_frame: dict[str, list] = {}

    mp, pa, mv, acc, all_err = [], [], [], [], []
    for h in hands:
        pj, gj = np.asarray(pred_joints[h]), np.asarray(gt_joints[h])
        pv, gv = np.asarray(pred_vertices[h]), np.asarray(gt_vertices[h])
        frame_mpjpe = [None] * T
        frame_pa = [None] * T
        frame_mpvpe = [None] * T
        if idx.size:
            err = root_aligned_errors(pj[idx], gj[idx], root_index)
            all_err.append(err.reshape(-1))
            pa_f = pa_mpjpe_per_frame(pj[idx], gj[idx])
            mv_f = np.linalg.norm(
                (pv[idx] - pj[idx, root_index:root_index + 1]) - (gv[idx] - gj[idx, root_index:root_index + 1]),
                axis=-1,
            ).mean(axis=1) * M_TO_MM
            for k, t in enumerate(idx):
                frame_mpjpe[t] = float(err[k].mean())
                frame_pa[t] = float(pa_f[k])
                frame_mpvpe[t] = float(mv_f[k])
            mp.append(float(err.mean()))
            pa.append(float(pa_f.mean()))
            mv.append(float(mv_f.mean()))
        else:
            mp.append(None)
            pa.append(None)
            mv.append(None)
        triples = [t for t in range(1, T - 1) if labeled[t - 1] and labeled[t] and labeled[t + 1]]
        frame_acc = [None] * T
        if triples:
            full = accel_error_per_frame(pj, gj, fps)
            for t in triples:
                frame_acc[t] = float(full[t - 1])
            acc.append(float(np.mean([full[t - 1] for t in triples])))
        else:
            acc.append(None)
        per_frame[f"mpjpe_{h}"] = frame_mpjpe
        per_frame[f"pa_mpjpe_{h}"] = frame_pa
        per_frame[f"mpvpe_{h}"] = frame_mpvpe
        per_frame[f"accel_e_{h}"] = frame_acc

    depth = mmpd_per_frame(mesh_pairs)
    per_frame["mmpd"] = [float(d) for d in depth]

    curve, auc = (None, None)
    if all_err:
        # per-hand curves averaged, matching the per-hand aggregation of the other metrics
        curves = [pck_curve_from_errors(e, pck_max_mm, pck_steps) for e in all_err]
        curve = [(curves[0][0][i][0], float(np.mean([c[0][i][1] for c in curves])))
                 for i in range(len(curves[0][0]))]
        auc = float(np.mean([c[1] for c in curves]))

    return MetricsReport(
        mpjpe_mm=_mean_or_none(mp),
        pa_mpjpe_mm=_mean_or_none(pa),
        mpvpe_mm=_mean_or_none(mv),
        auc=auc,
        pck_curve=curve,
        accel_err_mm_s2=_mean_or_none(acc),
        mmpd_mm=float(depth.mean()),
        per_frame=per_frame,
    )
