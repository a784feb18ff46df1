"""Training losses for two-hand sequences and their analytic gradients.

Every loss returns a :class:`LossValue` whose ``gradients`` map each input name to an
array of the input's shape. Joint and vertex arrays are in meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .collision import TriMesh, inside_mask, nearest_vertex_distance
from .errors import ContractError


@dataclass
class LossWeights:
    lambda_j: float = 100.0
    lambda_i: float = 10.0
    lambda_m: float = 1.0
    lambda_r: float = 0.1
    lambda_consist: float = 1.0
    lambda_beta: float = 0.1
    alpha: float = 0.02  # meters

    def __post_init__(self):
        for name, value in vars(self).items():
            if not np.isfinite(value) or value < 0:
                raise ContractError(f"loss weight {name} must be finite and non-negative, got {value}")


@dataclass
class LossValue:
    value: float
    gradients: dict[str, np.ndarray] = field(default_factory=dict)


def l_alpha(x, alpha: float):
    """Bounded penalty alpha * tanh(x / alpha): ~x for small x, saturating at alpha."""
    return alpha * np.tanh(np.asarray(x) / alpha)


def l_alpha_grad(x, alpha: float):
    return 1.0 / np.cosh(np.asarray(x) / alpha) ** 2


def _norms_and_units(diff: np.ndarray):
    n = np.linalg.norm(diff, axis=-1)
    safe = np.where(n > 0, n, 1.0)
    # zero-length vectors get the zero subgradient
    return n, np.where((n > 0)[..., None], diff / safe[..., None], 0.0)


def smooth_loss(joint_seq_right, joint_seq_left) -> LossValue:
    """Sum over hands, consecutive frames and joints of the per-joint displacement length."""
    out = LossValue(0.0)
    for name, seq in (("joints_right", joint_seq_right), ("joints_left", joint_seq_left)):
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 3 or seq.shape[-1] != 3:
            raise ContractError(f"{name}: expected (T, J, 3), got {seq.shape}")
        if seq.shape[0] < 2:
            raise ContractError("smooth_loss needs at least two frames")
        n, unit = _norms_and_units(seq[1:] - seq[:-1])
        out.value += float(n.sum())
        grad = np.zeros_like(seq)
        grad[1:] += unit
        grad[:-1] -= unit
        out.gradients[name] = grad
    return out


def interpenetration_masks(meshes_right: Sequence[TriMesh], meshes_left: Sequence[TriMesh]):
    """Per-frame inside masks (right-in-left, left-in-right) from ray parity."""
    if len(meshes_right) != len(meshes_left):
        raise ContractError("need one left mesh per right mesh")
    r_in_l = np.stack([inside_mask(mr.vertices, ml) for mr, ml in zip(meshes_right, meshes_left)])
    l_in_r = np.stack([inside_mask(ml.vertices, mr) for mr, ml in zip(meshes_right, meshes_left)])
    return r_in_l, l_in_r


def interpenetration_from_vertices(verts_right, verts_left, masks, alpha: float) -> LossValue:
    """Penetration penalty with the inside masks held fixed.

    Each masked vertex contributes l_alpha of its distance to the other hand's
    vertex set; the gradient moves it and its nearest partner vertex.
    """
    vr = np.asarray(verts_right, dtype=np.float64)
    vl = np.asarray(verts_left, dtype=np.float64)
    r_in_l, l_in_r = (np.asarray(m, dtype=bool) for m in masks)
    if vr.ndim != 3 or vl.ndim != 3 or vr.shape[0] != vl.shape[0]:
        raise ContractError("vertices must be (T, V, 3) with matching T for both hands")
    grad_r = np.zeros_like(vr)
    grad_l = np.zeros_like(vl)
    value = 0.0
    for t in range(vr.shape[0]):
        for own, other, mask, g_own, g_other in (
            (vr[t], vl[t], r_in_l[t], grad_r[t], grad_l[t]),
            (vl[t], vr[t], l_in_r[t], grad_l[t], grad_r[t]),
        ):
            ids = np.flatnonzero(mask)
            if ids.size == 0:
                continue
            d, nearest = nearest_vertex_distance(own[ids], other)
            value += float(l_alpha(d, alpha).sum())
            _, unit = _norms_and_units(own[ids] - other[nearest])
            g = l_alpha_grad(d, alpha)[:, None] * unit
            np.add.at(g_own, ids, g)
            np.add.at(g_other, nearest, -g)
    return LossValue(value, {"vertices_right": grad_r, "vertices_left": grad_l})


def interpenetration_loss(meshes_right: Sequence[TriMesh], meshes_left: Sequence[TriMesh],
                          alpha: float, masks=None) -> LossValue:
    if masks is None:
        masks = interpenetration_masks(meshes_right, meshes_left)
    vr = np.stack([m.vertices for m in meshes_right])
    vl = np.stack([m.vertices for m in meshes_left])
    return interpenetration_from_vertices(vr, vl, masks, alpha)


def joint_loss(pred, gt, labeled) -> LossValue:
    """Labeled-frame joint error, (1/T) * sum of per-joint distances.

    ``pred`` and ``gt`` are (T, J, 3) or hand-stacked (H, T, J, 3).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim not in (3, 4) or pred.shape[-1] != 3:
        raise ContractError(f"joint_loss: shape mismatch {pred.shape} vs {gt.shape}")
    T = pred.shape[-3]
    gate = np.asarray(labeled, dtype=bool).reshape(T)
    n, unit = _norms_and_units(pred - gt)
    w = gate[:, None].astype(np.float64) / T
    return LossValue(float((n * w).sum()), {"pred": unit * w[..., None]})


def mano_loss(beta_pred_r, beta_pred_l, beta_gt_r, beta_gt_l, labeled, lambda_consist: float) -> LossValue:
    """Shape supervision on labeled frames plus a squared left/right consistency term on predictions."""
    bpr, bpl, bgr, bgl = (np.asarray(b, dtype=np.float64) for b in (beta_pred_r, beta_pred_l, beta_gt_r, beta_gt_l))
    if not (bpr.shape == bpl.shape == bgr.shape == bgl.shape) or bpr.ndim != 2:
        raise ContractError("mano_loss: all beta arrays must share one (T, B) shape")
    gate = np.asarray(labeled, dtype=bool).reshape(bpr.shape[0])[:, None]
    value = 0.0
    grads = {}
    for name, pred, gt in (("beta_pred_r", bpr, bgr), ("beta_pred_l", bpl, bgl)):
        n, unit = _norms_and_units(pred - gt)
        value += float(n[gate[:, 0]].sum())
        grads[name] = unit * gate
    diff = bpr - bpl
    value += lambda_consist * float((diff * diff).sum())
    grads["beta_pred_r"] = grads["beta_pred_r"] + 2.0 * lambda_consist * diff
    grads["beta_pred_l"] = grads["beta_pred_l"] - 2.0 * lambda_consist * diff
    return LossValue(value, grads)


def reg_loss(theta, beta, lambda_beta: float) -> LossValue:
    theta = np.asarray(theta, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(beta))):
        raise ContractError("reg_loss inputs must be finite")
    value = float((theta * theta).sum() + lambda_beta * (beta * beta).sum())
    return LossValue(value, {"theta": 2.0 * theta, "beta": 2.0 * lambda_beta * beta})


_COMPONENT_WEIGHT = {
    "smooth": lambda w: 1.0,
    "joint": lambda w: w.lambda_j,
    "inter": lambda w: w.lambda_i,
    "mano": lambda w: w.lambda_m,
    "reg": lambda w: w.lambda_r,
}


def total_loss(components: dict[str, LossValue], weights: LossWeights) -> LossValue:
    """Weighted sum; smooth carries weight 1. Gradients with the same name accumulate."""
    out = LossValue(0.0)
    for name, comp in components.items():
        if name not in _COMPONENT_WEIGHT:
            raise ContractError(f"unknown loss component {name!r}")
        w = _COMPONENT_WEIGHT[name](weights)
        out.value += w * comp.value
        for key, g in comp.gradients.items():
            out.gradients[key] = out.gradients[key] + w * g if key in out.gradients else w * g
    return out


def check_gradient(fn: Callable[[np.ndarray], tuple[float, np.ndarray]], x, step: float = 1e-6) -> float:
    """Worst coordinate-wise disagreement between ``fn``'s gradient and central differences.

    ``fn(x)`` returns ``(value, gradient)``. The error is relative, falling back to
    absolute when both derivatives are below 1e-8 in magnitude.
    """
    x = np.array(x, dtype=np.float64)
    value, grad = fn(x)
    grad = np.asarray(grad, dtype=np.float64)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise ContractError("loss or gradient is not finite at the check point")
    if grad.shape != x.shape:
        raise ContractError(f"gradient shape {grad.shape} does not match input {x.shape}")
    worst = 0.0
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = fn(x)[0]
        flat[i] = orig - step
        fm = fn(x)[0]
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ContractError(f"non-finite loss while differencing coordinate {i}")
        numeric = (fp - fm) / (2.0 * step)
        scale = max(abs(numeric), abs(gflat[i]))
        err = abs(numeric - gflat[i])
        worst = max(worst, err / scale if scale >= 1e-8 else err)
    return worst
