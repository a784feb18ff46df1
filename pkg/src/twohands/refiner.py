"""Direct optimization of a two-hand parameter sequence against the training objective.

The objective is smooth + lambda_i * inter + lambda_r * reg (+ lambda_j * joint when
ground-truth joints are present) plus an anchor ``anchor_weight * ||x - x0||^2`` that
keeps the result near the initial estimate. Steps are Adam directions on the
loss terms; the anchor is applied as an implicit per-step shrink toward x0
(decoupled, as in AdamW), and every step is backtracked until the full objective
does not increase.
"""

from __future__ import annotations

import csv
import io
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import objectives as obj
from .collision import build_mesh, inside_mask, penetration_report
from .errors import ContractError, DivergenceError
from .hand_model import HandModel, HandParamsFrame, forward, forward_jacobian
from .sequence import HandParamsSequence

log = logging.getLogger(__name__)


@dataclass
class RefineConfig:
    weights: obj.LossWeights = field(default_factory=obj.LossWeights)
    anchor_weight: float = 1.0
    max_iters: int = 500
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    tol: float = 1e-9
    mask_refresh_every: int = 1
    max_backtracks: int = 30
    freeze_translation: bool = False
    threads: int = 1

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ContractError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not self.step_size > 0:
            raise ContractError(f"step_size must be positive, got {self.step_size}")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ContractError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if self.anchor_weight < 0 or self.tol < 0:
            raise ContractError("anchor_weight and tol must be non-negative")
        if self.mask_refresh_every < 1:
            raise ContractError("mask_refresh_every must be >= 1")
        if self.threads < 1:
            raise ContractError("threads must be >= 1")


TRACE_FIELDS = ("iteration", "total", "smooth", "inter", "reg", "joint", "anchor", "mmpd_mm", "max_grad", "step_scale")


@dataclass
class RefineTrace:
    records: list[dict] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_FIELDS)
        for r in self.records:
            writer.writerow([r["iteration"]] + [repr(float(r[k])) for k in TRACE_FIELDS[1:]])
        return buf.getvalue()


class _Problem:
    """Packs the sequence into one parameter vector and evaluates objective and gradient."""

    def __init__(self, model_r: HandModel, model_l: HandModel, seq: HandParamsSequence, config: RefineConfig):
        seq.validate_for(model_r, model_l)
        self.model_r, self.model_l, self.seq, self.cfg = model_r, model_l, seq, config
        self.T = seq.num_frames
        self.parts = [("theta_r", seq.theta_r.shape[1]), ("beta_r", seq.beta_r.shape[1]),
                      ("theta_l", seq.theta_l.shape[1]), ("beta_l", seq.beta_l.shape[1]),
                      ("translation_c", 3)]
        self.frame_size = sum(n for _, n in self.parts)
        self.x0 = self.pack(seq)
        self.free = np.ones_like(self.x0, dtype=bool)
        if config.freeze_translation:
            self.free.reshape(self.T, self.frame_size)[:, -3:] = False
        self.has_gt = seq.gt_joints_r is not None and seq.gt_joints_l is not None and bool(seq.labeled.any())
        self._pool = ThreadPoolExecutor(config.threads) if config.threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()

    def pack(self, seq: HandParamsSequence) -> np.ndarray:
        return np.concatenate([getattr(seq, name) for name, _ in self.parts], axis=1).reshape(-1)

    def unpack(self, x: np.ndarray) -> HandParamsSequence:
        frames = x.reshape(self.T, self.frame_size)
        out, start = {}, 0
        for name, n in self.parts:
            out[name] = frames[:, start:start + n].copy()
            start += n
        return self.seq.copy(**out)

    def _map(self, fn, items):
        if self._pool is None:
            return [fn(i) for i in items]
        return list(self._pool.map(fn, items))

    def _pose(self, x, with_jacobian):
        frames = x.reshape(self.T, self.frame_size)
        nr_t, nr_b, nl_t, nl_b = (n for _, n in self.parts[:4])

        def one(t):
            f = frames[t]
            fr = HandParamsFrame(f[:nr_t], f[nr_t:nr_t + nr_b])
            o = nr_t + nr_b
            fl = HandParamsFrame(f[o:o + nl_t], f[o + nl_t:o + nl_t + nl_b])
            c = f[-3:]
            mr, ml = forward(self.model_r, fr), forward(self.model_l, fl)
            ml.vertices = ml.vertices + c
            ml.joints = ml.joints + c
            jac = (forward_jacobian(self.model_r, fr), forward_jacobian(self.model_l, fl)) if with_jacobian else None
            return mr, ml, jac

        return self._map(one, range(self.T))

    def masks(self, posed):
        def one(item):
            mr, ml, _ = item
            tr = build_mesh(mr.vertices, self.model_r.faces)
            tl = build_mesh(ml.vertices, self.model_l.faces)
            return inside_mask(mr.vertices, tl), inside_mask(ml.vertices, tr)

        pairs = self._map(one, posed)
        return np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs])

    def mmpd_mm(self, posed) -> float:
        def one(item):
            mr, ml, _ = item
            return penetration_report(build_mesh(mr.vertices, self.model_r.faces),
                                      build_mesh(ml.vertices, self.model_l.faces)).max_depth

        return 1000.0 * float(np.mean(self._map(one, posed)))

    def evaluate(self, x, masks=None, with_gradient=True):
        """Return (components, total, gradient, posed, masks)."""
        w = self.cfg.weights
        posed = self._pose(x, with_gradient)
        if masks is None:
            masks = self.masks(posed)
        jr = np.stack([p[0].joints for p in posed])
        jl = np.stack([p[1].joints for p in posed])
        vr = np.stack([p[0].vertices for p in posed])
        vl = np.stack([p[1].vertices for p in posed])
        frames = x.reshape(self.T, self.frame_size)
        nr_t, nr_b, nl_t, nl_b = (n for _, n in self.parts[:4])
        th_r = frames[:, :nr_t]
        be_r = frames[:, nr_t:nr_t + nr_b]
        o = nr_t + nr_b
        th_l = frames[:, o:o + nl_t]
        be_l = frames[:, o + nl_t:o + nl_t + nl_b]

        smooth = obj.smooth_loss(jr, jl)
        inter = obj.interpenetration_from_vertices(vr, vl, masks, w.alpha)
        reg_r = obj.reg_loss(th_r, be_r, w.lambda_beta)
        reg_l = obj.reg_loss(th_l, be_l, w.lambda_beta)
        comps = {"smooth": smooth.value, "inter": inter.value, "reg": reg_r.value + reg_l.value, "joint": 0.0}
        if self.has_gt:
            joint = obj.joint_loss(np.stack([jr, jl]), np.stack([self.seq.gt_joints_r, self.seq.gt_joints_l]),
                                   self.seq.labeled)
            comps["joint"] = joint.value
        d = x - self.x0
        comps["anchor"] = self.cfg.anchor_weight * float(d @ d)
        loss_terms = comps["smooth"] + w.lambda_i * comps["inter"] + w.lambda_r * comps["reg"] + w.lambda_j * comps["joint"]
        total = loss_terms + comps["anchor"]
        if not with_gradient:
            return comps, total, loss_terms, None, posed, masks

        g_jr = smooth.gradients["joints_right"].copy()
        g_jl = smooth.gradients["joints_left"].copy()
        if self.has_gt:
            g_jr += w.lambda_j * joint.gradients["pred"][0]
            g_jl += w.lambda_j * joint.gradients["pred"][1]
        g_vr = w.lambda_i * inter.gradients["vertices_right"]
        g_vl = w.lambda_i * inter.gradients["vertices_left"]

        grad = np.zeros((self.T, self.frame_size))
        for t, (_, _, (jac_r, jac_l)) in enumerate(posed):
            gr = np.einsum("va,van->n", g_vr[t], jac_r.vertices) + np.einsum("ja,jan->n", g_jr[t], jac_r.joints)
            gl = np.einsum("va,van->n", g_vl[t], jac_l.vertices) + np.einsum("ja,jan->n", g_jl[t], jac_l.joints)
            grad[t, :nr_t] = gr[jac_r.theta_slice]
            grad[t, nr_t:o] = gr[jac_r.beta_slice]
            grad[t, o:o + nl_t] = gl[jac_l.theta_slice]
            grad[t, o + nl_t:o + nl_t + nl_b] = gl[jac_l.beta_slice]
            # the left hand is shifted by c, so c sees the summed left-hand gradient
            grad[t, -3:] = g_vl[t].sum(axis=0) + g_jl[t].sum(axis=0)
        grad[:, :nr_t] += w.lambda_r * reg_r.gradients["theta"]
        grad[:, nr_t:o] += w.lambda_r * reg_r.gradients["beta"]
        grad[:, o:o + nl_t] += w.lambda_r * reg_l.gradients["theta"]
        grad[:, o + nl_t:o + nl_t + nl_b] += w.lambda_r * reg_l.gradients["beta"]
        return comps, total, loss_terms, grad.reshape(-1), posed, masks


def _record(it, comps, total, mmpd_mm, grad, step_scale):
    return {"iteration": it, "total": total, "smooth": comps["smooth"], "inter": comps["inter"],
            "reg": comps["reg"], "joint": comps["joint"], "anchor": comps["anchor"], "mmpd_mm": mmpd_mm,
            "max_grad": float(np.abs(grad).max()) if grad is not None and grad.size else 0.0,
            "step_scale": step_scale}


def objective_gradient(model_r, model_l, seq: HandParamsSequence, config: RefineConfig | None = None, masks=None):
    """Objective (without the anchor) and its gradient over the packed parameters.

    Exposed for gradient checks; the packed layout per frame is
    [theta_r, beta_r, theta_l, beta_l, c].
    """
    config = config or RefineConfig()
    problem = _Problem(model_r, model_l, seq, config)
    try:
        _, _, loss_terms, grad, _, masks = problem.evaluate(problem.x0, masks)
    finally:
        problem.close()
    return loss_terms, grad, masks


def refine_sequence(model_r: HandModel, model_l: HandModel, init: HandParamsSequence,
                    config: RefineConfig | None = None) -> tuple[HandParamsSequence, RefineTrace]:
    config = config or RefineConfig()
    problem = _Problem(model_r, model_l, init, config)
    trace = RefineTrace()
    cfg = config
    try:
        x = problem.x0.copy()
        comps, f, _, grad, posed, masks = problem.evaluate(x)
        if not np.isfinite(f):
            raise DivergenceError("initial objective is not finite", trace)
        trace.records.append(_record(0, comps, f, problem.mmpd_mm(posed), grad, 0.0))
        m = np.zeros_like(x)
        v = np.zeros_like(x)
        best_x, best_f = x.copy(), f
        moment_start = 0
        restarted = False
        for it in range(1, cfg.max_iters + 1):
            g = np.where(problem.free, grad, 0.0)
            m = cfg.beta1 * m + (1 - cfg.beta1) * g
            v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
            k = it - moment_start
            m_hat = m / (1 - cfg.beta1**k)
            v_hat = v / (1 - cfg.beta2**k)
            direction = m_hat / (np.sqrt(v_hat) + 1e-8)

            scale = 1.0
            accepted = None
            for _ in range(cfg.max_backtracks + 1):
                lr = scale * cfg.step_size
                y = x - lr * direction
                # implicit anchor step: argmin_z ||z - y||^2 / (2 lr) + a ||z - x0||^2
                shrink = 2.0 * lr * cfg.anchor_weight
                trial = np.where(problem.free, (y + shrink * problem.x0) / (1.0 + shrink), x)
                refresh = (it % cfg.mask_refresh_every) == 0
                t_comps, t_f, _, _, _, t_masks = problem.evaluate(trial, None if refresh else masks,
                                                                   with_gradient=False)
                if not np.isfinite(t_f):
                    trace.records.append(_record(it, t_comps, t_f, float("nan"), None, scale))
                    raise DivergenceError(f"objective became non-finite at iteration {it}", trace)
                if t_f <= f:
                    accepted = trial
                    break
                scale *= 0.5

            if accepted is None:
                trace.records.append(_record(it, comps, f, problem.mmpd_mm(posed), grad, 0.0))
                if restarted:
                    log.debug("no descent step after a moment reset at iteration %d; stopping", it)
                    break
                # mask flips and nearest-vertex switches make the objective piecewise;
                # stale moments can point across a jump, so restart them once
                m[:] = 0.0
                v[:] = 0.0
                moment_start = it
                restarted = True
                continue
            restarted = False
            f_prev = f
            x = accepted
            comps, f, _, grad, posed, masks = problem.evaluate(x, t_masks)
            trace.records.append(_record(it, comps, f, problem.mmpd_mm(posed), grad, scale))
            if refresh and f <= best_f:
                # only refreshed iterates carry a true objective value
                best_x, best_f = x.copy(), f
            if (f_prev - f) <= cfg.tol * max(abs(f_prev), 1e-300):
                break

        if cfg.mask_refresh_every > 1:
            # stale masks may have hidden an increase; fall back to the best true objective
            _, f_true, *_ = problem.evaluate(x, None, with_gradient=False)
            if f_true > best_f:
                x = best_x
        return problem.unpack(x), trace
    finally:
        problem.close()
