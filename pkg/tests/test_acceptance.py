"""Acceptance suite: one test, and one PASS/FAIL summary line, per criterion."""

import time

import numpy as np
from scipy.spatial.transform import Rotation

from oracles import convex_inside_oracle, kinematics_oracle
from twohands.cli import main
from twohands.collision import box_mesh, build_mesh, icosphere, inside_mask, penetration_report
from twohands.config import DEFAULT_SEQUENCE_LENGTH, FULL_MODEL_JOINTS, FULL_MODEL_VERTICES, RunConfig
from twohands.hand_model import HandParamsFrame, forward
from twohands.metrics import accel_error, mmpd, mpjpe, pa_mpjpe
from twohands.objectives import (
    LossWeights,
    check_gradient,
    interpenetration_from_vertices,
    joint_loss,
    mano_loss,
    reg_loss,
    smooth_loss,
    total_loss,
)
from twohands.refiner import refine_sequence
from twohands.sequence import mesh_pairs, pose_sequence, synthesize_sequence
from twohands.temporal_encoder import encoder_forward, init_encoder_weights, temporal_block_forward


def timed(fn):
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


# 1 -------------------------------------------------------------------------------

def test_criterion_01_constants(acceptance):
    def run():
        cfg = RunConfig()
        w = cfg.weights
        return [
            (w.lambda_j, w.lambda_i, w.lambda_m, w.lambda_r) == (100.0, 10.0, 1.0, 0.1),
            w.lambda_consist == 1.0,
            w.lambda_beta == 0.1,
            w.alpha == 0.02,
            cfg.synth.frames == DEFAULT_SEQUENCE_LENGTH == 10,
            FULL_MODEL_VERTICES == 778,
            FULL_MODEL_JOINTS == 21,
        ]

    checks, dt = timed(run)
    ok = all(checks) and dt < 1.0
    acceptance(1, "constants", ok, f"{sum(checks)}/{len(checks)} exact, {dt:.3f}s")
    assert ok


# 2 -------------------------------------------------------------------------------

T, J, VR, VL, B, D = 4, 7, 12, 10, 2, 15
POINTS = 20
SCALE = 0.05
# Hand-scale inputs: penetrating vertices lie within about alpha of the other hand and
# predicted joints within millimeters of ground truth. Far outside that regime the tanh
# saturates, true derivatives drop to 1e-7, and central-difference roundoff dominates.
NEAR = 0.01
JITTER = 0.005
POSE = 0.3


def _split(x, sizes):
    out, i = [], 0
    for shape in sizes:
        n = int(np.prod(shape))
        out.append(x[i:i + n].reshape(shape))
        i += n
    return out


def _tie_gap(vr, vl):
    gap = np.inf
    for t in range(vr.shape[0]):
        d = np.linalg.norm(vr[t][:, None] - vl[t][None], axis=-1)
        for rows in (np.sort(d, axis=1), np.sort(d.T, axis=1)):
            gap = min(gap, float((rows[:, 1] - rows[:, 0]).min()))
    return gap


def _loss_functions(rng):
    lab = rng.random(T) < 0.7
    lab[0] = True
    gt = SCALE * rng.normal(size=(2, T, J, 3))
    bgt = rng.normal(size=(2, T, B))
    masks = (rng.random((T, VR)) < 0.5, rng.random((T, VL)) < 0.5)
    weights = LossWeights()

    def smooth(x):
        jr, jl = _split(x, [(T, J, 3), (T, J, 3)])
        out = smooth_loss(jr, jl)
        return out.value, np.concatenate([out.gradients["joints_right"].ravel(), out.gradients["joints_left"].ravel()])

    def inter(x):
        vr, vl = _split(x, [(T, VR, 3), (T, VL, 3)])
        out = interpenetration_from_vertices(vr, vl, masks, weights.alpha)
        return out.value, np.concatenate([out.gradients["vertices_right"].ravel(),
                                          out.gradients["vertices_left"].ravel()])

    def joint(x):
        out = joint_loss(x.reshape(gt.shape), gt, lab)
        return out.value, out.gradients["pred"].ravel()

    def mano(x):
        br, bl = _split(x, [(T, B), (T, B)])
        out = mano_loss(br, bl, bgt[0], bgt[1], lab, weights.lambda_consist)
        return out.value, np.concatenate([out.gradients["beta_pred_r"].ravel(), out.gradients["beta_pred_l"].ravel()])

    def reg(x):
        th, be = _split(x, [(T, D), (T, B)])
        out = reg_loss(th, be, weights.lambda_beta)
        return out.value, np.concatenate([out.gradients["theta"].ravel(), out.gradients["beta"].ravel()])

    def total(x):
        jr, jl, vr, vl, br, bl, th = _split(x, [(T, J, 3), (T, J, 3), (T, VR, 3), (T, VL, 3), (T, B), (T, B), (T, D)])
        comps = {
            "smooth": smooth_loss(jr, jl),
            "joint": joint_loss(np.stack([jr, jl]), gt, lab),
            "inter": interpenetration_from_vertices(vr, vl, masks, weights.alpha),
            "mano": mano_loss(br, bl, bgt[0], bgt[1], lab, weights.lambda_consist),
            "reg": reg_loss(th, br, weights.lambda_beta),
        }
        g = total_loss(comps, weights).gradients
        grad = [g["joints_right"] + g["pred"][0], g["joints_left"] + g["pred"][1], g["vertices_right"],
                g["vertices_left"], g["beta_pred_r"] + g["beta"], g["beta_pred_l"], g["theta"]]
        return total_loss(comps, weights).value, np.concatenate([a.ravel() for a in grad])

    sizes = {
        "smooth": 2 * T * J * 3,
        "inter": T * (VR + VL) * 3,
        "joint": 2 * T * J * 3,
        "mano": 2 * T * B,
        "reg": T * (D + B),
        "total": 2 * T * J * 3 + T * (VR + VL) * 3 + 2 * T * B + T * D,
    }
    fns = {"smooth": smooth, "inter": inter, "joint": joint, "mano": mano, "reg": reg, "total": total}

    def vertices():
        # the loss has kinks where a vertex's nearest partner changes; redraw points
        # whose two nearest candidates are within ten difference steps of a tie
        while True:
            vr, vl = NEAR * rng.normal(size=(T, VR, 3)), NEAR * rng.normal(size=(T, VL, 3))
            if _tie_gap(vr, vl) > 1e-5:
                return np.concatenate([vr.ravel(), vl.ravel()])

    def sample(name):
        if name == "inter":
            return vertices()
        if name == "joint":
            return (gt + JITTER * rng.normal(size=gt.shape)).ravel()
        if name == "total":
            # realistic pose angles and near-target betas keep every derivative well above
            # the float quantization of the summed loss divided by the difference step
            joints = gt + JITTER * rng.normal(size=gt.shape)
            betas = bgt + SCALE * rng.normal(size=bgt.shape)
            theta = POSE * rng.normal(size=T * D)
            return np.concatenate([joints.ravel(), vertices(), betas.ravel(), theta])
        return SCALE * rng.normal(size=sizes[name])

    return fns, sample


def test_criterion_02_gradients(acceptance):
    def run():
        worst = {}
        for name in ("smooth", "inter", "joint", "mano", "reg", "total"):
            errs = []
            for k in range(POINTS):
                rng = np.random.default_rng([2, k])
                fns, sample = _loss_functions(rng)
                errs.append(check_gradient(fns[name], sample(name)))
            worst[name] = max(errs)
        return worst

    worst, dt = timed(run)
    ok = all(e < 1e-4 for e in worst.values()) and dt < 30.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    acceptance(2, "gradient suite", ok, f"max rel err {detail}; {dt:.1f}s")
    assert ok


# 3 -------------------------------------------------------------------------------

def test_criterion_03_inside_oracle(acceptance):
    def run():
        result = {}
        for name, (v, f) in (("sphere", icosphere(0.5, 3)), ("box", box_mesh((0.05, -0.1, 0.02), 0.8))):
            pts = np.random.default_rng(3).uniform(-0.7, 0.7, size=(10_000, 3))
            inside, decided = convex_inside_oracle(pts, v, f, 1e-6)
            got = inside_mask(pts, build_mesh(v, f))
            result[name] = (int((got[decided] != inside[decided]).sum()), int(decided.sum()))
        return result

    result, dt = timed(run)
    ok = all(bad == 0 for bad, _ in result.values()) and dt < 10.0
    detail = ", ".join(f"{k} {n - bad}/{n} agree" for k, (bad, n) in result.items())
    acceptance(3, "inside-test oracle", ok, f"{detail} outside the 1e-6 band; {dt:.1f}s")
    assert ok


# 4 -------------------------------------------------------------------------------

def test_criterion_04_cube_depth(acceptance):
    def run():
        a = build_mesh(*box_mesh())
        overlap = penetration_report(a, build_mesh(*box_mesh((0.5, 0.5, 0.5))))
        apart = penetration_report(a, build_mesh(*box_mesh((1.5, 0.0, 0.0))))
        return overlap.max_depth, apart.max_depth

    (overlap, apart), dt = timed(run)
    ok = abs(overlap - 0.5) < 1e-9 and apart == 0.0 and dt < 1.0
    acceptance(4, "cube penetration depth", ok, f"offset (0.5,0.5,0.5) -> {overlap!r} m, disjoint -> {apart!r}")
    assert ok


# 5 -------------------------------------------------------------------------------

def test_criterion_05_procrustes(acceptance):
    def run():
        rng = np.random.default_rng(5)
        worst_pa = 0.0
        for _ in range(100):
            gt = 0.05 * rng.normal(size=(21, 3))
            R = Rotation.random(random_state=rng.integers(1 << 31)).as_matrix()
            pred = rng.uniform(0.5, 2.0) * gt @ R.T + rng.normal(size=3)
            worst_pa = max(worst_pa, pa_mpjpe(pred[None], gt[None]))
        violations = 0
        for _ in range(100):
            gt = 0.05 * rng.normal(size=(1, 21, 3))
            pred = gt + 0.005 * rng.normal(size=gt.shape)
            violations += pa_mpjpe(pred, gt) > mpjpe(pred, gt)
        return worst_pa, violations

    (worst_pa, violations), dt = timed(run)
    ok = worst_pa < 1e-6 and violations == 0 and dt < 5.0
    acceptance(5, "Procrustes", ok, f"max PA-MPJPE {worst_pa:.1e} mm, PA > MPJPE in {violations}/100 noisy pairs")
    assert ok


# 6 -------------------------------------------------------------------------------

def test_criterion_06_accel(acceptance):
    def run():
        rng = np.random.default_rng(6)
        t = np.arange(10.0)[:, None, None]
        worst_zero = 0.0
        worst_scale = 0.0
        for _ in range(20):
            # hand-scale motion: decimeter positions moving centimeters per frame
            a = 0.1 * rng.normal(size=(1, 21, 3)) + t * 0.01 * rng.normal(size=(1, 21, 3))
            b = 0.1 * rng.normal(size=(1, 21, 3)) + t * 0.01 * rng.normal(size=(1, 21, 3))
            worst_zero = max(worst_zero, accel_error(a, b, 30.0))
            pred, gt = rng.normal(size=(10, 21, 3)), rng.normal(size=(10, 21, 3))
            base = accel_error(pred, gt, 30.0)
            for s in (0.5, 2.0, 3.3):
                worst_scale = max(worst_scale, abs(accel_error(pred, gt, 30.0 * s) / (s * s * base) - 1.0))
        return worst_zero, worst_scale

    (zero, scale), dt = timed(run)
    ok = zero < 1e-9 and scale < 1e-9 and dt < 1.0
    acceptance(6, "Accel_E", ok, f"constant velocity {zero:.1e}, fps scaling rel err {scale:.1e}")
    assert ok


# 7 -------------------------------------------------------------------------------

def test_criterion_07_refiner(acceptance, mini_right, mini_left):
    seq = synthesize_sequence(mini_right, mini_left, "colliding", T=10, seed=0)

    def run():
        return refine_sequence(mini_right, mini_left, seq)

    (refined, trace), dt = timed(run)
    pairs = mesh_pairs(mini_right, mini_left, pose_sequence(mini_right, mini_left, refined))
    before = mmpd(mesh_pairs(mini_right, mini_left, pose_sequence(mini_right, mini_left, seq)))
    after = mmpd(pairs)
    jr0 = pose_sequence(mini_right, mini_left, seq)
    jr1 = pose_sequence(mini_right, mini_left, refined)
    s0 = smooth_loss(jr0.joints_r, jr0.joints_l).value
    s1 = smooth_loss(jr1.joints_r, jr1.joints_l).value
    iters = trace.records[-1]["iteration"]
    ok = after < 0.1 and iters <= 500 and s1 <= 1.1 * s0 and dt < 60.0
    acceptance(7, "refiner efficacy", ok,
               f"MMPD {before:.3f} -> {after:.4f} mm in {iters} iterations, smooth {s0:.4g} -> {s1:.4g}; {dt:.1f}s")
    assert ok


# 8 -------------------------------------------------------------------------------

def test_criterion_08_kinematics(acceptance, mini_right):
    def run():
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(20):
            frame = HandParamsFrame(rng.normal(scale=0.4, size=mini_right.theta_dim),
                                    rng.normal(scale=0.5, size=mini_right.num_betas), rng.normal(scale=0.1, size=3))
            _, joints = kinematics_oracle(mini_right, frame.theta, frame.beta, frame.translation)
            worst = max(worst, np.abs(forward(mini_right, frame).joints - joints).max())
        rest = forward(mini_right, HandParamsFrame(np.zeros(mini_right.theta_dim), np.zeros(mini_right.num_betas)))
        return worst, np.abs(rest.vertices - mini_right.template_vertices).max()

    (worst, rest), dt = timed(run)
    ok = worst < 1e-6 and rest < 1e-12 and dt < 5.0
    acceptance(8, "kinematics oracle", ok, f"max joint diff {worst:.1e} m, zero pose {rest:.1e} m")
    assert ok


# 9 -------------------------------------------------------------------------------

def test_criterion_09_encoder(acceptance):
    def run():
        rng = np.random.default_rng(9)
        feats = [rng.normal(size=(10, c)) for c in (32, 32, 32, 16)]
        w = init_encoder_weights(0, dims=(32, 16, 8), global_dims=(32, 16))
        a = encoder_forward(*feats, w)
        b = encoder_forward(*feats, w)
        mid = temporal_block_forward(feats[0], feats[1], feats[2], w.blocks[0])
        row_err = max(np.abs(m.sum(axis=-1) - 1.0).max() for block in a[2] for m in block.values())
        shapes = (mid[0].shape, mid[1].shape, a[0].shape, a[1].shape)
        same = all(np.array_equal(x, y) for x, y in zip(a[:2], b[:2])) and all(
            np.array_equal(a[2][i][k], b[2][i][k]) for i in range(len(a[2])) for k in a[2][i])
        return row_err, shapes, same

    (row_err, shapes, same), dt = timed(run)
    ok = row_err < 1e-6 and shapes == ((10, 16), (10, 16), (10, 8), (10, 8)) and same and dt < 5.0
    acceptance(9, "encoder invariants", ok,
               f"row sum err {row_err:.1e}, 32 -> {shapes[0][1]} -> {shapes[2][1]} channels, bitwise repeat {same}")
    assert ok


# 10 ------------------------------------------------------------------------------

def _pipeline(out):
    assert main(["synth", "colliding", "--seed", "0", "--out", str(out)]) == 0
    assert main(["refine", str(out / "sequence.json"), "--seed", "0", "--out", str(out)]) == 0
    assert main(["evaluate", str(out / "refined.json"), str(out / "sequence.json"), "--seed", "0",
                 "--out", str(out)]) == 0
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_criterion_10_end_to_end(acceptance, tmp_path, capsys):
    (first, second), dt = timed(lambda: (_pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")))
    capsys.readouterr()
    same = first.keys() == second.keys() and all(first[k] == second[k] for k in first)
    ok = same and len(first) >= 6 and dt < 90.0
    acceptance(10, "end-to-end determinism", ok, f"{len(first)} files byte-identical: {same}; {dt:.1f}s")
    assert ok
