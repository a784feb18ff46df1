"""``twohands`` command line: evaluate, collide, refine, synth, encode.

Exit codes: 0 success, 2 usage, 3 input error, 4 numerical divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import formats
from .collision import build_mesh, penetration_report
from .config import RunConfig, load_config
from .errors import DivergenceError, TwoHandsError
from .hand_model import HandModel, forward, generate_mini_hand, mesh_to_obj
from .metrics import M_TO_MM, evaluate
from .refiner import refine_sequence
from .sequence import SCENARIOS, HandParamsSequence, pose_sequence, synthesize_sequence
from .temporal_encoder import encoder_forward, init_encoder_weights, weights_from_dict, weights_to_dict

log = logging.getLogger("twohands")

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_DIVERGENCE = 0, 2, 3, 4


class _Context:
    def __init__(self, args):
        self.args = args
        self.config: RunConfig = load_config(args.config) if args.config else RunConfig()
        self.seed: int = args.seed
        self.threads: int = args.threads
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def models(self) -> tuple[HandModel, HandModel]:
        ms = self.config.models
        right = formats.load_model(ms.right) if ms.right else generate_mini_hand(ms.mini_hand_seed, "right")
        left = formats.load_model(ms.left) if ms.left else generate_mini_hand(ms.mini_hand_seed, "left")
        if right.side != "right" or left.side != "left":
            raise TwoHandsError("model files: the right/left model paths hold the wrong sides")
        return right, left

    def map(self, fn, items):
        items = list(items)
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(i) for i in items]


def _frame_meshes(ctx, model_r, model_l, posed):
    return ctx.map(lambda t: (build_mesh(posed.right[t].vertices, model_r.faces),
                              build_mesh(posed.left[t].vertices, model_l.faces)),
                   range(len(posed.right)))


def _gt_arrays(model_r, model_l, seq: HandParamsSequence):
    """Ground-truth joints/vertices from the file when present, else by forward kinematics."""
    posed = None
    out = {}
    for key, attr in (("joints_r", "gt_joints_r"), ("joints_l", "gt_joints_l"),
                      ("vertices_r", "gt_vertices_r"), ("vertices_l", "gt_vertices_l")):
        arr = getattr(seq, attr)
        if arr is None:
            posed = posed or pose_sequence(model_r, model_l, seq)
            arr = getattr(posed, key)
        out[key] = arr
    return out


# -- commands ----------------------------------------------------------------------

def cmd_synth(ctx: _Context) -> int:
    a = ctx.args
    model_r, model_l = ctx.models()
    s = ctx.config.synth
    T = a.frames if a.frames is not None else s.frames
    seq = synthesize_sequence(model_r, model_l, a.scenario, T=T, seed=ctx.seed, noise=s.noise, fps=s.fps)
    path = ctx.out / a.output
    formats.save_sequence(seq, path)
    print(f"wrote {path} ({T} frames, scenario {a.scenario}, seed {ctx.seed})")
    return EXIT_OK


def cmd_collide(ctx: _Context) -> int:
    a = ctx.args
    model_r, model_l = ctx.models()
    seq = formats.load_sequence(a.sequence)
    seq.validate_for(model_r, model_l)
    posed = pose_sequence(model_r, model_l, seq)
    pairs = _frame_meshes(ctx, model_r, model_l, posed)
    reports = ctx.map(lambda p: penetration_report(*p), pairs)

    rows = [[t, r.penetrating_count, formats.fmt(r.max_depth * M_TO_MM), int(r.inside_mask_left_in_right.sum())]
            for t, r in enumerate(reports)]
    formats.write_csv(ctx.out / "collisions.csv",
                      ["frame", "penetrating_count", "max_depth_mm", "left_in_right_count"], rows)
    (ctx.out / "collisions.txt").write_text("".join(r.to_record(t) + "\n" for t, r in enumerate(reports)))
    mmpd_mm = float(np.mean([r.max_depth for r in reports])) * M_TO_MM if reports else 0.0
    (ctx.out / "summary.txt").write_text(f"frames={len(reports)}\nmmpd_mm={formats.fmt(mmpd_mm)}\n")

    if a.obj:
        mesh_dir = ctx.out / "meshes"
        mesh_dir.mkdir(exist_ok=True)
        for t in range(seq.num_frames):
            (mesh_dir / f"frame_{t:04d}_right.obj").write_text(mesh_to_obj(posed.right[t], model_r.faces))
            (mesh_dir / f"frame_{t:04d}_left.obj").write_text(mesh_to_obj(posed.left[t], model_l.faces))
    print(f"MMPD {formats.fmt(mmpd_mm)} mm over {len(reports)} frames")
    return EXIT_OK


def cmd_refine(ctx: _Context) -> int:
    a = ctx.args
    model_r, model_l = ctx.models()
    seq = formats.load_sequence(a.sequence)
    seq.validate_for(model_r, model_l)
    config = ctx.config.refine_config(threads=ctx.threads)
    if a.max_iters is not None:
        config = type(config)(**{**vars(config), "max_iters": a.max_iters})
    trace_path = ctx.out / "trace.csv"
    try:
        refined, trace = refine_sequence(model_r, model_l, seq, config)
    except DivergenceError as exc:
        trace_path.write_text(exc.trace.to_csv() if exc.trace is not None else "")
        raise
    trace_path.write_text(trace.to_csv())
    formats.save_sequence(refined, ctx.out / a.output)
    first, last = trace.records[0], trace.records[-1]
    print(f"iterations {last['iteration']}")
    print(f"loss {first['total']:.6g} -> {last['total']:.6g}")
    print(f"MMPD {first['mmpd_mm']:.6f} mm -> {last['mmpd_mm']:.6f} mm")
    return EXIT_OK


def cmd_evaluate(ctx: _Context) -> int:
    a = ctx.args
    model_r, model_l = ctx.models()
    pred = formats.load_sequence(a.pred)
    gt = formats.load_sequence(a.gt)
    pred.validate_for(model_r, model_l)
    gt.validate_for(model_r, model_l)
    if pred.num_frames != gt.num_frames:
        raise TwoHandsError(f"{a.pred}: {pred.num_frames} frames but {a.gt} has {gt.num_frames}")
    posed = pose_sequence(model_r, model_l, pred)
    ref = _gt_arrays(model_r, model_l, gt)
    for key in ("joints_r", "joints_l", "vertices_r", "vertices_l"):
        if ref[key].shape[1:] != getattr(posed, key).shape[1:]:
            raise TwoHandsError(f"{a.gt}: ground-truth {key} has shape {ref[key].shape[1:]}, "
                                f"predictions have {getattr(posed, key).shape[1:]}")
    ms = ctx.config.metrics
    report = evaluate(
        pred_joints={"right": posed.joints_r, "left": posed.joints_l},
        gt_joints={"right": ref["joints_r"], "left": ref["joints_l"]},
        pred_vertices={"right": posed.vertices_r, "left": posed.vertices_l},
        gt_vertices={"right": ref["vertices_r"], "left": ref["vertices_l"]},
        labeled=gt.labeled, fps=gt.fps, mesh_pairs=_frame_meshes(ctx, model_r, model_l, posed),
        root_index=ms.root_index, pck_max_mm=ms.pck_max_mm, pck_steps=ms.pck_steps,
    )
    rows = [[name, formats.fmt(value), unit] for name, value, unit in report.table_rows()]
    formats.write_csv(ctx.out / "metrics.csv", ["metric", "value", "unit"], rows)
    columns = list(report.per_frame)
    formats.write_csv(ctx.out / "per_frame.csv", ["frame"] + columns,
                      [[t] + [formats.fmt(report.per_frame[c][t]) for c in columns] for t in range(gt.num_frames)])
    if report.pck_curve is not None:
        formats.write_csv(ctx.out / "pck.csv", ["threshold_mm", "pck"],
                          [[formats.fmt(th), formats.fmt(p)] for th, p in report.pck_curve])
    width = max(len(r[0]) for r in rows)
    for name, value, unit in rows:
        print(f"{name:<{width}}  {value:>14}  {unit}")
    return EXIT_OK


def cmd_encode(ctx: _Context) -> int:
    a = ctx.args
    feats = formats.load_features(a.features)
    T = {k: v.shape[0] for k, v in feats.items()}
    if len(set(T.values())) != 1:
        raise TwoHandsError(f"{a.features}: sequences differ in length {T}")
    if a.weights:
        weights = weights_from_dict(formats.load_weights_dict(a.weights))
    else:
        enc = ctx.config.encoder
        weights = init_encoder_weights(seed=ctx.seed, dims=enc.dims, global_dims=enc.global_dims, heads=enc.heads)
        formats.save_weights(weights_to_dict(weights), ctx.out / "weights.json")
    right, left, maps = encoder_forward(feats["right"], feats["left"], feats["global_1"], feats["global_2"],
                                        weights, positional=ctx.config.encoder.positional)
    formats.save_features({"right": right, "left": left}, ctx.out / "encoded.json")
    att_dir = ctx.out / "attention"
    att_dir.mkdir(exist_ok=True)
    count = 0
    for b, block_maps in enumerate(maps):
        for name, heads in block_maps.items():
            for h, matrix in enumerate(heads):
                formats.matrix_to_csv(matrix, att_dir / f"block{b + 1}_{name}_head{h}.csv")
                count += 1
    print(f"encoded {right.shape[0]} frames to {right.shape[1]} channels; wrote {count} attention maps")
    return EXIT_OK


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (JSON)")
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads for per-frame work")
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(prog="twohands", description="Two-hand mesh toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    p.add_argument("pred", help="predicted sequence file")
    p.add_argument("gt", help="ground-truth sequence file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("collide", parents=[common], help="per-frame penetration report")
    p.add_argument("sequence")
    p.add_argument("--obj", action="store_true", help="also export per-frame OBJ meshes")
    p.set_defaults(func=cmd_collide)

    p = sub.add_parser("refine", parents=[common], help="optimize a sequence against the objective")
    p.add_argument("sequence")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--output", default="refined.json", help="refined sequence file name")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic two-hand sequence")
    p.add_argument("scenario", choices=SCENARIOS)
    p.add_argument("frames", type=int, nargs="?", default=None, help="sequence length (default from config)")
    p.add_argument("--output", default="sequence.json", help="sequence file name")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("encode", parents=[common], help="run the temporal encoder")
    p.add_argument("features", help="feature file with right, left, global_1, global_2")
    p.add_argument("--weights", help="weights file; default draws weights from --seed")
    p.set_defaults(func=cmd_encode)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(_Context(args))
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (TwoHandsError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
