"""Rebuild the frozen evaluate fixture: python3 tests/golden/regenerate.py"""

from pathlib import Path

import numpy as np

from twohands.cli import main
from twohands.formats import save_sequence
from twohands.hand_model import generate_mini_hand
from twohands.sequence import pose_sequence, synthesize_sequence

HERE = Path(__file__).parent


def build_inputs(directory: Path) -> None:
    right, left = generate_mini_hand(0, "right"), generate_mini_hand(0, "left")
    gt = synthesize_sequence(right, left, "disjoint", T=10, seed=0)
    posed = pose_sequence(right, left, gt)
    labeled = np.ones(10, dtype=bool)
    labeled[7] = False
    gt = gt.copy(gt_joints_r=posed.joints_r, gt_joints_l=posed.joints_l, labeled=labeled)
    pred = synthesize_sequence(right, left, "jittery", T=10, seed=0, noise=0.05)
    save_sequence(gt, directory / "gt.json")
    save_sequence(pred, directory / "pred.json")


if __name__ == "__main__":
    build_inputs(HERE)
    main(["evaluate", str(HERE / "pred.json"), str(HERE / "gt.json"), "--out", str(HERE / "expected")])
