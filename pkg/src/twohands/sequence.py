"""Two-hand parameter sequences and the synthetic scenario generator."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .collision import TriMesh, build_mesh
from .errors import ContractError
from .hand_model import HandModel, HandParamsFrame, MeshFrame, compose_two_hands, forward

SCENARIOS = ("disjoint", "colliding", "jittery")


@dataclass
class HandParamsSequence:
    """Per-frame parameters for both hands.

    ``translation_c`` moves the left hand into right-hand coordinates; optional
    ground-truth joints/vertices are stored in those same coordinates.
    """

    fps: float
    theta_r: np.ndarray  # (T, D)
    beta_r: np.ndarray  # (T, B)
    theta_l: np.ndarray
    beta_l: np.ndarray
    translation_c: np.ndarray  # (T, 3)
    labeled: np.ndarray = None  # (T,) bool
    gt_joints_r: np.ndarray | None = None
    gt_joints_l: np.ndarray | None = None
    gt_vertices_r: np.ndarray | None = None
    gt_vertices_l: np.ndarray | None = None

    def __post_init__(self):
        for name in ("theta_r", "beta_r", "theta_l", "beta_l", "translation_c"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2:
                raise ContractError(f"{name}: expected a (T, n) array, got shape {arr.shape}")
            setattr(self, name, arr)
        T = self.theta_r.shape[0]
        for name in ("beta_r", "theta_l", "beta_l", "translation_c"):
            if getattr(self, name).shape[0] != T:
                raise ContractError(f"{name}: expected {T} frames, got {getattr(self, name).shape[0]}")
        if self.translation_c.shape[1] != 3:
            raise ContractError("translation_c: expected 3 values per frame")
        self.labeled = np.ones(T, dtype=bool) if self.labeled is None else np.asarray(self.labeled, dtype=bool)
        if self.labeled.shape != (T,):
            raise ContractError(f"labeled: expected {T} flags")
        for name in ("gt_joints_r", "gt_joints_l", "gt_vertices_r", "gt_vertices_l"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64)
                if arr.ndim != 3 or arr.shape[0] != T or arr.shape[2] != 3:
                    raise ContractError(f"{name}: expected ({T}, n, 3), got {arr.shape}")
                setattr(self, name, arr)
        if not self.fps > 0:
            raise ContractError(f"fps must be positive, got {self.fps}")
        for name in ("theta_r", "beta_r", "theta_l", "beta_l", "translation_c"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ContractError(f"{name}: non-finite values")

    @property
    def num_frames(self) -> int:
        return self.theta_r.shape[0]

    def frame(self, t: int, side: str) -> HandParamsFrame:
        if side == "right":
            return HandParamsFrame(self.theta_r[t], self.beta_r[t], np.zeros(3))
        return HandParamsFrame(self.theta_l[t], self.beta_l[t], np.zeros(3))

    def copy(self, **changes) -> "HandParamsSequence":
        arrays = {k: (None if v is None else np.array(v, copy=True))
                  for k, v in vars(self).items() if isinstance(v, np.ndarray) or v is None}
        arrays.update(changes)
        return replace(self, **arrays)

    def validate_for(self, model_r: HandModel, model_l: HandModel) -> None:
        for side, model, theta, beta in (("right", model_r, self.theta_r, self.beta_r),
                                         ("left", model_l, self.theta_l, self.beta_l)):
            if theta.shape[1] != model.theta_dim:
                raise ContractError(f"theta_{side[0]}: {theta.shape[1]} values per frame, model expects {model.theta_dim}")
            if beta.shape[1] != model.num_betas:
                raise ContractError(f"beta_{side[0]}: {beta.shape[1]} values per frame, model expects {model.num_betas}")


@dataclass
class PosedSequence:
    """Forward-kinematics output for a sequence, left hand already shifted by c."""

    right: list[MeshFrame] = field(default_factory=list)
    left: list[MeshFrame] = field(default_factory=list)

    @property
    def joints_r(self):
        return np.stack([m.joints for m in self.right])

    @property
    def joints_l(self):
        return np.stack([m.joints for m in self.left])

    @property
    def vertices_r(self):
        return np.stack([m.vertices for m in self.right])

    @property
    def vertices_l(self):
        return np.stack([m.vertices for m in self.left])


def pose_sequence(model_r: HandModel, model_l: HandModel, seq: HandParamsSequence) -> PosedSequence:
    seq.validate_for(model_r, model_l)
    out = PosedSequence()
    for t in range(seq.num_frames):
        r, l = compose_two_hands(forward(model_r, seq.frame(t, "right")),
                                 forward(model_l, seq.frame(t, "left")), seq.translation_c[t])
        out.right.append(r)
        out.left.append(l)
    return out


def mesh_pairs(model_r: HandModel, model_l: HandModel, posed: PosedSequence) -> list[tuple[TriMesh, TriMesh]]:
    return [(build_mesh(r.vertices, model_r.faces), build_mesh(l.vertices, model_l.faces))
            for r, l in zip(posed.right, posed.left)]


def _palm_half_depth(model: HandModel) -> float:
    return float(np.abs(model.template_vertices[:, 1]).max())


def synthesize_sequence(model_r: HandModel, model_l: HandModel, scenario: str, T: int = 10, seed: int = 0,
                        noise: float = 0.05, fps: float = 30.0) -> HandParamsSequence:
    """Deterministic test sequences with the two palms facing each other along y.

    ``disjoint`` keeps a gap of roughly 2 cm throughout; ``colliding`` closes the
    gap to about 1 cm of overlap at mid-sequence; ``jittery`` is ``disjoint`` plus
    seeded Gaussian noise of ``noise`` radians on every pose entry (and
    ``noise`` cm on the translation).
    """
    if scenario not in SCENARIOS:
        raise ContractError(f"unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}")
    if T < 3:
        raise ContractError("scenarios need T >= 3")
    rng = np.random.default_rng(seed)
    amp = rng.uniform(0.1, 0.3)
    phase = rng.uniform(0.0, np.pi)
    s = np.linspace(0.0, 1.0, T)

    def pose(model, sign):
        theta = np.zeros((T, model.theta_dim))
        if model.pose_pca is None and model.num_nodes > 1:
            flex = sign * amp * (0.5 + 0.5 * np.sin(np.pi * s + phase))
            for k in range(1, model.num_nodes):
                theta[:, 3 * k] = flex
            theta[:, 0:3] = 0.02 * np.sin(np.pi * s)[:, None] * np.array([0.0, 0.0, 1.0])
        return theta

    # right fingers curl toward -y, left toward +y: away from the contact plane
    theta_r = pose(model_r, +1.0)
    theta_l = pose(model_l, -1.0)
    beta_r = np.zeros((T, model_r.num_betas))
    beta_l = np.zeros((T, model_l.num_betas))

    touch = _palm_half_depth(model_r) + _palm_half_depth(model_l)
    if scenario == "colliding":
        gap = 0.004 - 0.014 * np.sin(np.pi * s)
    else:
        gap = 0.02 + 0.003 * np.sin(2.0 * np.pi * s + phase)
    c = np.stack([0.005 + 0.004 * s, touch + gap, np.full(T, 0.003)], axis=1)

    if scenario == "jittery" and noise > 0:
        jitter = np.random.default_rng([seed, 1])
        theta_r = theta_r + noise * jitter.normal(size=theta_r.shape)
        theta_l = theta_l + noise * jitter.normal(size=theta_l.shape)
        c = c + 0.01 * noise * jitter.normal(size=c.shape)

    return HandParamsSequence(fps=fps, theta_r=theta_r, beta_r=beta_r, theta_l=theta_l, beta_l=beta_l,
                              translation_c=c, labeled=np.ones(T, dtype=bool))
