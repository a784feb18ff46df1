"""Parametric hand model: shape blendshapes, linear blend skinning and joint regression.

Parameters follow the MANO convention: ``theta`` is a stacked axis-angle vector
(root first) and ``beta`` a vector of shape coefficients. All lengths are in meters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, TopologyError, ValidationError


@dataclass(frozen=True, eq=False)
class HandModel:
    side: str
    template_vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    shape_basis: np.ndarray  # (V, 3, B)
    pose_basis: np.ndarray  # (V, 3, P), P == 0 or 9 * (K - 1)
    skin_weights: np.ndarray  # (V, K)
    joint_regressor: np.ndarray  # (J, V); the first K rows locate the kinematic nodes
    kinematic_parents: np.ndarray  # (K,) int, root == -1
    pose_pca: np.ndarray | None = None  # (D_pca, 3 * (K - 1))

    @property
    def num_vertices(self) -> int:
        return self.template_vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.kinematic_parents.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joint_regressor.shape[0]

    @property
    def num_betas(self) -> int:
        return self.shape_basis.shape[2]

    @property
    def theta_dim(self) -> int:
        if self.pose_pca is not None:
            return 3 + self.pose_pca.shape[0]
        return 3 * self.num_nodes

    def validate(self) -> "HandModel":
        """Check every structural invariant; raises ValidationError on the first failure."""
        V = self.num_vertices
        K = self.num_nodes
        if self.side not in ("left", "right"):
            raise ValidationError(f"side: expected 'left' or 'right', got {self.side!r}")
        _expect_shape("template_vertices", self.template_vertices, (V, 3))
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValidationError(f"faces: expected (F, 3), got {self.faces.shape}")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= V):
            raise ValidationError("faces: vertex index out of range")
        if self.shape_basis.ndim != 3 or self.shape_basis.shape[:2] != (V, 3):
            raise ValidationError(f"shape_basis: expected (V, 3, B), got {self.shape_basis.shape}")
        if self.pose_basis.ndim != 3 or self.pose_basis.shape[:2] != (V, 3):
            raise ValidationError(f"pose_basis: expected (V, 3, P), got {self.pose_basis.shape}")
        if self.pose_basis.shape[2] not in (0, 9 * (K - 1)):
            raise ValidationError(
                f"pose_basis: P must be 0 or 9*(K-1)={9 * (K - 1)}, got {self.pose_basis.shape[2]}"
            )
        _expect_shape("skin_weights", self.skin_weights, (V, K))
        if self.joint_regressor.ndim != 2 or self.joint_regressor.shape[1] != V:
            raise ValidationError(f"joint_regressor: expected (J, {V}), got {self.joint_regressor.shape}")
        if self.joint_regressor.shape[0] < K:
            raise ValidationError("joint_regressor: needs at least one row per kinematic node")

        for name in ("template_vertices", "shape_basis", "pose_basis", "skin_weights", "joint_regressor"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValidationError(f"{name}: non-finite entries")

        if np.any(self.skin_weights < 0):
            raise ValidationError("skin_weights: rows must be non-negative")
        bad = np.flatnonzero(np.abs(self.skin_weights.sum(axis=1) - 1.0) > 1e-6)
        if bad.size:
            raise ValidationError(f"skin_weights: row {bad[0]} does not sum to 1")
        bad = np.flatnonzero(np.abs(self.joint_regressor.sum(axis=1) - 1.0) > 1e-6)
        if bad.size:
            raise ValidationError(f"joint_regressor: row {bad[0]} does not sum to 1")

        parents = self.kinematic_parents
        if K == 0 or parents[0] != -1:
            raise ValidationError("kinematic_parents: node 0 must be the root (parent -1)")
        for k in range(1, K):
            if not 0 <= parents[k] < k:
                raise ValidationError(f"kinematic_parents: node {k} must have a parent index in [0, {k})")

        if self.pose_pca is not None:
            if self.pose_pca.ndim != 2 or self.pose_pca.shape[1] != 3 * (K - 1):
                raise ValidationError(f"pose_pca: expected (D, {3 * (K - 1)}), got {self.pose_pca.shape}")

        check_closed_manifold(self.faces)
        return self


def _expect_shape(name, arr, shape):
    if arr.shape != shape:
        raise ValidationError(f"{name}: expected shape {shape}, got {arr.shape}")


def edge_incidence(faces: np.ndarray) -> dict[tuple[int, int], int]:
    """Number of faces using each undirected edge."""
    edges, counts = _edge_counts(np.asarray(faces, dtype=np.int64))
    return {(int(a), int(b)): int(n) for (a, b), n in zip(edges, counts)}


def _edge_counts(faces: np.ndarray):
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0, return_counts=True)


_MANIFOLD_OK: set[bytes] = set()


def bad_manifold_edge(faces: np.ndarray) -> tuple[tuple[int, int], int] | None:
    """First edge not shared by exactly two faces, with its face count; None if closed 2-manifold."""
    faces = np.ascontiguousarray(faces, dtype=np.int64)
    key = faces.tobytes()
    if key in _MANIFOLD_OK:
        return None
    edges, counts = _edge_counts(faces)
    bad = np.flatnonzero(counts != 2)
    if bad.size:
        a, b = edges[bad[0]]
        return (int(a), int(b)), int(counts[bad[0]])
    # topology depends only on the index array, so repeated meshes skip the check
    if len(_MANIFOLD_OK) < 64:
        _MANIFOLD_OK.add(key)
    return None


def check_closed_manifold(faces: np.ndarray) -> None:
    """Raise TopologyError unless every undirected edge is shared by exactly two faces."""
    bad = bad_manifold_edge(faces)
    if bad is not None:
        raise TopologyError(f"faces: edge {bad[0]} is used by {bad[1]} faces (closed 2-manifold needs 2)")


@dataclass
class HandParamsFrame:
    theta: np.ndarray
    beta: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(-1)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(-1)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    @classmethod
    def zeros(cls, model: HandModel) -> "HandParamsFrame":
        return cls(np.zeros(model.theta_dim), np.zeros(model.num_betas), np.zeros(3))


@dataclass
class MeshFrame:
    vertices: np.ndarray  # (V, 3)
    joints: np.ndarray  # (J, 3)


@dataclass
class ForwardJacobian:
    """Derivatives of forward() outputs, one trailing column per parameter.

    Columns are ordered ``[theta..., beta..., translation(3)]``.
    """

    vertices: np.ndarray  # (V, 3, N)
    joints: np.ndarray  # (J, 3, N)
    theta_slice: slice
    beta_slice: slice
    translation_slice: slice


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rodrigues(axis_angle) -> np.ndarray:
    """Exponential map from an axis-angle 3-vector to a rotation matrix."""
    v = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    angle2 = float(v @ v)
    K = skew(v)
    if angle2 < 1e-16:
        # second-order Taylor expansion; exact to machine precision at this size
        return np.eye(3) + K + 0.5 * (K @ K)
    angle = np.sqrt(angle2)
    a = np.sin(angle) / angle
    b = (1.0 - np.cos(angle)) / angle2
    return np.eye(3) + a * K + b * (K @ K)


def rodrigues_derivatives(axis_angle, R: np.ndarray | None = None) -> np.ndarray:
    """Return dR/dv_i stacked as a (3, 3, 3) array indexed [i, row, col]."""
    v = np.asarray(axis_angle, dtype=np.float64).reshape(3)
    if R is None:
        R = rodrigues(v)
    angle2 = float(v @ v)
    out = np.empty((3, 3, 3))
    eye = np.eye(3)
    if angle2 < 1e-16:
        for i in range(3):
            out[i] = skew(eye[i])
        return out
    # Gallego & Yezzi closed form
    Vx = skew(v)
    IR = eye - R
    for i in range(3):
        col = IR[:, i]
        w = (v[1] * col[2] - v[2] * col[1], v[2] * col[0] - v[0] * col[2], v[0] * col[1] - v[1] * col[0])
        out[i] = (v[i] * Vx + skew(w)) @ R / angle2
    return out


def full_pose(model: HandModel, theta: np.ndarray) -> np.ndarray:
    """Expand ``theta`` (possibly PCA-reduced) to per-node axis-angles, shape (K, 3)."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if model.pose_pca is None:
        return theta.reshape(model.num_nodes, 3)
    return np.concatenate([theta[:3], theta[3:] @ model.pose_pca]).reshape(model.num_nodes, 3)


def _pose_to_full_jacobian(model: HandModel) -> np.ndarray:
    """d(full axis-angle vector)/d(theta), shape (3K, theta_dim)."""
    K = model.num_nodes
    if model.pose_pca is None:
        return np.eye(3 * K)
    D = model.pose_pca.shape[0]
    out = np.zeros((3 * K, 3 + D))
    out[:3, :3] = np.eye(3)
    out[3:, 3:] = model.pose_pca.T
    return out


def _check_frame(model: HandModel, frame: HandParamsFrame):
    if frame.theta.shape[0] != model.theta_dim:
        raise ContractError(f"theta has {frame.theta.shape[0]} values, model expects {model.theta_dim}")
    if frame.beta.shape[0] != model.num_betas:
        raise ContractError(f"beta has {frame.beta.shape[0]} values, model expects {model.num_betas}")
    if not (np.all(np.isfinite(frame.theta)) and np.all(np.isfinite(frame.beta))
            and np.all(np.isfinite(frame.translation))):
        raise ContractError("frame parameters must be finite")


def _kinematics(model: HandModel, frame: HandParamsFrame):
    _check_frame(model, frame)
    K = model.num_nodes
    parents = model.kinematic_parents
    aa = full_pose(model, frame.theta)
    rots = np.stack([rodrigues(aa[k]) for k in range(K)])

    v_shaped = model.template_vertices + model.shape_basis @ frame.beta
    rest_joints = model.joint_regressor[:K] @ v_shaped
    v_posed = v_shaped
    if model.pose_basis.shape[2]:
        pose_feature = (rots[1:] - np.eye(3)).reshape(-1)
        v_posed = v_shaped + model.pose_basis @ pose_feature

    # global rotation A_k and posed position p_k of every node
    A = np.empty((K, 3, 3))
    p = np.empty((K, 3))
    A[0] = rots[0]
    p[0] = rest_joints[0]
    for k in range(1, K):
        par = parents[k]
        A[k] = A[par] @ rots[k]
        p[k] = p[par] + A[par] @ (rest_joints[k] - rest_joints[par])
    return aa, rots, v_shaped, v_posed, rest_joints, A, p


def forward(model: HandModel, frame: HandParamsFrame) -> MeshFrame:
    """Pose and shape the model; vertices and joints in meters."""
    _, _, _, v_posed, rest_joints, A, p = _kinematics(model, frame)
    # per node: x -> A_k (x - j_k) + p_k, blended by skin weights
    local = v_posed[:, None, :] - rest_joints[None, :, :]  # (V, K, 3)
    moved = np.einsum("kab,vkb->vka", A, local) + p[None]
    vertices = np.einsum("vk,vka->va", model.skin_weights, moved) + frame.translation
    return MeshFrame(vertices, model.joint_regressor @ vertices)


def forward_jacobian(model: HandModel, frame: HandParamsFrame) -> ForwardJacobian:
    aa, rots, v_shaped, v_posed, rest_joints, A, p = _kinematics(model, frame)
    K = model.num_nodes
    V = model.num_vertices
    B = model.num_betas
    parents = model.kinematic_parents
    W = model.skin_weights
    local = v_posed[:, None, :] - rest_joints[None, :, :]

    # theta: forward-mode propagation down the tree for each axis-angle coordinate
    n_aa = 3 * K
    dR = np.zeros((K, 3, 3, 3))
    for k in range(K):
        dR[k] = rodrigues_derivatives(aa[k], rots[k])
    dA = np.zeros((n_aa, K, 3, 3))
    dp = np.zeros((n_aa, K, 3))
    for m in range(K):
        for c in range(3):
            col = 3 * m + c
            for k in range(K):
                par = parents[k]
                if k == m:
                    base = dR[k, c] if par < 0 else A[par] @ dR[k, c]
                    dA[col, k] = base
                elif par >= 0:
                    dA[col, k] = dA[col, par] @ rots[k]
                if par >= 0:
                    dp[col, k] = dp[col, par] + dA[col, par] @ (rest_joints[k] - rest_joints[par])
    moved = dA @ local.transpose(1, 2, 0)[None] + dp[..., None]  # (n, K, 3, V)
    dv_aa = np.einsum("vk,nkav->van", W, moved)
    if model.pose_basis.shape[2]:
        # pose correctives: feature (R_k - I), k >= 1
        dfeat = np.zeros((9 * (K - 1), n_aa))
        for k in range(1, K):
            for c in range(3):
                dfeat[9 * (k - 1): 9 * k, 3 * k + c] = dR[k, c].reshape(-1)
        dposed = np.einsum("vap,pn->van", model.pose_basis, dfeat)
        dv_aa += np.einsum("vk,kab,vbn->van", W, A, dposed)
    dv_theta = dv_aa @ _pose_to_full_jacobian(model)

    # beta: shaped vertices and rest joints are linear in beta
    S = model.shape_basis  # (V, 3, B)
    dj = np.einsum("kv,vab->kab", model.joint_regressor[:K], S)  # (K, 3, B)
    dpb = np.empty((K, 3, B))
    dpb[0] = dj[0]
    for k in range(1, K):
        par = parents[k]
        dpb[k] = dpb[par] + A[par] @ (dj[k] - dj[par])
    dlocal = S[:, None, :, :] - dj[None, :, :, :]  # (V, K, 3, B)
    moved_b = np.einsum("kab,vkbn->vkan", A, dlocal) + dpb[None]
    dv_beta = np.einsum("vk,vkan->van", W, moved_b)

    dv_trans = np.broadcast_to(np.eye(3), (V, 3, 3))
    dv = np.concatenate([dv_theta, dv_beta, dv_trans], axis=2)
    dj_out = np.einsum("jv,van->jan", model.joint_regressor, dv)
    nt = model.theta_dim
    return ForwardJacobian(
        vertices=dv,
        joints=dj_out,
        theta_slice=slice(0, nt),
        beta_slice=slice(nt, nt + B),
        translation_slice=slice(nt + B, nt + B + 3),
    )


def compose_two_hands(right: MeshFrame, left: MeshFrame, c) -> tuple[MeshFrame, MeshFrame]:
    """Shift the left hand by the relative translation ``c`` into right-hand coordinates."""
    c = np.asarray(c, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(c)):
        raise ContractError("relative translation must be finite")
    return right, MeshFrame(left.vertices + c, left.joints + c)


# ---------------------------------------------------------------------------
# mini-hand: a watertight low-poly stand-in (palm box + two square fingers)

_PALM_COLUMNS = 5  # top grid columns; cells 1 and 3 are finger openings
_PALM_RINGS = 4
_FINGER_RINGS = 3  # rings above the palm opening, then a tip vertex


def generate_mini_hand(seed: int = 0, side: str = "right") -> HandModel:
    """Build the deterministic mini-hand (V=66, F=128, K=5, J=7, B=2).

    Nodes: 0 palm/wrist, 1-2 first finger (proximal, distal), 3-4 second finger.
    Joints are the five nodes followed by the two fingertips. ``side='left'``
    mirrors the right hand across the x = 0 plane.
    """
    rng = np.random.default_rng(seed)
    half_width = 0.04 * (1.0 + 0.05 * rng.uniform(-1.0, 1.0))
    half_depth = 0.015 * (1.0 + 0.05 * rng.uniform(-1.0, 1.0))
    palm_len = 0.08 * (1.0 + 0.05 * rng.uniform(-1.0, 1.0))
    seg_len = 0.015 * (1.0 + 0.05 * rng.uniform(-1.0, 1.0))
    tip_len = 0.008

    xs = np.linspace(-half_width, half_width, _PALM_COLUMNS)
    # boundary ring of the 5x2 top grid, counter-clockwise seen from +z
    ring_xy = [(x, -half_depth) for x in xs] + [(x, half_depth) for x in xs[::-1]]
    n_ring = len(ring_xy)
    verts: list[tuple[float, float, float]] = []
    palm_z = np.linspace(0.0, palm_len, _PALM_RINGS)
    for z in palm_z:
        verts.extend((x, y, z) for x, y in ring_xy)

    def pid(r, i):
        return r * n_ring + (i % n_ring)

    faces: list[tuple[int, int, int]] = []
    for r in range(_PALM_RINGS - 1):
        for i in range(n_ring):
            a, b = pid(r, i), pid(r, i + 1)
            c, d = pid(r + 1, i + 1), pid(r + 1, i)
            faces += [(a, b, c), (a, c, d)]

    # bottom cap: 4 grid cells, viewed from -z (outward normal -z)
    def bottom(col, row):
        return pid(0, col if row == 0 else n_ring - 1 - col)

    for col in range(_PALM_COLUMNS - 1):
        a, b = bottom(col, 0), bottom(col + 1, 0)
        c, d = bottom(col + 1, 1), bottom(col, 1)
        faces += [(a, c, b), (a, d, c)]

    top = _PALM_RINGS - 1

    def topv(col, row):
        return pid(top, col if row == 0 else n_ring - 1 - col)

    for col in (0, 2):
        a, b = topv(col, 0), topv(col + 1, 0)
        c, d = topv(col + 1, 1), topv(col, 1)
        faces += [(a, b, c), (a, c, d)]

    skin = [[1.0, 0, 0, 0, 0] for _ in verts]
    finger_nodes = ((1, 2), (3, 4))
    finger_cols = (1, 3)
    regressor_rows = {0: [pid(0, i) for i in range(n_ring)]}
    tips = []
    for (prox, dist), col in zip(finger_nodes, finger_cols):
        base = [topv(col, 0), topv(col + 1, 0), topv(col + 1, 1), topv(col, 1)]
        for v in base:
            skin[v] = [0.5 if k in (0, prox) else 0.0 for k in range(5)]
        regressor_rows[prox] = base
        prev = base
        for r in range(1, _FINGER_RINGS + 1):
            z = palm_len + r * seg_len
            ring = []
            for v in base:
                x, y, _ = verts[v]
                ring.append(len(verts))
                verts.append((x, y, z))
                if r == 1:
                    w = {prox: 1.0}
                elif r == 2:
                    w = {prox: 0.5, dist: 0.5}
                else:
                    w = {dist: 1.0}
                skin.append([w.get(k, 0.0) for k in range(5)])
            for i in range(4):
                a, b = prev[i], prev[(i + 1) % 4]
                c, d = ring[(i + 1) % 4], ring[i]
                faces += [(a, b, c), (a, c, d)]
            if r == 2:
                regressor_rows[dist] = ring
            prev = ring
        cx = float(np.mean([verts[v][0] for v in base]))
        tip = len(verts)
        verts.append((cx, 0.0, palm_len + _FINGER_RINGS * seg_len + tip_len))
        skin.append([1.0 if k == dist else 0.0 for k in range(5)])
        for i in range(4):
            faces.append((prev[i], prev[(i + 1) % 4], tip))
        tips.append(tip)

    V = len(verts)
    template = np.array(verts, dtype=np.float64)
    regressor = np.zeros((7, V))
    for k in range(5):
        regressor[k, regressor_rows[k]] = 1.0 / len(regressor_rows[k])
    regressor[5, tips[0]] = 1.0
    regressor[6, tips[1]] = 1.0

    # shape 0 widens the palm (fingers follow their opening), shape 1 lengthens fingers
    shape = np.zeros((V, 3, 2))
    finger_centers = {}
    for (prox, _), col in zip(finger_nodes, finger_cols):
        finger_centers[prox] = 0.5 * (xs[col] + xs[col + 1])
    skin_arr = np.array(skin)
    for v in range(V):
        x, _, z = template[v]
        if z <= palm_len + 1e-12:
            shape[v, 0, 0] = 0.25 * x
        else:
            prox = 1 if skin_arr[v, 1] + skin_arr[v, 2] > 0 else 3
            shape[v, 0, 0] = 0.25 * finger_centers[prox]
            shape[v, 2, 1] = 0.25 * (z - palm_len)

    faces_arr = np.array(faces, dtype=np.int64)
    if side == "left":
        template = template * np.array([-1.0, 1.0, 1.0])
        shape = shape * np.array([-1.0, 1.0, 1.0])[None, :, None]
        faces_arr = faces_arr[:, [0, 2, 1]]
    elif side != "right":
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")

    return HandModel(
        side=side,
        template_vertices=template,
        faces=faces_arr,
        shape_basis=shape,
        pose_basis=np.zeros((V, 3, 0)),
        skin_weights=skin_arr,
        joint_regressor=regressor,
        kinematic_parents=np.array([-1, 0, 1, 0, 3], dtype=np.int64),
    ).validate()


def mesh_to_obj(mesh: MeshFrame, faces: np.ndarray) -> str:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces).tolist()]
    return "\n".join(lines) + "\n"


def obj_to_arrays(text: str) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)
