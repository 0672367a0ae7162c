"""Rigid transforms, triangle meshes, and surface proximity queries.

Conventions used throughout the package:

    Rotations are unit quaternions stored as (w, x, y, z).  Translations are
    3-vectors in meters.  A pose maps points from its child frame into its
    parent frame: p_parent = R @ p_child + t.  Composition renormalizes the
    quaternion so long chains cannot drift off the unit sphere.

    Meshes are triangle index triples over a vertex array with
    counterclockwise winding and outward normals.  Inside/outside for a
    watertight mesh is decided by the angle-weighted pseudonormal of the
    nearest surface feature, so queries near edges and vertices get a
    consistent sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMesh, SchemaError

_DEGENERATE_AREA = 1e-14


# ---------------------------------------------------------------------------
# quaternion helpers (w, x, y, z)
# ---------------------------------------------------------------------------

def _quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def _quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def _quat_rotate(q, v):
    # v + 2 w (u x v) + 2 u x (u x v), u = vector part
    u = q[1:]
    t = 2.0 * np.cross(u, v)
    return v + q[0] * t + np.cross(u, t)


def _quat_rotate_many(q, pts):
    u = q[1:]
    t = 2.0 * np.cross(u[None, :], pts)
    return pts + q[0] * t + np.cross(u[None, :], t)


def _quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    n = math.sqrt(float(axis @ axis))
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * float(angle)
    s = math.sin(half) / n
    return np.array([math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s])


def _quat_from_rotvec(rv):
    rv = np.asarray(rv, dtype=float)
    angle = math.sqrt(float(rv @ rv))
    if angle < 1e-12:
        # first-order expansion keeps the map smooth through zero
        q = np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]])
        return q / math.sqrt(float(q @ q))
    return _quat_from_axis_angle(rv / angle, angle)


# ---------------------------------------------------------------------------
# SE(3) poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SE3Pose:
    """Rigid transform: unit quaternion (w, x, y, z) plus translation (m)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4).copy()
        t = np.asarray(self.translation, dtype=float).reshape(3).copy()
        n = math.sqrt(float(q @ q))
        if n == 0.0:
            raise ValueError("zero quaternion is not a rotation")
        q /= n
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)


def identity_pose() -> SE3Pose:
    return SE3Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))


def pose_from_axis_angle(axis, angle, translation=(0.0, 0.0, 0.0)) -> SE3Pose:
    return SE3Pose(_quat_from_axis_angle(axis, angle), np.asarray(translation, dtype=float))


def pose_from_rotvec(rotvec, translation=(0.0, 0.0, 0.0)) -> SE3Pose:
    return SE3Pose(_quat_from_rotvec(rotvec), np.asarray(translation, dtype=float))


def compose(a: SE3Pose, b: SE3Pose) -> SE3Pose:
    """a then b: maps b's child frame through b and a into a's parent."""
    rot = _quat_mul(a.rotation, b.rotation)
    trans = _quat_rotate(a.rotation, b.translation) + a.translation
    return SE3Pose(rot, trans)


def invert(t: SE3Pose) -> SE3Pose:
    qc = _quat_conj(t.rotation)
    return SE3Pose(qc, -_quat_rotate(qc, t.translation))


def transform_point(t: SE3Pose, p) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(3)
    return _quat_rotate(t.rotation, p) + t.translation


def transform_points(t: SE3Pose, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 3)
    return _quat_rotate_many(t.rotation, pts) + t.translation[None, :]


def rotate_vector(t: SE3Pose, v) -> np.ndarray:
    """Apply only the rotation part (directions, axes)."""
    return _quat_rotate(t.rotation, np.asarray(v, dtype=float).reshape(3))


def pose_to_matrix(t: SE3Pose) -> np.ndarray:
    w, x, y, z = t.rotation
    m = np.eye(4)
    m[:3, :3] = [
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ]
    m[:3, 3] = t.translation
    return m


def pose_to_record(t: SE3Pose) -> dict:
    return {
        "rotation": [float(v) for v in t.rotation],
        "translation": [float(v) for v in t.translation],
    }


def pose_from_record(record: dict) -> SE3Pose:
    return SE3Pose(np.asarray(record["rotation"], dtype=float),
                   np.asarray(record["translation"], dtype=float))


def rotation_angle(a: SE3Pose, b: SE3Pose) -> float:
    """Geodesic angle (rad) between the rotation parts."""
    d = abs(float(a.rotation @ b.rotation))
    return 2.0 * math.acos(min(1.0, d))


# ---------------------------------------------------------------------------
# triangle meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Triangle soup with validated indices; vertices in meters."""

    vertices: np.ndarray
    triangles: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3).copy()
        f = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3).copy()
        if float(self.scale) <= 0.0:
            raise ValueError("mesh scale must be positive")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if f.size:
            ab = v[f[:, 1]] - v[f[:, 0]]
            ac = v[f[:, 2]] - v[f[:, 0]]
            areas = 0.5 * np.linalg.norm(np.cross(ab, ac), axis=1)
            bad = np.nonzero(areas < _DEGENERATE_AREA)[0]
            if bad.size:
                raise ValueError(f"degenerate triangles at indices {bad.tolist()}")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "_cache", {})

    @property
    def face_normals(self) -> np.ndarray:
        cache = self._cache
        if "face_normals" not in cache:
            v, f = self.vertices, self.triangles
            n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
            n /= np.linalg.norm(n, axis=1, keepdims=True)
            n.setflags(write=False)
            cache["face_normals"] = n
        return cache["face_normals"]


def transform_mesh(mesh: TriangleMesh, pose: SE3Pose) -> TriangleMesh:
    return TriangleMesh(transform_points(pose, mesh.vertices), mesh.triangles, mesh.scale)


@dataclass(frozen=True)
class SurfaceContact:
    """Nearest surface point, its outward unit normal, signed distance (m)."""

    point: np.ndarray
    normal: np.ndarray
    distance: float


# ---- closest point on triangles (voronoi-region walk, vectorized) ----

def _closest_on_matched_triangles(a, b, c, p):
    """Closest point to p on triangle (a, b, c), all arrays (n, 3)."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    def safe_div(num, den):
        return num / np.where(den == 0.0, 1.0, den)

    # candidates for every region; the mask stack below picks one per row
    v_ab = safe_div(d1, d1 - d3)
    on_ab = a + v_ab[:, None] * ab
    w_ac = safe_div(d2, d2 - d6)
    on_ac = a + w_ac[:, None] * ac
    w_bc = safe_div(d4 - d3, (d4 - d3) + (d5 - d6))
    on_bc = b + w_bc[:, None] * (c - b)
    denom = safe_div(np.ones_like(va), va + vb + vc)
    on_face = a + (vb * denom)[:, None] * ab + (vc * denom)[:, None] * ac

    in_a = (d1 <= 0) & (d2 <= 0)
    in_b = (d3 >= 0) & (d4 <= d3)
    in_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    in_c = (d6 >= 0) & (d5 <= d6)
    in_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    in_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)

    # assign lowest-priority regions first so earlier checks win, mirroring
    # the early returns of the scalar algorithm
    out = on_face.copy()
    out[in_bc] = on_bc[in_bc]
    out[in_ac] = on_ac[in_ac]
    out[in_c] = c[in_c]
    out[in_ab] = on_ab[in_ab]
    out[in_b] = b[in_b]
    out[in_a] = a[in_a]
    return out


def _closest_points(mesh: TriangleMesh, points: np.ndarray):
    """For each query point: squared distance, winning triangle, closest point.

    Ties between triangles resolve to the lowest triangle index (argmin
    takes the first minimum), which keeps queries on shared edges
    deterministic.
    """
    tri = mesh.vertices[mesh.triangles]
    m = len(tri)
    n = len(points)
    out_d2 = np.empty(n)
    out_tri = np.empty(n, dtype=np.int64)
    out_q = np.empty((n, 3))
    rows = max(1, int(200_000 / max(m, 1)))
    for s in range(0, n, rows):
        p_chunk = points[s:s + rows]
        k = len(p_chunk)
        a = np.broadcast_to(tri[:, 0], (k, m, 3)).reshape(-1, 3)
        b = np.broadcast_to(tri[:, 1], (k, m, 3)).reshape(-1, 3)
        c = np.broadcast_to(tri[:, 2], (k, m, 3)).reshape(-1, 3)
        p = np.repeat(p_chunk, m, axis=0)
        q = _closest_on_matched_triangles(a, b, c, p).reshape(k, m, 3)
        d2 = np.einsum("kmi,kmi->km", q - p_chunk[:, None, :], q - p_chunk[:, None, :])
        idx = d2.argmin(axis=1)
        rows_idx = np.arange(k)
        out_d2[s:s + k] = d2[rows_idx, idx]
        out_tri[s:s + k] = idx
        out_q[s:s + k] = q[rows_idx, idx]
    return out_d2, out_tri, out_q


# ---- pseudonormals for the inside/outside sign ----

def _surface_frames(mesh: TriangleMesh):
    """Angle-weighted vertex normals and edge normals, built once."""
    cache = mesh._cache
    if "vertex_normals" in cache:
        return cache["vertex_normals"], cache["edge_normals"]
    v, f = mesh.vertices, mesh.triangles
    fn = mesh.face_normals
    vertex_normals = np.zeros_like(v)
    edge_sums: dict = {}
    for t in range(len(f)):
        i0, i1, i2 = (int(f[t, 0]), int(f[t, 1]), int(f[t, 2]))
        corners = (i0, i1, i2)
        pts = v[[i0, i1, i2]]
        for k in range(3):
            e1 = pts[(k + 1) % 3] - pts[k]
            e2 = pts[(k + 2) % 3] - pts[k]
            cosang = float(e1 @ e2) / (np.linalg.norm(e1) * np.linalg.norm(e2))
            ang = math.acos(max(-1.0, min(1.0, cosang)))
            vertex_normals[corners[k]] += ang * fn[t]
        for k in range(3):
            e = (min(corners[k], corners[(k + 1) % 3]),
                 max(corners[k], corners[(k + 1) % 3]))
            edge_sums[e] = edge_sums.get(e, 0.0) + fn[t]
    norms = np.linalg.norm(vertex_normals, axis=1, keepdims=True)
    vertex_normals = np.where(norms > 1e-12, vertex_normals / np.where(norms == 0, 1, norms), vertex_normals)
    edge_normals = {}
    for e, s in edge_sums.items():
        n = np.linalg.norm(s)
        edge_normals[e] = s / n if n > 1e-12 else np.array(s)
    cache["vertex_normals"] = vertex_normals
    cache["edge_normals"] = edge_normals
    return vertex_normals, edge_normals


_FEATURE_EPS = 1e-7


def _feature_normal(mesh: TriangleMesh, tri_idx: int, q: np.ndarray) -> np.ndarray:
    """Pseudonormal of the feature (face, edge, vertex) the point q lies on."""
    i0, i1, i2 = (int(i) for i in mesh.triangles[tri_idx])
    a, b, c = mesh.vertices[i0], mesh.vertices[i1], mesh.vertices[i2]
    ab, ac, qa = b - a, c - a, q - a
    d00, d01, d11 = float(ab @ ab), float(ab @ ac), float(ac @ ac)
    d20, d21 = float(qa @ ab), float(qa @ ac)
    den = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    u = 1.0 - v - w
    small = [u < _FEATURE_EPS, v < _FEATURE_EPS, w < _FEATURE_EPS]
    verts = (i0, i1, i2)
    if not any(small):
        return np.array(mesh.face_normals[tri_idx])
    vertex_normals, edge_normals = _surface_frames(mesh)
    if sum(small) >= 2:
        # two barycentrics vanish: the remaining vertex carries the point
        at = small.index(False) if not all(small) else 0
        return np.array(vertex_normals[verts[at]])
    # exactly one vanishes: the opposite edge carries the point
    k = small.index(True)
    e0, e1 = verts[(k + 1) % 3], verts[(k + 2) % 3]
    return np.array(edge_normals[(min(e0, e1), max(e0, e1))])


def nearest_surface_point(mesh: TriangleMesh, point) -> SurfaceContact:
    """Closest surface point with outward normal and signed distance.

    Negative distance means the query point is inside the mesh.  The mesh
    is assumed watertight for the sign to be meaningful.
    """
    if mesh.triangles.size == 0:
        raise EmptyMesh("nearest_surface_point on a mesh with no triangles")
    p = np.asarray(point, dtype=float).reshape(3)
    d2, tri_idx, q = _closest_points(mesh, p[None, :])
    q = q[0]
    n = _feature_normal(mesh, int(tri_idx[0]), q)
    dist = math.sqrt(float(d2[0]))
    if float((p - q) @ n) < 0.0:
        dist = -dist
    return SurfaceContact(point=q, normal=n, distance=dist)


def signed_distance(mesh: TriangleMesh, point) -> float:
    """Signed distance to the surface; negative inside."""
    return nearest_surface_point(mesh, point).distance


def squared_surface_distances(mesh: TriangleMesh, points) -> np.ndarray:
    """Unsigned squared distances to the surface for a batch of points."""
    if mesh.triangles.size == 0:
        raise EmptyMesh("surface distances on a mesh with no triangles")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    d2, _, _ = _closest_points(mesh, pts)
    return d2


# ---------------------------------------------------------------------------
# OBJ subset: v and f records, triangles only
# ---------------------------------------------------------------------------

def load_obj(path, scale: float = 1.0) -> TriangleMesh:
    """Load a triangle mesh from a Wavefront OBJ file.

    Only v and f records are honored; faces must be triangles.  Every
    violation in the file is collected before rejecting it.
    """
    vertices = []
    faces = []
    violations = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            tokens = raw.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            rec = tokens[0]
            if rec == "v":
                if len(tokens) < 4:
                    violations.append(f"line {lineno}: vertex needs 3 coordinates")
                    continue
                try:
                    vertices.append([float(t) for t in tokens[1:4]])
                except ValueError:
                    violations.append(f"line {lineno}: vertex coordinates not numeric")
            elif rec == "f":
                corners = tokens[1:]
                if len(corners) != 3:
                    violations.append(
                        f"line {lineno}: face {len(faces) + 1} has "
                        f"{len(corners)} vertices; only triangles supported")
                    continue
                idx = []
                for t in corners:
                    head = t.split("/")[0]
                    try:
                        i = int(head)
                    except ValueError:
                        violations.append(f"line {lineno}: face index '{head}' not an integer")
                        break
                    if i <= 0:
                        violations.append(f"line {lineno}: face index {i} must be positive (1-based)")
                        break
                    idx.append(i - 1)
                else:
                    faces.append(idx)
            # all other record types are ignored
    if not faces and not violations:
        violations.append("no faces: mesh must contain at least one triangle")
    nv = len(vertices)
    for k, tri in enumerate(faces):
        for i in tri:
            if i >= nv:
                violations.append(f"face {k + 1}: vertex index {i + 1} out of range ({nv} vertices)")
    if not violations:
        v = np.asarray(vertices, dtype=float) * float(scale)
        f = np.asarray(faces, dtype=np.int64)
        ab = v[f[:, 1]] - v[f[:, 0]]
        ac = v[f[:, 2]] - v[f[:, 0]]
        areas = 0.5 * np.linalg.norm(np.cross(ab, ac), axis=1)
        for k in np.nonzero(areas < _DEGENERATE_AREA)[0]:
            violations.append(f"face {int(k) + 1}: degenerate (zero area)")
    if violations:
        raise SchemaError(violations)
    return TriangleMesh(v, f, scale=float(scale))


def save_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def save_points_obj(path, points) -> None:
    """Write bare vertices (a point cloud) as an OBJ snapshot."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w", encoding="utf-8") as fh:
        for p in pts:
            fh.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


# ---------------------------------------------------------------------------
# primitive meshes for fixtures and tests
# ---------------------------------------------------------------------------

def box_mesh(extents=(1.0, 1.0, 1.0)) -> TriangleMesh:
    """Axis-aligned box centered at the origin; extents are full side lengths."""
    hx, hy, hz = (0.5 * float(e) for e in extents)
    v = np.array([
        [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
        [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
    ])
    f = np.array([
        [0, 2, 1], [0, 3, 2],          # bottom (-z)
        [4, 5, 6], [4, 6, 7],          # top (+z)
        [0, 1, 5], [0, 5, 4],          # -y
        [1, 2, 6], [1, 6, 5],          # +x
        [2, 3, 7], [2, 7, 6],          # +y
        [3, 0, 4], [3, 4, 7],          # -x
    ])
    return TriangleMesh(v, f)


def icosphere(radius: float = 1.0, subdivisions: int = 1) -> TriangleMesh:
    """Subdivided icosahedron projected to the sphere of given radius."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.asarray(v, dtype=float) for v in verts]
    for _ in range(subdivisions):
        midpoint: dict = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                verts.append(0.5 * (verts[i] + verts[j]))
                midpoint[key] = len(verts) - 1
            return midpoint[key]

        new_faces = []
        for (i, j, k) in faces:
            a, b, c = mid(i, j), mid(j, k), mid(k, i)
            new_faces += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = new_faces
    v = np.array(verts)
    v = v / np.linalg.norm(v, axis=1, keepdims=True) * float(radius)
    return TriangleMesh(v, np.asarray(faces, dtype=np.int64))


def cylinder_mesh(radius: float = 1.0, height: float = 1.0, segments: int = 24) -> TriangleMesh:
    """Closed cylinder along z, centered at the origin."""
    hz = 0.5 * float(height)
    ang = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -hz)])
    top = np.column_stack([ring, np.full(segments, hz)])
    v = np.vstack([bottom, top, [[0.0, 0.0, -hz]], [[0.0, 0.0, hz]]])
    cb, ct = 2 * segments, 2 * segments + 1
    f = []
    for i in range(segments):
        j = (i + 1) % segments
        f.append([i, j, segments + i])            # side lower
        f.append([j, segments + j, segments + i])  # side upper
        f.append([cb, j, i])                       # bottom cap, normal -z
        f.append([ct, segments + i, segments + j])  # top cap, normal +z
    return TriangleMesh(v, np.asarray(f, dtype=np.int64))
