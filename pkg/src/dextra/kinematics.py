"""Articulated hand models: schema loading, forward kinematics, jacobians.

A hand is a tree of links rooted at the wrist.  Every link carries a fixed
offset pose relative to its parent; a revolute joint, when present, rotates
the link about a unit axis expressed in the link's own frame after the
offset.  Linkage-coupled fingers are modeled with mimic joints whose angle
is a fixed ratio of a driver joint; mimic entries in a configuration vector
are ignored by kinematics and resolved from their driver instead.

The root pose is optimized as a 6-vector twist (rotation vector then
translation) applied on the body side of the current pose, which stays
singularity-free for the small increments a solver takes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import (
    BadLimits,
    CyclicTree,
    DimensionMismatch,
    FixtureMissing,
    SchemaError,
    UnknownFingertipLink,
    raise_schema,
)
from .geometry import (
    SE3Pose,
    identity_pose,
    pose_from_record,
    pose_from_rotvec,
    compose,
)

JACOBIAN_STEP = 1e-6
ROOT_DOF = 6


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    parent: int            # index into links; -1 for the root
    offset: SE3Pose        # fixed pose relative to the parent link


@dataclass(frozen=True, eq=False)
class Joint:
    name: str
    child_link: int        # index of the link this joint rotates
    axis: np.ndarray       # unit axis in the child link frame
    limits: tuple          # (lo, hi) radians
    rest: float


@dataclass(frozen=True, eq=False)
class KinematicHandModel:
    """Validated hand description plus derived lookup tables."""

    name: str
    links: tuple
    joints: tuple
    fingertip_links: tuple          # link names, distal to leaf links
    mimics: dict                    # joint index -> (driver index, ratio)
    human_joint_map: tuple          # (human joint name, model joint name)
    approach_axis: np.ndarray       # unit vector in the wrist frame
    finger_drivers: tuple           # one driver joint name per fingertip
    human_fingertip_indices: tuple  # which human fingertip each tip tracks
    rest_fingertips: np.ndarray | None

    # derived, filled by load_hand_model
    link_index: dict
    joint_index: dict
    joint_of_link: tuple            # joint index per link, -1 if welded
    fingertip_link_ids: tuple
    topo_order: tuple
    lower_limits: np.ndarray
    upper_limits: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "_cache", {})

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def fingertip_count(self) -> int:
        return len(self.fingertip_links)


@dataclass(frozen=True, eq=False)
class HandConfiguration:
    """Root pose plus one angle per joint, model order (radians)."""

    root_pose: SE3Pose
    joint_angles: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.joint_angles, dtype=float).reshape(-1).copy()
        a.setflags(write=False)
        object.__setattr__(self, "joint_angles", a)


@dataclass(frozen=True, eq=False)
class HandPoseEstimate:
    """Reconstructed human hand: skeleton config plus fingertip keypoints.

    `fingertip_points` may come from the same kinematic chain or from an
    independent keypoint head; `keypoints_independent` records which.
    """

    config: HandConfiguration
    fingertip_points: np.ndarray    # (K, 3) in the estimate's camera frame
    skeleton: str                   # bundled human model name
    keypoints_independent: bool = False

    def __post_init__(self):
        pts = np.asarray(self.fingertip_points, dtype=float).reshape(-1, 3).copy()
        pts.setflags(write=False)
        object.__setattr__(self, "fingertip_points", pts)


@dataclass(frozen=True, eq=False)
class FKResult:
    link_poses: tuple               # SE3Pose per link, model order
    fingertips: np.ndarray          # (K, 3) fingertip link origins


# ---------------------------------------------------------------------------
# document loading and validation
# ---------------------------------------------------------------------------

def load_hand_model(doc: dict) -> KinematicHandModel:
    """Build a validated model from a schema document.

    Every violation found is collected and reported in a single rejection.
    """
    bad = []
    for key in ("name", "links", "joints", "fingertip_links"):
        if key not in doc:
            bad.append((SchemaError, f"missing required key '{key}'"))
    if bad:
        raise_schema(bad)

    links_doc = doc["links"]
    joints_doc = doc["joints"]
    link_names = [ld.get("name", f"<link {i}>") for i, ld in enumerate(links_doc)]
    if len(set(link_names)) != len(link_names):
        bad.append((SchemaError, "duplicate link names"))
    link_index = {n: i for i, n in enumerate(link_names)}

    roots = []
    parents = []
    for i, ld in enumerate(links_doc):
        p = ld.get("parent")
        if not isinstance(p, int) or p >= len(links_doc) or (p < 0 and p != -1):
            bad.append((SchemaError, f"link '{link_names[i]}': bad parent index {p!r}"))
            p = -1 if p == -1 else 0
        if p == -1:
            roots.append(i)
        if p == i:
            bad.append((CyclicTree, f"link '{link_names[i]}' is its own parent"))
        parents.append(p)
    if len(roots) != 1:
        bad.append((CyclicTree, f"tree must have exactly one root, found {len(roots)}"))

    # reachability from the root doubles as the cycle check
    topo = []
    if len(roots) == 1:
        children = [[] for _ in links_doc]
        for i, p in enumerate(parents):
            if p >= 0:
                children[p].append(i)
        stack = [roots[0]]
        seen = set()
        while stack:
            i = stack.pop(0)
            if i in seen:
                continue
            seen.add(i)
            topo.append(i)
            stack.extend(children[i])
        if len(seen) != len(links_doc):
            orphans = sorted(set(range(len(links_doc))) - seen)
            bad.append((CyclicTree,
                        "links unreachable from the root (cycle or orphan): "
                        + ", ".join(link_names[i] for i in orphans)))

    joint_names = [jd.get("name", f"<joint {j}>") for j, jd in enumerate(joints_doc)]
    if len(set(joint_names)) != len(joint_names):
        bad.append((SchemaError, "duplicate joint names"))
    joint_index = {n: j for j, n in enumerate(joint_names)}

    joints = []
    joint_of_link = [-1] * len(links_doc)
    for j, jd in enumerate(joints_doc):
        name = joint_names[j]
        jtype = jd.get("type", "revolute")
        if jtype != "revolute":
            bad.append((SchemaError, f"joint '{name}': unsupported type '{jtype}'"))
        child = jd.get("child_link")
        child_id = link_index.get(child, -1)
        if child_id < 0:
            bad.append((SchemaError, f"joint '{name}': unknown child link {child!r}"))
        elif child_id in (roots[0] if roots else -1,):
            bad.append((SchemaError, f"joint '{name}': cannot actuate the root link"))
        elif joint_of_link[child_id] != -1:
            bad.append((SchemaError, f"link '{child}': more than one joint attached"))
        else:
            joint_of_link[child_id] = j
        axis = np.asarray(jd.get("axis", (0.0, 0.0, 0.0)), dtype=float).reshape(-1)
        norm = float(np.linalg.norm(axis))
        if axis.shape != (3,) or norm < 1e-12:
            bad.append((SchemaError, f"joint '{name}': axis must be a nonzero 3-vector"))
            axis = np.array([0.0, 0.0, 1.0])
            norm = 1.0
        lo, hi = (float(v) for v in jd.get("limits", (0.0, 0.0)))
        rest = float(jd.get("rest", 0.0))
        if lo > hi:
            bad.append((BadLimits, f"joint '{name}': limits inverted ({lo} > {hi})"))
        elif not (lo <= rest <= hi):
            bad.append((BadLimits, f"joint '{name}': rest {rest} outside [{lo}, {hi}]"))
        joints.append(Joint(name=name, child_link=max(child_id, 0),
                            axis=axis / norm, limits=(lo, hi), rest=rest))

    mimics = {}
    for md in doc.get("mimics", ()):
        jn, dn = md.get("joint"), md.get("driver")
        ratio = float(md.get("ratio", 1.0))
        if jn not in joint_index or dn not in joint_index:
            bad.append((SchemaError, f"mimic {jn!r} of {dn!r}: unknown joint"))
            continue
        if jn == dn:
            bad.append((SchemaError, f"mimic '{jn}' cannot drive itself"))
            continue
        if joint_index[jn] in mimics:
            bad.append((SchemaError, f"joint '{jn}' mimicked twice"))
            continue
        mimics[joint_index[jn]] = (joint_index[dn], ratio)
    for j, (d, _) in mimics.items():
        if d in mimics:
            bad.append((SchemaError,
                        f"mimic chain: driver '{joint_names[d]}' is itself a mimic"))

    tips = tuple(doc["fingertip_links"])
    if not (2 <= len(tips) <= 5):
        bad.append((SchemaError, f"fingertip count {len(tips)} outside 2..5"))
    leaf = {i for i in range(len(links_doc))} - {p for p in parents if p >= 0}
    tip_ids = []
    for t in tips:
        i = link_index.get(t, -1)
        if i < 0:
            bad.append((UnknownFingertipLink, f"fingertip link '{t}' does not exist"))
        elif i not in leaf:
            bad.append((UnknownFingertipLink, f"fingertip link '{t}' is not a leaf"))
        else:
            tip_ids.append(i)

    jmap = []
    seen_human = set()
    for pair in doc.get("human_joint_map", ()):
        hname, mname = pair[0], pair[1]
        if mname not in joint_index:
            bad.append((SchemaError, f"human_joint_map: unknown model joint '{mname}'"))
            continue
        if hname in seen_human:
            bad.append((SchemaError, f"human_joint_map: '{hname}' mapped twice"))
            continue
        seen_human.add(hname)
        jmap.append((hname, mname))

    drivers = tuple(doc.get("finger_drivers", ()))
    if drivers:
        if len(drivers) != len(tips):
            bad.append((SchemaError, "finger_drivers must list one joint per fingertip"))
        for dn in drivers:
            if dn not in joint_index:
                bad.append((SchemaError, f"finger_drivers: unknown joint '{dn}'"))

    axis = np.asarray(doc.get("approach_axis", (0.0, 0.0, 1.0)), dtype=float).reshape(-1)
    if axis.shape != (3,) or np.linalg.norm(axis) < 1e-12:
        bad.append((SchemaError, "approach_axis must be a nonzero 3-vector"))
        axis = np.array([0.0, 0.0, 1.0])
    axis = axis / np.linalg.norm(axis)

    human_tips = tuple(doc.get("human_fingertip_indices", range(len(tips))))
    if len(human_tips) != len(tips) or any(not isinstance(i, int) or i < 0 for i in human_tips):
        bad.append((SchemaError, "human_fingertip_indices must give one index per fingertip"))

    raise_schema(bad)

    links = tuple(
        Link(name=link_names[i], parent=parents[i],
             offset=pose_from_record(links_doc[i]["offset"]) if "offset" in links_doc[i]
             else identity_pose())
        for i in range(len(links_doc)))
    rest_tips = doc.get("rest_fingertips")
    return KinematicHandModel(
        name=str(doc["name"]),
        links=links,
        joints=tuple(joints),
        fingertip_links=tips,
        mimics=mimics,
        human_joint_map=tuple(jmap),
        approach_axis=axis,
        finger_drivers=drivers,
        human_fingertip_indices=human_tips,
        rest_fingertips=None if rest_tips is None else np.asarray(rest_tips, dtype=float),
        link_index=link_index,
        joint_index=joint_index,
        joint_of_link=tuple(joint_of_link),
        fingertip_link_ids=tuple(tip_ids),
        topo_order=tuple(topo),
        lower_limits=np.array([j.limits[0] for j in joints]),
        upper_limits=np.array([j.limits[1] for j in joints]),
    )


def load_hand_model_file(path) -> KinematicHandModel:
    with open(path, "r", encoding="utf-8") as fh:
        return load_hand_model(json.load(fh))


def bundled_model(name: str) -> KinematicHandModel:
    """Load one of the hand models shipped with the package."""
    ref = resources.files("dextra").joinpath(f"models/{name}.json")
    if not ref.is_file():
        raise FixtureMissing(f"no bundled hand model named '{name}'")
    return load_hand_model(json.loads(ref.read_text(encoding="utf-8")))


def rest_configuration(model: KinematicHandModel) -> HandConfiguration:
    return HandConfiguration(identity_pose(),
                             np.array([j.rest for j in model.joints]))


# ---------------------------------------------------------------------------
# kinematics
# ---------------------------------------------------------------------------

def effective_angles(model: KinematicHandModel, joint_angles: np.ndarray) -> np.ndarray:
    """Resolve mimic joints from their drivers; other entries pass through."""
    eff = np.array(joint_angles, dtype=float)
    for j, (driver, ratio) in model.mimics.items():
        eff[j] = ratio * eff[driver]
    return eff


def _check_dof(model: KinematicHandModel, angles: np.ndarray) -> None:
    if angles.shape != (model.dof,):
        raise DimensionMismatch(
            f"model '{model.name}' has {model.dof} joints, got {angles.shape}")


def _fk_tables(model: KinematicHandModel):
    """Per-link scalar tables in topo order; the python-float FK hot path
    avoids per-link numpy array construction, which dominates otherwise."""
    cache = model._cache
    if "fk" not in cache:
        rows = []
        for i in model.topo_order:
            link = model.links[i]
            j = model.joint_of_link[i]
            rows.append((
                i,
                link.parent,
                tuple(float(v) for v in link.offset.rotation),
                tuple(float(v) for v in link.offset.translation),
                j,
                tuple(float(v) for v in model.joints[j].axis) if j >= 0 else None,
            ))
        cache["fk"] = tuple(rows)
    return cache["fk"]


def _raw_fk(model: KinematicHandModel, root_q, root_t, eff):
    """Quaternion/translation tuples per link; fast path shared by callers."""
    n = len(model.links)
    qs = [None] * n
    ts = [None] * n
    root_q = (float(root_q[0]), float(root_q[1]), float(root_q[2]), float(root_q[3]))
    root_t = (float(root_t[0]), float(root_t[1]), float(root_t[2]))
    for i, parent, off_q, off_t, j, axis in _fk_tables(model):
        if parent < 0:
            pw, px, py, pz = root_q
            tx, ty, tz = root_t
        else:
            pw, px, py, pz = qs[parent]
            tx, ty, tz = ts[parent]
        ow, ox, oy, oz = off_q
        vx, vy, vz = off_t
        # rotate the offset translation by the parent quaternion
        cx = 2.0 * (py * vz - pz * vy)
        cy = 2.0 * (pz * vx - px * vz)
        cz = 2.0 * (px * vy - py * vx)
        ts[i] = (tx + vx + pw * cx + py * cz - pz * cy,
                 ty + vy + pw * cy + pz * cx - px * cz,
                 tz + vz + pw * cz + px * cy - py * cx)
        # parent rotation times offset rotation
        qw = pw * ow - px * ox - py * oy - pz * oz
        qx = pw * ox + px * ow + py * oz - pz * oy
        qy = pw * oy - px * oz + py * ow + pz * ox
        qz = pw * oz + px * oy - py * ox + pz * ow
        if j >= 0:
            half = 0.5 * eff[j]
            s = math.sin(half)
            jw, jx, jy, jz = math.cos(half), s * axis[0], s * axis[1], s * axis[2]
            qs[i] = (qw * jw - qx * jx - qy * jy - qz * jz,
                     qw * jx + qx * jw + qy * jz - qz * jy,
                     qw * jy - qx * jz + qy * jw + qz * jx,
                     qw * jz + qx * jy - qy * jx + qz * jw)
        else:
            qs[i] = (qw, qx, qy, qz)
    return qs, ts


def forward_kinematics(model: KinematicHandModel, config: HandConfiguration) -> FKResult:
    """Pose of every link plus fingertip positions for one configuration."""
    _check_dof(model, config.joint_angles)
    eff = effective_angles(model, config.joint_angles).tolist()
    qs, ts = _raw_fk(model, config.root_pose.rotation, config.root_pose.translation, eff)
    poses = tuple(SE3Pose(np.array(qs[i]), np.array(ts[i])) for i in range(len(model.links)))
    tips = np.array([ts[i] for i in model.fingertip_link_ids])
    return FKResult(link_poses=poses, fingertips=tips)


def fingertip_positions(model: KinematicHandModel, config: HandConfiguration) -> np.ndarray:
    """(K, 3) fingertip positions; cheaper than full forward_kinematics."""
    _check_dof(model, config.joint_angles)
    eff = effective_angles(model, config.joint_angles).tolist()
    _, ts = _raw_fk(model, config.root_pose.rotation, config.root_pose.translation, eff)
    return np.array([ts[i] for i in model.fingertip_link_ids])


def perturb_root(pose: SE3Pose, twist: np.ndarray) -> SE3Pose:
    """Apply a body-frame twist (rotvec[3], translation[3]) to a root pose."""
    twist = np.asarray(twist, dtype=float).reshape(ROOT_DOF)
    return compose(pose, pose_from_rotvec(twist[:3], twist[3:]))


def fingertip_jacobian(model: KinematicHandModel, config: HandConfiguration,
                       step: float = JACOBIAN_STEP) -> np.ndarray:
    """Numeric jacobian of stacked fingertip positions, central differences.

    Columns are ordered [root twist (6), joint angles (J)]; rows stack the
    fingertips as (x0, y0, z0, x1, ...).  Mimic joints contribute zero
    columns because kinematics resolves them from their drivers.
    """
    _check_dof(model, config.joint_angles)
    k = model.fingertip_count
    jac = np.empty((3 * k, ROOT_DOF + model.dof))
    eff0 = effective_angles(model, config.joint_angles).tolist()

    def tips_at(root_q, root_t, eff):
        _, ts = _raw_fk(model, root_q, root_t, eff)
        return np.array([ts[i] for i in model.fingertip_link_ids]).reshape(-1)

    for c in range(ROOT_DOF):
        tw = np.zeros(ROOT_DOF)
        tw[c] = step
        plus = perturb_root(config.root_pose, tw)
        minus = perturb_root(config.root_pose, -tw)
        f_plus = tips_at(plus.rotation, plus.translation, eff0)
        f_minus = tips_at(minus.rotation, minus.translation, eff0)
        jac[:, c] = (f_plus - f_minus) / (2.0 * step)

    rq, rt = config.root_pose.rotation, config.root_pose.translation
    for j in range(model.dof):
        angles = np.array(config.joint_angles)
        angles[j] += step
        f_plus = tips_at(rq, rt, effective_angles(model, angles).tolist())
        angles[j] -= 2.0 * step
        f_minus = tips_at(rq, rt, effective_angles(model, angles).tolist())
        jac[:, ROOT_DOF + j] = (f_plus - f_minus) / (2.0 * step)
    return jac


def clamp_to_limits(model: KinematicHandModel, joint_angles: np.ndarray) -> np.ndarray:
    """Clip every angle into its joint's limit interval (idempotent)."""
    angles = np.asarray(joint_angles, dtype=float).reshape(-1)
    _check_dof(model, angles)
    return np.clip(angles, model.lower_limits, model.upper_limits)
