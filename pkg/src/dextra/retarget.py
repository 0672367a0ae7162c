"""Mapping a human grasp onto a dexterous hand and staging it for a robot.

The transfer runs in the object frame: initialize the robot hand from the
human wrist pose and structurally similar joints, then refine wrist and
fingers so the robot fingertips land on the human fingertip keypoints.
Pre-grasp and squeeze variants are synthesized by sliding the fingertip
targets along the local surface normals while the wrist stays fixed.

Every grasp carries a frame tag (object / generated-camera / real-camera /
robot) and the frame-changing operations refuse inputs already in their
output frame, so a transform can never be applied twice.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimensionMismatch,
    MissingJointMap,
    NoConvergence,
    WrongFrame,
)
from .geometry import (
    SE3Pose,
    TriangleMesh,
    compose,
    nearest_surface_point,
    rotate_vector,
)
from .kinematics import (
    ROOT_DOF,
    HandConfiguration,
    HandPoseEstimate,
    KinematicHandModel,
    clamp_to_limits,
    fingertip_jacobian,
    fingertip_positions,
    perturb_root,
)

FRAME_OBJECT = "object"
FRAME_GENERATED = "generated-camera"
FRAME_REAL = "real-camera"
FRAME_ROBOT = "robot"
FRAMES = (FRAME_OBJECT, FRAME_GENERATED, FRAME_REAL, FRAME_ROBOT)

PREGRASP_OFFSET = 0.05    # m outward along the contact normal
SQUEEZE_OFFSET = -0.01    # m inward along the contact normal
ENGAGE_THRESHOLD = 0.01   # m; fingertips this close to the surface engage
TWO_STAGE_STANDOFF = 0.10  # m retreat along the approach axis


@dataclass(frozen=True)
class OptimizerSettings:
    """Damped least-squares schedule for fingertip refinement."""

    max_iterations: int = 200
    damping_init: float = 1e-3
    damping_increase: float = 10.0
    damping_decrease: float = 10.0
    min_improvement: float = 1e-10   # m^2 between accepted steps


DEFAULT_OPTIMIZER = OptimizerSettings()


@dataclass(frozen=True, eq=False)
class GraspAction:
    """A hand configuration bound to a model and a coordinate frame."""

    hand_model: str
    config: HandConfiguration
    frame: str
    residual: np.ndarray          # per-finger fingertip error (m)
    objective_trace: tuple = ()   # objective after each accepted solver step

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise WrongFrame(f"unknown frame tag '{self.frame}'")
        r = np.asarray(self.residual, dtype=float).reshape(-1).copy()
        if r.size and float(r.min()) < 0.0:
            raise ValueError("residuals are distances and cannot be negative")
        r.setflags(write=False)
        object.__setattr__(self, "residual", r)
        object.__setattr__(self, "objective_trace", tuple(self.objective_trace))


@dataclass(frozen=True, eq=False)
class ContactSet:
    """Per-finger nearest surface points for one grasp."""

    points: np.ndarray       # (K, 3) contact points on the surface
    normals: np.ndarray      # (K, 3) outward unit normals
    distances: np.ndarray    # (K,) signed distances of the fingertips
    engaged: np.ndarray      # (K,) bool, within the engage threshold

    @property
    def engaged_count(self) -> int:
        return int(self.engaged.sum())


def human_fingertip_targets(human: HandPoseEstimate, model: KinematicHandModel) -> np.ndarray:
    """Pick the human fingertip keypoints this hand's fingertips track."""
    idx = list(model.human_fingertip_indices)
    if any(i >= len(human.fingertip_points) for i in idx):
        raise DimensionMismatch(
            f"model '{model.name}' expects human fingertips {idx}, "
            f"estimate has {len(human.fingertip_points)}")
    return np.array(human.fingertip_points[idx])


def initialize_retarget(human: HandPoseEstimate, model: KinematicHandModel,
                        human_model: KinematicHandModel) -> GraspAction:
    """Seed the robot grasp from the human estimate.

    Copies the wrist pose verbatim and transplants the angles of joints the
    model declares structurally similar; everything else starts at rest.
    """
    if not model.human_joint_map:
        raise MissingJointMap(f"model '{model.name}' declares no human joint map")
    angles = np.array([j.rest for j in model.joints])
    for hname, mname in model.human_joint_map:
        if hname not in human_model.joint_index:
            raise MissingJointMap(
                f"human joint '{hname}' not present in skeleton '{human_model.name}'")
        angles[model.joint_index[mname]] = human.config.joint_angles[
            human_model.joint_index[hname]]
    angles = clamp_to_limits(model, angles)
    config = HandConfiguration(human.config.root_pose, angles)
    targets = human_fingertip_targets(human, model)
    tips = fingertip_positions(model, config)
    residual = np.linalg.norm(tips - targets, axis=1)
    return GraspAction(hand_model=model.name, config=config,
                       frame=FRAME_OBJECT, residual=residual)


def refine_retarget(initial: GraspAction, targets: np.ndarray,
                    model: KinematicHandModel, wrist_free: bool = True,
                    settings: OptimizerSettings = DEFAULT_OPTIMIZER) -> GraspAction:
    """Damped least-squares refinement of fingertip placement.

    Minimizes the summed squared fingertip-to-target distance over the
    joint angles, plus the wrist twist when `wrist_free`.  Joint angles are
    clamped into their limits after every step; the recorded objective
    trace is strictly decreasing.  With the wrist frozen the root pose of
    the result is bitwise identical to the input.
    """
    targets = np.asarray(targets, dtype=float)
    k = model.fingertip_count
    if targets.shape != (k, 3):
        raise DimensionMismatch(
            f"targets shape {targets.shape} does not match {k} fingertips")

    cfg = HandConfiguration(initial.config.root_pose,
                            clamp_to_limits(model, initial.config.joint_angles))
    tips = fingertip_positions(model, cfg)
    res_vec = (tips - targets).ravel()
    objective = float(res_vec @ res_vec)
    trace = [objective]
    lam = settings.damping_init
    gram = grad = None
    iterations = 0
    while iterations < settings.max_iterations:
        iterations += 1
        if gram is None:
            jac = fingertip_jacobian(model, cfg)
            if not wrist_free:
                jac = jac[:, ROOT_DOF:]
            gram = jac.T @ jac
            grad = jac.T @ res_vec
        step = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), -grad)
        if wrist_free:
            root_c = perturb_root(cfg.root_pose, step[:ROOT_DOF])
            ang_c = clamp_to_limits(model, cfg.joint_angles + step[ROOT_DOF:])
        else:
            root_c = cfg.root_pose
            ang_c = clamp_to_limits(model, cfg.joint_angles + step)
        cand = HandConfiguration(root_c, ang_c)
        tips_c = fingertip_positions(model, cand)
        res_c = (tips_c - targets).ravel()
        obj_c = float(res_c @ res_c)
        if not math.isfinite(obj_c):
            raise NoConvergence("fingertip objective became non-finite")
        if obj_c < objective:
            improvement = objective - obj_c
            cfg, tips, res_vec, objective = cand, tips_c, res_c, obj_c
            trace.append(objective)
            lam = max(lam / settings.damping_decrease, 1e-12)
            gram = grad = None
            if improvement < settings.min_improvement:
                break
        else:
            lam *= settings.damping_increase
            if lam > 1e12:
                break  # step size is down in the noise; nothing left to gain

    residual = np.linalg.norm(tips - targets, axis=1)
    return GraspAction(hand_model=model.name, config=cfg, frame=initial.frame,
                       residual=residual, objective_trace=tuple(trace))


def compute_contacts(grasp: GraspAction, mesh: TriangleMesh,
                     model: KinematicHandModel,
                     engage_threshold: float = ENGAGE_THRESHOLD) -> ContactSet:
    """Nearest surface point per fingertip; grasp must be in the object frame."""
    if grasp.frame != FRAME_OBJECT:
        raise WrongFrame(f"contacts are defined in the object frame, got '{grasp.frame}'")
    tips = fingertip_positions(model, grasp.config)
    points = np.empty_like(tips)
    normals = np.empty_like(tips)
    distances = np.empty(len(tips))
    for i, tip in enumerate(tips):
        hit = nearest_surface_point(mesh, tip)
        points[i] = hit.point
        normals[i] = hit.normal
        distances[i] = hit.distance
    return ContactSet(points=points, normals=normals, distances=distances,
                      engaged=distances <= engage_threshold)


def _offset_grasp(grasp: GraspAction, mesh: TriangleMesh, model: KinematicHandModel,
                  offset: float, engage_threshold: float,
                  settings: OptimizerSettings) -> GraspAction:
    """Move engaged fingertips `offset` along their fixed contact normals.

    Disengaged fingers are anchored at their current positions and the
    wrist never moves; a grasp with no engaged finger is returned as-is.
    """
    contacts = compute_contacts(grasp, mesh, model, engage_threshold)
    if contacts.engaged_count == 0:
        return replace(grasp)
    tips = fingertip_positions(model, grasp.config)
    targets = np.where(contacts.engaged[:, None],
                       contacts.points + offset * contacts.normals,
                       tips)
    return refine_retarget(grasp, targets, model, wrist_free=False, settings=settings)


def make_pregrasp(grasp: GraspAction, mesh: TriangleMesh, model: KinematicHandModel,
                  offset: float = PREGRASP_OFFSET,
                  engage_threshold: float = ENGAGE_THRESHOLD,
                  settings: OptimizerSettings = DEFAULT_OPTIMIZER) -> GraspAction:
    """Open the grasp: contact fingertips retreat outward along their normals."""
    return _offset_grasp(grasp, mesh, model, offset, engage_threshold, settings)


def make_squeeze(grasp: GraspAction, mesh: TriangleMesh, model: KinematicHandModel,
                 offset: float = SQUEEZE_OFFSET,
                 engage_threshold: float = ENGAGE_THRESHOLD,
                 settings: OptimizerSettings = DEFAULT_OPTIMIZER) -> GraspAction:
    """Tighten the grasp: contact fingertips press inward past the surface."""
    return _offset_grasp(grasp, mesh, model, offset, engage_threshold, settings)


def to_robot_frame(grasp: GraspAction, t_o_obs: SE3Pose, hand_eye: SE3Pose) -> GraspAction:
    """Carry an object-frame grasp into robot coordinates.

    Chains the object's observed pose in the real camera with the
    camera-to-robot extrinsics.  Joint angles are untouched; applying this
    to a grasp already in the robot frame raises WrongFrame.
    """
    if grasp.frame == FRAME_ROBOT:
        raise WrongFrame("grasp is already in the robot frame")
    if grasp.frame != FRAME_OBJECT:
        raise WrongFrame(f"robot transfer starts from the object frame, got '{grasp.frame}'")
    root = compose(hand_eye, compose(t_o_obs, grasp.config.root_pose))
    return replace(grasp, config=HandConfiguration(root, grasp.config.joint_angles),
                   frame=FRAME_ROBOT)


def plan_two_stage(grasp: GraspAction, model: KinematicHandModel,
                   standoff: float = TWO_STAGE_STANDOFF) -> tuple:
    """Approach plan: a standoff pose along the approach axis, then the grasp.

    Stage one pulls the wrist back `standoff` meters along the hand's
    declared approach direction with identical rotation and fingers; stage
    two is the input grasp unchanged.
    """
    if grasp.frame != FRAME_ROBOT:
        raise WrongFrame(f"two-stage plans are executed in the robot frame, got '{grasp.frame}'")
    root = grasp.config.root_pose
    direction = rotate_vector(root, model.approach_axis)
    back = SE3Pose(root.rotation, root.translation - standoff * direction)
    stage1 = replace(grasp, config=HandConfiguration(back, grasp.config.joint_angles))
    return (stage1, replace(grasp))
