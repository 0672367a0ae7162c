"""One scene end to end: observation to grasp verdict.

The pipeline runs a fixed sequence of stages (prompt, providers, depth
alignment, object-frame transfer, retargeting, pre/squeeze synthesis,
robot-frame transfer, approach planning, execution) and records a content
digest of every stage's inputs and outputs.  Given the same scene fixture,
settings, and seed, every digest and the final report are reproducible
bit for bit; wall-clock timings are collected alongside but deliberately
kept out of the digested content.

Two ablation switches change what gets executed, never how it is scored:
`transfer=False` skips the frame correction and drives the hand to the
generated-camera pose as if it were robot coordinates, and
`force_lock=False` lets the controller squeeze without the force latch.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import (
    DextraError,
    EmptyTrajectory,
    SchemaError,
    StageError,
)
from .geometry import (
    SE3Pose,
    TriangleMesh,
    compose,
    pose_from_record,
    pose_to_record,
    save_obj,
    save_points_obj,
    signed_distance,
    transform_mesh,
)
from .graspctl import (
    DEFAULT_DT,
    DEFAULT_MAX_STEPS,
    MIN_STABLE_FINGERS,
    STABILITY_BAND,
    ContactModel,
    GraspExecutionResult,
    GraspGains,
    run_grasp,
)
from .kinematics import (
    HandConfiguration,
    KinematicHandModel,
    bundled_model,
    fingertip_positions,
)
from .reconstruction import (
    CONTACT_SELECT_RADIUS,
    ReconstructionBundle,
    SceneFixture,
    align_depth,
    build_prompt,
    gather_reconstruction,
    select_contact_fingers,
    to_object_frame,
)
from .retarget import (
    DEFAULT_OPTIMIZER,
    ENGAGE_THRESHOLD,
    FRAME_ROBOT,
    PREGRASP_OFFSET,
    SQUEEZE_OFFSET,
    TWO_STAGE_STANDOFF,
    GraspAction,
    OptimizerSettings,
    human_fingertip_targets,
    initialize_retarget,
    make_pregrasp,
    make_squeeze,
    plan_two_stage,
    refine_retarget,
    to_robot_frame,
)

STAGE_NAMES = (
    "prompt",
    "providers",
    "align-depth",
    "object-frame",
    "retarget",
    "pre-squeeze",
    "robot-frame",
    "two-stage",
    "execute",
)

# bisection resolution (rad) for the geometric contact-onset search
ENGAGEMENT_TOL = 1e-6
_ENGAGEMENT_SAMPLES = 33


@dataclass(frozen=True)
class PipelineSettings:
    """Everything that shapes a run besides the scene fixture itself."""

    hand_model: str = "inspire-like-6dof"
    engage_threshold: float = ENGAGE_THRESHOLD
    contact_radius: float = CONTACT_SELECT_RADIUS
    pregrasp_offset: float = PREGRASP_OFFSET
    squeeze_offset: float = SQUEEZE_OFFSET
    standoff: float = TWO_STAGE_STANDOFF
    optimizer: OptimizerSettings = DEFAULT_OPTIMIZER
    gains: GraspGains = GraspGains()
    dt: float = DEFAULT_DT
    max_steps: int = DEFAULT_MAX_STEPS
    stability_band: tuple = STABILITY_BAND
    min_stable_fingers: int = MIN_STABLE_FINGERS
    transfer: bool = True         # False: execute at the generated-camera pose
    force_lock: bool = True       # False: ignore force feedback while closing
    seed: int = 0
    noise_sigma: float | None = None  # None: take the scene's sensor noise


_SETTINGS_KEYS = {f.name for f in dataclasses.fields(PipelineSettings)}
_OPTIMIZER_KEYS = {f.name for f in dataclasses.fields(OptimizerSettings)}
_GAINS_KEYS = {f.name for f in dataclasses.fields(GraspGains)}


def settings_from_dict(doc: dict) -> PipelineSettings:
    """Build settings from a plain dict, rejecting unknown keys."""
    bad = [f"unknown settings key '{k}'" for k in doc if k not in _SETTINGS_KEYS]
    for section, allowed in (("optimizer", _OPTIMIZER_KEYS), ("gains", _GAINS_KEYS)):
        for k in doc.get(section, {}) if isinstance(doc.get(section), dict) else {}:
            if k not in allowed:
                bad.append(f"unknown {section} key '{k}'")
    if bad:
        raise SchemaError(bad)
    kwargs = dict(doc)
    if "optimizer" in kwargs:
        kwargs["optimizer"] = OptimizerSettings(**kwargs["optimizer"])
    if "gains" in kwargs:
        kwargs["gains"] = GraspGains(**kwargs["gains"])
    if "stability_band" in kwargs:
        kwargs["stability_band"] = tuple(float(v) for v in kwargs["stability_band"])
    return PipelineSettings(**kwargs)


def settings_from_file(path) -> PipelineSettings:
    return settings_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# canonical serialization and digests
# ---------------------------------------------------------------------------

def canonical(obj):
    """Reduce a result object to plain JSON types, deterministically.

    Arrays become nested float lists, poses become records, meshes are
    summarized by content hash (their vertices would swamp the report),
    and non-finite floats become strings so the output stays strict JSON.
    """
    if obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return canonical(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, SE3Pose):
        return canonical(pose_to_record(obj))
    if isinstance(obj, GraspAction):
        return grasp_record(obj)
    if isinstance(obj, TriangleMesh):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(obj.vertices).tobytes())
        h.update(np.ascontiguousarray(obj.triangles).tobytes())
        return {"vertex_count": int(len(obj.vertices)),
                "triangle_count": int(len(obj.triangles)),
                "content": h.hexdigest()}
    if dataclasses.is_dataclass(obj):
        return {f.name: canonical(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj) -> str:
    return json.dumps(canonical(obj), sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def content_digest(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def grasp_record(g: GraspAction) -> dict:
    return {
        "hand_model": g.hand_model,
        "frame": g.frame,
        "root_pose": canonical(pose_to_record(g.config.root_pose)),
        "joint_angles": [float(a) for a in g.config.joint_angles],
        "residual": [float(r) for r in g.residual],
    }


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PipelineReport:
    """Deterministic run record plus the live result objects.

    `as_dict` is the serialized face of the run; timings ride along in a
    separate field so two runs of the same scene agree byte for byte on
    everything that matters.
    """

    scene: str
    object_name: str
    hand_model: str
    seed: int
    verdict: str
    f_target: float
    prompt: dict
    alignment: dict
    retarget: dict
    grasps: dict
    plan: dict
    execution: dict
    stages: tuple
    timings: dict
    result: GraspExecutionResult = field(repr=False)
    actions: dict = field(repr=False)

    def as_dict(self, include_timings: bool = False) -> dict:
        doc = {
            "scene": self.scene,
            "object_name": self.object_name,
            "hand_model": self.hand_model,
            "seed": self.seed,
            "verdict": self.verdict,
            "f_target": self.f_target,
            "prompt": self.prompt,
            "alignment": self.alignment,
            "retarget": self.retarget,
            "grasps": self.grasps,
            "plan": self.plan,
            "execution": self.execution,
            "stages": list(self.stages),
        }
        if include_timings:
            doc["timings"] = dict(self.timings)
        return canonical(doc)

    def to_json(self, include_timings: bool = False, indent: int = 2) -> str:
        return json.dumps(self.as_dict(include_timings), indent=indent,
                          sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# geometric contact onset
# ---------------------------------------------------------------------------

def derive_engagement(model: KinematicHandModel, pre: GraspAction,
                      squeeze: GraspAction, mesh: TriangleMesh,
                      tol: float = ENGAGEMENT_TOL) -> np.ndarray:
    """Closing coordinate at which each fingertip first meets the surface.

    For every finger, hold the other joints at their squeeze values and
    sweep the driver angle from its pre-grasp value toward its squeeze
    value; the first angle whose fingertip crosses the surface (refined by
    bisection to `tol`) is that finger's contact onset.  Fingers that never
    reach the surface within the sweep get +inf, which the spring model
    reads as free air.  `mesh` must live in the same frame as the grasps.
    """
    if pre.frame != squeeze.frame:
        raise SchemaError([f"pre grasp is in '{pre.frame}', squeeze in '{squeeze.frame}'"])
    drivers = [model.joint_index[n] for n in model.finger_drivers]
    root = squeeze.config.root_pose
    base = np.array(squeeze.config.joint_angles)
    pre_angles = np.array(pre.config.joint_angles)
    tip_row = {j: k for k, j in enumerate(drivers)}

    def tip_depth(joint: int, angle: float) -> float:
        angles = base.copy()
        angles[joint] = angle
        tips = fingertip_positions(model, HandConfiguration(root, angles))
        return signed_distance(mesh, tips[tip_row[joint]])

    out = np.full(len(drivers), np.inf)
    for k, j in enumerate(drivers):
        lo = float(pre_angles[j])
        hi = float(base[j])
        if hi <= lo + 1e-12:
            # the driver does not close (or closes the wrong way for a
            # one-sided spring); only a pre-existing touch counts
            if tip_depth(j, lo) <= 0.0:
                out[k] = lo
            continue
        grid = np.linspace(lo, hi, _ENGAGEMENT_SAMPLES)
        depths = [tip_depth(j, a) for a in grid]
        if depths[0] <= 0.0:
            out[k] = lo
            continue
        crossing = next((i for i, d in enumerate(depths) if d <= 0.0), None)
        if crossing is None:
            continue
        a, b = float(grid[crossing - 1]), float(grid[crossing])
        while (b - a) > tol:
            mid = 0.5 * (a + b)
            if tip_depth(j, mid) <= 0.0:
                b = mid
            else:
                a = mid
        out[k] = 0.5 * (a + b)
    return out


# ---------------------------------------------------------------------------
# the pipeline
# ---------------------------------------------------------------------------

def _as_executed_unaligned(grasp: GraspAction, t_o_gen: SE3Pose) -> GraspAction:
    """Treat the generated-camera pose as robot coordinates (ablation)."""
    root = compose(t_o_gen, grasp.config.root_pose)
    return replace(grasp, config=HandConfiguration(root, grasp.config.joint_angles),
                   frame=FRAME_ROBOT)


def _contact_model(scene: SceneFixture, settings: PipelineSettings,
                   model: KinematicHandModel, pre: GraspAction,
                   squeeze: GraspAction, mesh_exec: TriangleMesh):
    """Build the execution-stage contact model from the scene's spec."""
    spec = scene.contact_spec()
    k = len(model.finger_drivers)
    stiffness = np.asarray(spec.get("stiffness", 20.0), dtype=float)
    if stiffness.ndim == 0:
        stiffness = np.full(k, float(stiffness))
    engagement_spec = spec.get("engagement", "auto")
    if isinstance(engagement_spec, str):
        if engagement_spec != "auto":
            raise SchemaError([f"engagement must be 'auto' or a list, got '{engagement_spec}'"])
        engagement = derive_engagement(model, pre, squeeze, mesh_exec)
    else:
        engagement = np.asarray(engagement_spec, dtype=float)
    noise = settings.noise_sigma
    if noise is None:
        noise = float(spec.get("noise_sigma", 0.0))
    yield_force = spec.get("yield_force")
    contact = ContactModel(stiffness=stiffness, engagement=engagement,
                           yield_force=None if yield_force is None else float(yield_force),
                           noise_sigma=noise)
    gains = settings.gains
    if "gains" in spec:
        gains = GraspGains(kp=float(spec["gains"].get("kp", gains.kp)),
                           kd=float(spec["gains"].get("kd", gains.kd)))
    dt = float(spec.get("dt", settings.dt))
    max_steps = int(spec.get("max_steps", settings.max_steps))
    return contact, gains, dt, max_steps


def run_pipeline(scene, settings: PipelineSettings | None = None,
                 export_dir=None) -> PipelineReport:
    """Run every stage on one scene and return the report.

    `scene` is a fixture directory path or an already-built SceneFixture.
    Errors raised by a stage carry a `stage` attribute naming it; anything
    that is not already a descriptive error is wrapped in StageError.
    """
    if not isinstance(scene, SceneFixture):
        scene = SceneFixture(scene)
    if settings is None:
        settings = PipelineSettings()
    model = bundled_model(scene.hand_model or settings.hand_model)

    records = []
    timings = {}

    def stage(name, inputs, fn):
        digest_in = content_digest(inputs)
        start = time.perf_counter()
        try:
            out = fn()
        except DextraError as exc:
            if getattr(exc, "stage", None) is None:
                exc.stage = name
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        timings[name] = time.perf_counter() - start
        records.append({"name": name, "input": digest_in,
                        "output": content_digest(out)})
        return out

    prompt = stage("prompt", {"scene": scene.name, "object": scene.object_name,
                              "intent": scene.intent, "kind": scene.prompt_kind},
                   lambda: build_prompt(scene.object_name, scene.intent,
                                        scene.prompt_kind,
                                        observation_ref=scene.observation.image_ref,
                                        region_ref=scene.region_ref,
                                        demo_ref=scene.demo_ref))

    bundle: ReconstructionBundle = stage(
        "providers", {"scene": scene.name, "prompt": prompt},
        lambda: gather_reconstruction(scene, prompt))

    def _align():
        mesh_gen = transform_mesh(bundle.mesh, bundle.object_pose_generated)
        fingers = scene.contact_fingers
        if fingers is None:
            fingers = select_contact_fingers(bundle.hand, mesh_gen,
                                             settings.contact_radius)
        fingers = tuple(int(i) for i in fingers)
        aligned = align_depth(bundle.hand, mesh_gen, fingers)
        shift = float(aligned.config.root_pose.translation[2]
                      - bundle.hand.config.root_pose.translation[2])
        return aligned, shift, fingers

    hand_aligned, depth_shift, contact_fingers = stage(
        "align-depth", {"hand": bundle.hand, "mesh": bundle.mesh,
                        "pose": bundle.object_pose_generated}, _align)

    hand_obj = stage("object-frame",
                     {"hand": hand_aligned, "pose": bundle.object_pose_generated},
                     lambda: to_object_frame(bundle.object_pose_generated,
                                             hand_aligned))

    def _retarget():
        human_model = bundled_model(hand_obj.skeleton)
        initial = initialize_retarget(hand_obj, model, human_model)
        targets = human_fingertip_targets(hand_obj, model)
        return refine_retarget(initial, targets, model, wrist_free=True,
                               settings=settings.optimizer)

    grasp_obj = stage("retarget", {"hand": hand_obj, "model": model.name},
                      _retarget)

    def _pre_squeeze():
        pre = make_pregrasp(grasp_obj, bundle.mesh, model,
                            settings.pregrasp_offset, settings.engage_threshold,
                            settings.optimizer)
        squeeze = make_squeeze(grasp_obj, bundle.mesh, model,
                               settings.squeeze_offset, settings.engage_threshold,
                               settings.optimizer)
        return pre, squeeze

    pre_obj, squeeze_obj = stage(
        "pre-squeeze", {"grasp": grasp_obj, "mesh": bundle.mesh}, _pre_squeeze)

    hand_eye = scene.hand_eye()
    t_obs = bundle.object_pose_observed
    t_gen = bundle.object_pose_generated

    def _robot_frame():
        if settings.transfer:
            return (to_robot_frame(pre_obj, t_obs, hand_eye),
                    to_robot_frame(squeeze_obj, t_obs, hand_eye))
        return (_as_executed_unaligned(pre_obj, t_gen),
                _as_executed_unaligned(squeeze_obj, t_gen))

    pre_exec, squeeze_exec = stage(
        "robot-frame", {"pre": pre_obj, "squeeze": squeeze_obj,
                        "observed": t_obs, "hand_eye": hand_eye,
                        "transfer": settings.transfer}, _robot_frame)

    plan = stage("two-stage", {"grasp": pre_exec, "standoff": settings.standoff},
                 lambda: plan_two_stage(pre_exec, model, settings.standoff))

    # the physical surface the fingers actually meet: the observed object
    # carried through the camera-to-robot extrinsics
    mesh_exec = transform_mesh(bundle.mesh, compose(hand_eye, t_obs))

    def _execute():
        contact, gains, dt, max_steps = _contact_model(
            scene, settings, model, pre_exec, squeeze_exec, mesh_exec)
        result = run_grasp(pre_exec, squeeze_exec, contact, bundle.f_target,
                           model, gains=gains, dt=dt, max_steps=max_steps,
                           lock_enabled=settings.force_lock,
                           stability_band=settings.stability_band,
                           min_stable_fingers=settings.min_stable_fingers,
                           seed=settings.seed)
        return result, contact, dt

    result, contact, dt = stage(
        "execute", {"pre": pre_exec, "squeeze": squeeze_exec,
                    "mesh": mesh_exec, "f_target": bundle.f_target,
                    "force_lock": settings.force_lock, "seed": settings.seed},
        _execute)

    actions = {
        "object": grasp_obj,
        "pre_object": pre_obj,
        "squeeze_object": squeeze_obj,
        "pre_executed": pre_exec,
        "squeeze_executed": squeeze_exec,
        "plan_standoff": plan[0],
        "plan_final": plan[1],
    }
    trace_obj = grasp_obj.objective_trace
    report = PipelineReport(
        scene=scene.name,
        object_name=scene.object_name,
        hand_model=model.name,
        seed=settings.seed,
        verdict=result.verdict,
        f_target=float(bundle.f_target),
        prompt={"kind": prompt.kind, "positive": prompt.positive,
                "negative": prompt.negative,
                "attachments": [list(a) for a in prompt.attachments]},
        alignment={"depth_shift": depth_shift,
                   "contact_fingers": list(contact_fingers)},
        retarget={"residual": [float(r) for r in grasp_obj.residual],
                  "objective_first": float(trace_obj[0]),
                  "objective_final": float(trace_obj[-1]),
                  "accepted_steps": len(trace_obj) - 1},
        grasps={name: grasp_record(g) for name, g in actions.items()},
        plan={"standoff_distance": float(settings.standoff)},
        execution={
            "verdict": result.verdict,
            "f_target": float(result.f_target),
            "final_forces": result.final_forces,
            "peak_forces": result.peak_forces,
            "peak_commands": result.peak_commands,
            "locked": result.locked,
            "steps": int(result.steps),
            "dt": float(dt),
            "engagement": contact.engagement,
            "stiffness": contact.stiffness,
            "yield_force": contact.yield_force,
            "noise_sigma": float(contact.noise_sigma),
            "force_lock": settings.force_lock,
            "transfer": settings.transfer,
        },
        stages=tuple(records),
        timings=timings,
        result=result,
        actions=actions,
    )
    if export_dir is not None:
        export_scene_geometry(export_dir, bundle.mesh, mesh_exec, model, actions)
    return report


def export_scene_geometry(out_dir, mesh_obj: TriangleMesh,
                          mesh_exec: TriangleMesh, model: KinematicHandModel,
                          actions: dict) -> list:
    """Dump per-stage geometry as OBJ files for external inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def _write_mesh(name, mesh):
        path = out / name
        save_obj(path, mesh)
        written.append(path)

    def _write_tips(name, action):
        path = out / name
        save_points_obj(path, fingertip_positions(model, action.config))
        written.append(path)

    _write_mesh("object_frame.obj", mesh_obj)
    _write_mesh("executed_frame.obj", mesh_exec)
    for name, action in actions.items():
        _write_tips(f"tips_{name}.obj", action)
    return written


# ---------------------------------------------------------------------------
# manipulation along an object trajectory
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ObjectTrajectory:
    """Timestamped object poses in the real camera frame."""

    times: np.ndarray
    poses: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        if len(t) != len(self.poses):
            raise SchemaError(["trajectory times and poses disagree in length"])
        if len(t) > 1 and not bool((np.diff(t) > 0.0).all()):
            raise SchemaError(["trajectory timestamps must be strictly increasing"])
        t.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self):
        return len(self.poses)

    @classmethod
    def from_records(cls, records) -> "ObjectTrajectory":
        times = [float(r["t"]) for r in records]
        poses = [pose_from_record(r["pose"]) for r in records]
        return cls(times=np.asarray(times), poses=tuple(poses))


def manipulation_trajectory(grasp: GraspAction, trajectory: ObjectTrajectory,
                            hand_eye: SE3Pose) -> tuple:
    """Wrist poses that keep an object-frame grasp rigidly attached.

    Re-anchors the grasp to every trajectory sample, so the hand-object
    relation is constant along the whole motion and the joint angles never
    change.  The grasp must still be in the object frame.
    """
    if len(trajectory) == 0:
        raise EmptyTrajectory("trajectory has no samples")
    return tuple(to_robot_frame(grasp, pose, hand_eye)
                 for pose in trajectory.poses)
