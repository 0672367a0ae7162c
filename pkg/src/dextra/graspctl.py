"""Force-constrained grasp execution in finger closing coordinates.

Each finger is commanded through one closing coordinate, the driver joint
declared by the hand model (linkage-coupled segments follow via mimics).
A PD loop drives every finger from its pre-grasp angle toward its squeeze
angle; the moment a finger's sensed force reaches the predicted target
force, its current position is locked in as the new setpoint for the rest
of the episode.  Closing force is therefore bounded near the target
instead of running to the squeeze pose on rigid objects.

Contact is simulated by a one-sided linear spring per finger: zero force
until the closing coordinate passes the engagement position, then force
proportional to the penetration.  Optional Gaussian sensor noise is seeded
explicitly, so the default (sigma = 0) episode is bit-for-bit repeatable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, MissingField, NonPositiveDt
from .kinematics import KinematicHandModel
from .retarget import GraspAction

DEFAULT_KP = 5.0          # 1/s
DEFAULT_KD = 0.1
DEFAULT_DT = 0.01         # s
DEFAULT_MAX_STEPS = 1000
STABILITY_BAND = (0.7, 1.1)   # acceptable final force, fraction of target
MIN_STABLE_FINGERS = 3
_COMMAND_EPS = 1e-9       # rad/s; commands below this mean the hand settled

VERDICT_STABLE = "stable"
VERDICT_UNSTABLE = "unstable"
VERDICT_DAMAGED = "damaged"


@dataclass(frozen=True)
class GraspGains:
    kp: float = DEFAULT_KP
    kd: float = DEFAULT_KD


@dataclass(frozen=True, eq=False)
class ContactModel:
    """One-sided spring per finger, in closing-coordinate space."""

    stiffness: np.ndarray        # (K,) N per rad of penetration
    engagement: np.ndarray       # (K,) closing coordinate where contact starts
    yield_force: float | None = None   # N; peak force beyond this damages the object
    noise_sigma: float = 0.0     # N; gaussian sensor noise

    def __post_init__(self):
        s = np.asarray(self.stiffness, dtype=float).reshape(-1).copy()
        e = np.asarray(self.engagement, dtype=float).reshape(-1).copy()
        if s.shape != e.shape:
            raise DimensionMismatch("stiffness and engagement must match per finger")
        if float(s.min()) <= 0.0:
            raise ValueError("contact stiffness must be positive")
        s.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "stiffness", s)
        object.__setattr__(self, "engagement", e)


@dataclass(frozen=True, eq=False)
class ForceReading:
    forces: np.ndarray           # (K,) N, non-negative


@dataclass(frozen=True, eq=False)
class ControllerState:
    """Per-finger latch state carried between steps."""

    locked: np.ndarray           # (K,) bool, permanent for the episode
    locked_positions: np.ndarray  # (K,) rad, valid where locked
    last_error: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ExecutionTrace:
    positions: np.ndarray        # (T, K) closing coordinates at step start
    forces: np.ndarray           # (T, K) sensed forces
    commands: np.ndarray         # (T, K) velocity commands
    locked: np.ndarray           # (T, K) latch state after the step


@dataclass(frozen=True, eq=False)
class GraspExecutionResult:
    verdict: str
    final_forces: np.ndarray
    peak_forces: np.ndarray
    peak_commands: np.ndarray
    locked: np.ndarray
    final_positions: np.ndarray
    f_target: float
    steps: int
    trace: ExecutionTrace


def make_controller_state(finger_count: int) -> ControllerState:
    return ControllerState(locked=np.zeros(finger_count, dtype=bool),
                           locked_positions=np.zeros(finger_count))


def sense_force(contact: ContactModel, positions, rng: np.random.Generator | None = None) -> ForceReading:
    """Spring force per finger; clipped at zero like a real normal force."""
    pos = np.asarray(positions, dtype=float).reshape(-1)
    if pos.shape != contact.engagement.shape:
        raise DimensionMismatch("positions do not match the contact model")
    f = contact.stiffness * np.maximum(0.0, pos - contact.engagement)
    if contact.noise_sigma > 0.0 and rng is not None:
        f = np.maximum(0.0, f + rng.normal(0.0, contact.noise_sigma, f.shape))
    return ForceReading(forces=f)


def controller_step(state: ControllerState, current, squeeze_target,
                    force: ForceReading, f_target: float,
                    gains: GraspGains = GraspGains(), dt: float = DEFAULT_DT):
    """One PD update; returns (velocity command, next state).

    Fingers whose sensed force has reached `f_target` lock at their current
    position; the latch never releases within an episode.
    """
    if dt <= 0.0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    current = np.asarray(current, dtype=float).reshape(-1)
    squeeze_target = np.asarray(squeeze_target, dtype=float).reshape(-1)
    if current.shape != squeeze_target.shape or current.shape != state.locked.shape:
        raise DimensionMismatch("controller arrays disagree on finger count")

    newly_locked = (~state.locked) & (force.forces >= f_target)
    locked = state.locked | newly_locked
    locked_positions = np.where(newly_locked, current, state.locked_positions)
    target = np.where(locked, locked_positions, squeeze_target)
    error = target - current
    if state.last_error is None:
        derivative = np.zeros_like(error)
    else:
        derivative = (error - state.last_error) / dt
    command = gains.kp * error + gains.kd * derivative
    return command, ControllerState(locked=locked, locked_positions=locked_positions,
                                    last_error=error)


def _driver_indices(model: KinematicHandModel) -> list:
    if not model.finger_drivers:
        raise MissingField(f"model '{model.name}' declares no finger_drivers")
    return [model.joint_index[name] for name in model.finger_drivers]


def run_grasp(pre: GraspAction, squeeze: GraspAction, contact: ContactModel,
              f_target: float, model: KinematicHandModel,
              gains: GraspGains = GraspGains(), dt: float = DEFAULT_DT,
              max_steps: int = DEFAULT_MAX_STEPS, lock_enabled: bool = True,
              stability_band: tuple = STABILITY_BAND,
              min_stable_fingers: int = MIN_STABLE_FINGERS,
              seed: int = 0) -> GraspExecutionResult:
    """Close from the pre-grasp toward the squeeze pose under force limits.

    The episode ends when the velocity commands settle below a small
    threshold (which covers the all-locked case once the latch transient
    dies out) or `max_steps` elapses.  Verdict: damaged if any finger's peak force
    exceeded the object's yield force; stable if at least
    `min_stable_fingers` fingers ended inside the stability band around
    `f_target`; unstable otherwise.  With `lock_enabled` False the force
    latch is bypassed and fingers drive all the way to the squeeze pose.
    """
    if dt <= 0.0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    if f_target <= 0.0:
        raise ValueError(f"target force must be positive, got {f_target}")
    drivers = _driver_indices(model)
    positions = np.array(pre.config.joint_angles[drivers])
    squeeze_targets = np.array(squeeze.config.joint_angles[drivers])
    k = len(drivers)
    if contact.engagement.shape != (k,):
        raise DimensionMismatch(
            f"contact model covers {contact.engagement.shape[0]} fingers, hand has {k}")

    rng = np.random.default_rng(seed) if contact.noise_sigma > 0.0 else None
    latch_threshold = f_target if lock_enabled else np.inf
    state = make_controller_state(k)
    rows_pos, rows_force, rows_cmd, rows_locked = [], [], [], []
    steps = 0
    for _ in range(max_steps):
        reading = sense_force(contact, positions, rng)
        command, state = controller_step(state, positions, squeeze_targets,
                                         reading, latch_threshold, gains, dt)
        rows_pos.append(positions.copy())
        rows_force.append(reading.forces)
        rows_cmd.append(command)
        rows_locked.append(state.locked.copy())
        positions = positions + command * dt
        steps += 1
        # settling covers the all-locked case too: the latch flips the
        # setpoint, and the PD needs a few more steps to absorb the
        # derivative transient and hold the locked position
        if float(np.abs(command).max()) < _COMMAND_EPS:
            break

    final_forces = sense_force(contact, positions, rng).forces
    all_forces = np.vstack(rows_force + [final_forces])
    peak_forces = all_forces.max(axis=0)
    trace = ExecutionTrace(positions=np.vstack(rows_pos), forces=np.vstack(rows_force),
                           commands=np.vstack(rows_cmd), locked=np.vstack(rows_locked))

    if contact.yield_force is not None and bool((peak_forces > contact.yield_force).any()):
        verdict = VERDICT_DAMAGED
    else:
        lo, hi = stability_band
        in_band = (final_forces >= lo * f_target) & (final_forces <= hi * f_target)
        verdict = VERDICT_STABLE if int(in_band.sum()) >= min_stable_fingers else VERDICT_UNSTABLE

    return GraspExecutionResult(
        verdict=verdict,
        final_forces=final_forces,
        peak_forces=peak_forces,
        peak_commands=np.abs(trace.commands).max(axis=0),
        locked=state.locked,
        final_positions=positions,
        f_target=float(f_target),
        steps=steps,
        trace=trace)


def predict_target_force(predictor, object_description: str) -> float:
    """Ask the force provider for a grasp force and sanity-check it."""
    force = float(predictor(object_description))
    if force <= 0.0:
        raise ValueError(f"predicted force must be positive, got {force}")
    return force


def write_trace_csv(path, result: GraspExecutionResult) -> None:
    """Per-step positions, forces, commands, and latch flags as CSV."""
    t = result.trace
    k = t.positions.shape[1]
    header = (["step"]
              + [f"position_{i}" for i in range(k)]
              + [f"force_{i}" for i in range(k)]
              + [f"command_{i}" for i in range(k)]
              + [f"locked_{i}" for i in range(k)])
    lines = [",".join(header)]
    for step in range(t.positions.shape[0]):
        row = [str(step)]
        row += [f"{v:.9g}" for v in t.positions[step]]
        row += [f"{v:.9g}" for v in t.forces[step]]
        row += [f"{v:.9g}" for v in t.commands[step]]
        row += [str(int(v)) for v in t.locked[step]]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
