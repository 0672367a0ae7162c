import json

import numpy as np
import pytest

import oracles
from conftest import MODELS_DIR
from dextra.errors import DimensionMismatch, MissingField, NonPositiveDt
from dextra.graspctl import (
    ContactModel,
    GraspGains,
    controller_step,
    make_controller_state,
    predict_target_force,
    run_grasp,
    sense_force,
    write_trace_csv,
)
from dextra.kinematics import (
    HandConfiguration,
    load_hand_model,
    rest_configuration,
)
from dextra.retarget import FRAME_ROBOT, GraspAction

# stiffness sized so the latch overshoot (one step of spring compression)
# stays well inside the stability band around the target force
STIFF = 20.0
ENGAGE = 0.3
F_TARGET = 2.0


def _driver_grasp(model, value):
    """Grasp action whose driver joints all sit at `value`."""
    cfg = rest_configuration(model)
    angles = cfg.joint_angles.copy()
    for name in model.finger_drivers:
        angles[model.joint_index[name]] = value
    return GraspAction(hand_model=model.name,
                       config=HandConfiguration(cfg.root_pose, angles),
                       frame=FRAME_ROBOT,
                       residual=np.zeros(model.fingertip_count))


def _uniform_contact(k, **kw):
    return ContactModel(stiffness=np.full(k, STIFF),
                        engagement=np.full(k, ENGAGE), **kw)


# ---------------------------------------------------------------------------
# contact model and force sensing
# ---------------------------------------------------------------------------

def test_contact_model_rejects_nonpositive_stiffness():
    with pytest.raises(ValueError, match="must be positive"):
        ContactModel(stiffness=np.array([1.0, 0.0]), engagement=np.zeros(2))


def test_contact_model_rejects_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        ContactModel(stiffness=np.ones(3), engagement=np.zeros(2))


def test_sense_force_one_sided_spring():
    contact = _uniform_contact(3)
    reading = sense_force(contact, [0.1, 0.3, 0.45])
    assert np.allclose(reading.forces, [0.0, 0.0, STIFF * 0.15])


def test_sense_force_rejects_wrong_width():
    with pytest.raises(DimensionMismatch):
        sense_force(_uniform_contact(3), [0.0, 0.0])


def test_sense_force_noise_is_seeded_and_clipped():
    contact = _uniform_contact(2, noise_sigma=0.5)
    pos = [0.31, 0.29]
    a = sense_force(contact, pos, np.random.default_rng(9)).forces
    b = sense_force(contact, pos, np.random.default_rng(9)).forces
    c = sense_force(contact, pos, np.random.default_rng(10)).forces
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    # clipped like a real normal force, even when noise pulls it negative
    lows = [sense_force(contact, [0.0, 0.0], np.random.default_rng(s)).forces
            for s in range(50)]
    assert float(np.min(lows)) >= 0.0


# ---------------------------------------------------------------------------
# controller step
# ---------------------------------------------------------------------------

def test_controller_first_step_is_pure_proportional():
    state = make_controller_state(2)
    reading = sense_force(_uniform_contact(2), [0.1, 0.2])
    gains = GraspGains(kp=5.0, kd=0.1)
    command, nxt = controller_step(state, [0.1, 0.2], [0.5, 0.5],
                                   reading, F_TARGET, gains)
    assert np.allclose(command, [5.0 * 0.4, 5.0 * 0.3])
    assert not nxt.locked.any()
    assert nxt.last_error is not None


def test_controller_rejects_nonpositive_dt():
    state = make_controller_state(1)
    reading = sense_force(_uniform_contact(1), [0.0])
    with pytest.raises(NonPositiveDt, match="dt must be positive"):
        controller_step(state, [0.0], [0.5], reading, F_TARGET, dt=0.0)


def test_controller_rejects_finger_count_mismatch():
    state = make_controller_state(2)
    reading = sense_force(_uniform_contact(2), [0.0, 0.0])
    with pytest.raises(DimensionMismatch):
        controller_step(state, [0.0, 0.0, 0.0], [0.5, 0.5, 0.5],
                        reading, F_TARGET)


def test_latch_is_permanent_within_episode():
    contact = _uniform_contact(1)
    state = make_controller_state(1)
    hot = sense_force(contact, [ENGAGE + F_TARGET / STIFF + 0.01])
    _, state = controller_step(state, [0.36], [0.8], hot, F_TARGET)
    assert state.locked[0]
    assert state.locked_positions[0] == 0.36
    # force has dropped back below target; the latch must not release
    cold = sense_force(contact, [0.0])
    command, state = controller_step(state, [0.36], [0.8], cold, F_TARGET)
    assert state.locked[0]
    # setpoint is the locked position, not the squeeze target
    assert command[0] == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# full episodes
# ---------------------------------------------------------------------------

def test_run_grasp_locks_every_finger_near_target(robot_model):
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.55)
    result = run_grasp(pre, squeeze, _uniform_contact(5), F_TARGET, robot_model)
    assert result.verdict == "stable"
    assert result.locked.all()
    assert result.steps < 1000
    assert np.all(result.final_forces >= 0.9 * F_TARGET)
    assert np.all(result.final_forces <= 1.1 * F_TARGET)
    # the latch can overshoot by at most one step of spring compression
    bound = F_TARGET + STIFF * result.peak_commands * 0.01
    assert np.all(result.peak_forces <= bound + 1e-12)
    assert float(np.abs(result.trace.commands[-1]).max()) < 1e-9


def test_run_grasp_matches_scalar_replay(robot_model):
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.55)
    result = run_grasp(pre, squeeze, _uniform_contact(5), F_TARGET, robot_model)
    oracle = oracles.pd_spring_episode(
        start=np.full(5, 0.1), squeeze=np.full(5, 0.55),
        stiffness=np.full(5, STIFF), engagement=np.full(5, ENGAGE),
        f_target=F_TARGET)
    assert result.trace.positions.shape == oracle["positions"].shape
    assert np.allclose(result.trace.positions, oracle["positions"], atol=1e-12)
    assert np.allclose(result.trace.forces, oracle["forces"], atol=1e-12)
    assert np.allclose(result.trace.commands, oracle["commands"], atol=1e-12)
    assert np.array_equal(result.trace.locked, oracle["locked"])
    assert np.allclose(result.final_forces, oracle["final_forces"], atol=1e-12)


def test_run_grasp_without_lock_drives_to_squeeze(robot_model):
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.55)
    result = run_grasp(pre, squeeze, _uniform_contact(5), F_TARGET,
                       robot_model, lock_enabled=False)
    assert not result.locked.any()
    assert np.allclose(result.final_positions, 0.55, atol=1e-6)
    assert np.allclose(result.final_forces, STIFF * (0.55 - ENGAGE), atol=1e-4)


def test_run_grasp_unengaged_finger_never_locks(robot_model):
    contact = ContactModel(stiffness=np.full(5, STIFF),
                           engagement=np.array([np.inf, ENGAGE, ENGAGE,
                                                ENGAGE, ENGAGE]))
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.55)
    result = run_grasp(pre, squeeze, contact, F_TARGET, robot_model)
    assert not result.locked[0]
    assert result.locked[1:].all()
    assert result.final_forces[0] == 0.0
    assert result.final_positions[0] == pytest.approx(0.55, abs=1e-6)
    assert result.verdict == "stable"


def test_run_grasp_damaged_when_peak_exceeds_yield(robot_model):
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.55)
    contact = _uniform_contact(5, yield_force=1.0)
    result = run_grasp(pre, squeeze, contact, F_TARGET, robot_model)
    assert result.verdict == "damaged"
    assert float(result.peak_forces.max()) > 1.0


def test_run_grasp_unstable_when_nothing_engages(robot_model):
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.2)   # stops short of engagement
    result = run_grasp(pre, squeeze, _uniform_contact(5), F_TARGET, robot_model)
    assert result.verdict == "unstable"
    assert np.allclose(result.final_forces, 0.0)


def test_run_grasp_min_stable_fingers_threshold(robot_model):
    contact = ContactModel(stiffness=np.full(5, STIFF),
                           engagement=np.array([ENGAGE, ENGAGE, np.inf,
                                                np.inf, np.inf]))
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.55)
    two = run_grasp(pre, squeeze, contact, F_TARGET, robot_model)
    assert two.verdict == "unstable"
    relaxed = run_grasp(pre, squeeze, contact, F_TARGET, robot_model,
                        min_stable_fingers=2)
    assert relaxed.verdict == "stable"


def test_run_grasp_rejects_bad_scalars(robot_model):
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.55)
    with pytest.raises(ValueError, match="target force must be positive"):
        run_grasp(pre, squeeze, _uniform_contact(5), 0.0, robot_model)
    with pytest.raises(NonPositiveDt):
        run_grasp(pre, squeeze, _uniform_contact(5), F_TARGET, robot_model,
                  dt=-0.01)
    with pytest.raises(DimensionMismatch, match="contact model covers"):
        run_grasp(pre, squeeze, _uniform_contact(3), F_TARGET, robot_model)


def test_run_grasp_noise_is_reproducible_per_seed(robot_model):
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.55)
    contact = _uniform_contact(5, noise_sigma=0.05)
    a = run_grasp(pre, squeeze, contact, F_TARGET, robot_model, seed=3)
    b = run_grasp(pre, squeeze, contact, F_TARGET, robot_model, seed=3)
    c = run_grasp(pre, squeeze, contact, F_TARGET, robot_model, seed=4)
    assert np.array_equal(a.trace.forces, b.trace.forces)
    assert np.array_equal(a.final_positions, b.final_positions)
    assert not np.array_equal(a.trace.forces, c.trace.forces)


def test_run_grasp_needs_declared_drivers():
    doc = json.loads((MODELS_DIR / "human-20dof.json").read_text())
    doc.pop("finger_drivers")
    doc["name"] = "driverless"
    model = load_hand_model(doc)
    pre = GraspAction(hand_model=model.name, config=rest_configuration(model),
                      frame=FRAME_ROBOT, residual=np.zeros(5))
    with pytest.raises(MissingField, match="declares no finger_drivers"):
        run_grasp(pre, pre, _uniform_contact(5), F_TARGET, model)


def test_predict_target_force_sanity():
    assert predict_target_force(lambda name: 4.5, "mug") == 4.5
    with pytest.raises(ValueError, match="must be positive"):
        predict_target_force(lambda name: -1.0, "mug")


def test_write_trace_csv(robot_model, tmp_path):
    pre = _driver_grasp(robot_model, 0.1)
    squeeze = _driver_grasp(robot_model, 0.55)
    result = run_grasp(pre, squeeze, _uniform_contact(5), F_TARGET, robot_model)
    path = tmp_path / "trace.csv"
    write_trace_csv(path, result)
    lines = path.read_text().splitlines()
    k = 5
    head = (["step"] + [f"position_{i}" for i in range(k)]
            + [f"force_{i}" for i in range(k)]
            + [f"command_{i}" for i in range(k)]
            + [f"locked_{i}" for i in range(k)])
    assert lines[0] == ",".join(head)
    assert len(lines) == 1 + result.steps
    first = lines[1].split(",")
    assert first[0] == "0"
    assert float(first[1]) == pytest.approx(0.1)
    assert first[1 + 3 * k] in ("0", "1")
