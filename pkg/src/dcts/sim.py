"""Forward-dynamics simulation, external-force scripting, scenarios and metrics.

The control loop runs at ``control_dt`` with zero-order-hold torque; the plant
integrates semi-implicitly (qd += qdd h; q += qd h) at ``integrator_dt``
substeps. External events:

- ``cartesian_force``: a world-frame force on a frame point, felt by the plant
  and measured by the controller as tau_ext = J^T f,
- ``joint_torque``: a trapezoidal joint-torque profile, likewise measured,
- ``unmodeled_mass``: a point mass rigidly attached to a frame; it enters only
  the plant-side dynamics (the controller keeps the nominal model and its
  tau_ext measurement reports nothing).

Energy bookkeeping per tick: acceleration energy 1/2 tau'^T M^-1 tau' of the
command above compensation (the raw-command variant is logged too), total
kinetic energy 1/2 qd^T M qd and its task/null split through the task-space
inertia of the priority-1 task.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import limits as limits_mod
from . import rbd, solvers, tasks as tasks_mod

STATUS_CODE = {solvers.OPTIMAL: 0, solvers.DEGRADED: 1,
               solvers.INFEASIBLE: 2, solvers.MAX_ITER: 3}


class SimulationError(RuntimeError):
    """Raised when the plant state leaves the finite domain or a solver aborts."""


class ConfigError(ValueError):
    """Raised for malformed scenario files."""


# ---------------------------------------------------------------------------
# events


@dataclass
class Event:
    kind: str                      # cartesian_force | joint_torque | unmodeled_mass
    start: float
    duration: float
    force: np.ndarray | None = None        # (3,) world frame [N]
    frame: int | None = None               # link index; None = tool frame
    point: np.ndarray | None = None        # offset in frame coordinates [m]
    joint: int | None = None               # 0-based
    amplitude: float = 0.0                 # [N m]
    ramp: float = 0.0                      # [s]
    mass: float = 0.0                      # [kg]
    com_offset: np.ndarray | None = None   # in the attachment frame [m]

    def active(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration

    def profile(self, t: float) -> float:
        """Trapezoidal scaling in [0, 1] for ramped events."""
        if not self.active(t):
            return 0.0
        if self.ramp <= 0:
            return 1.0
        up = (t - self.start) / self.ramp
        down = (self.start + self.duration - t) / self.ramp
        return float(np.clip(min(up, down), 0.0, 1.0))


def augment_with_point_mass(model: rbd.RobotModel, mass: float,
                            com_in_last_link: np.ndarray) -> rbd.RobotModel:
    """Plant model with a point mass rigidly attached to the last link."""
    i = model.n - 1
    m0 = model.masses[i]
    m1 = m0 + mass
    com0 = model.coms[i]
    com1 = (m0 * com0 + mass * com_in_last_link) / m1
    inertia1 = (model.inertias[i]
                + m0 * limits_shift(com0 - com1)
                + mass * limits_shift(com_in_last_link - com1))
    masses = model.masses.copy()
    coms = model.coms.copy()
    inertias = model.inertias.copy()
    masses[i] = m1
    coms[i] = com1
    inertias[i] = inertia1
    return replace(model, masses=masses, coms=coms, inertias=inertias,
                   name=model.name + "+payload")


def limits_shift(d: np.ndarray) -> np.ndarray:
    return np.dot(d, d) * np.eye(3) - np.outer(d, d)


def scripted_tau_ext(events: list[Event], t: float, model: rbd.RobotModel,
                     q: np.ndarray,
                     transforms: np.ndarray | None = None,
                     measure_payload: bool = False) -> np.ndarray:
    """External joint torques from the active events at time t.

    With ``measure_payload`` the quasi-static gravity wrench of any active
    unmodeled mass is included, evaluated through the nominal kinematics: this
    is what a joint-torque-sensor observer reports on the real system. The
    plant-side caller leaves it off, because the augmented plant model already
    carries the mass; the controller-side caller turns it on. Either way the
    controller's dynamic model stays nominal.
    """
    tau = np.zeros(model.n)
    for ev in events:
        if not ev.active(t):
            continue
        if ev.kind == "cartesian_force":
            frame = model.tool_frame if ev.frame is None else ev.frame
            J = rbd.jacobian(model, q, frame, point=ev.point, transforms=transforms)
            tau += J[:3].T @ (ev.profile(t) * ev.force)
        elif ev.kind == "joint_torque":
            tau[ev.joint] += ev.profile(t) * ev.amplitude
        elif ev.kind == "unmodeled_mass" and measure_payload:
            J = rbd.jacobian(model, q, model.tool_frame, point=ev.com_offset,
                             transforms=transforms)
            tau += J[:3].T @ (ev.mass * model.gravity)
    return tau


def payload_observer(nominal: rbd.RobotModel, plant: rbd.RobotModel,
                     state: rbd.JointState, qdd_prev: np.ndarray) -> np.ndarray:
    """Torque-sensor view of an unmodeled mass: the generalized force that,
    added to the nominal model, reproduces the plant's motion.

    Evaluated at the last observed acceleration (one-tick observer lag, like a
    momentum observer on hardware): tau_ext = ID_nominal - ID_plant at
    (q, qd, qdd_prev). At rest this is exactly the payload gravity wrench.
    """
    return (rbd.inverse_dynamics(nominal, state.q, state.qd, qdd_prev)
            - rbd.inverse_dynamics(plant, state.q, state.qd, qdd_prev))


def apply_events(scenario: "Scenario", t: float, model: rbd.RobotModel,
                 state: rbd.JointState,
                 qdd_prev: np.ndarray | None = None) -> np.ndarray:
    """Controller-side (measured) tau_ext at time t.

    Scripted forces and torques are measured directly; an active unmodeled
    mass is measured through the observer (quasi-static at rest when no
    previous acceleration is available).
    """
    tau = scripted_tau_ext(scenario.events, t, model, state.q)
    plant = scenario.plant_model(t)
    if plant is not model:
        tau = tau + payload_observer(
            model, plant, state,
            np.zeros(model.n) if qdd_prev is None else qdd_prev)
    return tau


# ---------------------------------------------------------------------------
# integrator


def step(model: rbd.RobotModel, state: rbd.JointState, tau: np.ndarray,
         tau_ext: np.ndarray | None, dt: float) -> rbd.JointState:
    """One semi-implicit Euler step of the forward dynamics."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    qdd = rbd.forward_dynamics(model, state.q, state.qd, tau, tau_ext)
    qd = state.qd + qdd * dt
    q = state.q + qd * dt
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qd))):
        raise SimulationError("state became non-finite during integration")
    return rbd.JointState(q, qd)


def rk4_step(model: rbd.RobotModel, state: rbd.JointState, tau: np.ndarray,
             tau_ext: np.ndarray | None, dt: float) -> rbd.JointState:
    """Classical Runge-Kutta step; used for conservation studies."""
    def f(q, qd):
        return qd, rbd.forward_dynamics(model, q, qd, tau, tau_ext)

    k1q, k1v = f(state.q, state.qd)
    k2q, k2v = f(state.q + 0.5 * dt * k1q, state.qd + 0.5 * dt * k1v)
    k3q, k3v = f(state.q + 0.5 * dt * k2q, state.qd + 0.5 * dt * k2v)
    k4q, k4v = f(state.q + dt * k3q, state.qd + dt * k3v)
    q = state.q + dt / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
    qd = state.qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return rbd.JointState(q, qd)


# ---------------------------------------------------------------------------
# energies


def energy_metrics(model: rbd.RobotModel, state: rbd.JointState,
                   tau_cmd: np.ndarray, J: np.ndarray | None = None,
                   epsilon: float = 1e-6,
                   dyn: rbd.ChainDynamics | None = None) -> tuple[float, float, float, float]:
    """(E_acc, E_kin_total, E_kin_task, E_kin_null) at the current state.

    E_acc uses tau' = tau_cmd - nu - g; the task split uses the damped
    task-space inertia of J (zeros when no task Jacobian is given).
    """
    if dyn is None:
        dyn = rbd.compute_dynamics(model, state)
    tau_prime = np.asarray(tau_cmd, float) - dyn.nu - dyn.g
    e_acc = 0.5 * float(tau_prime @ dyn.minv(tau_prime))
    e_total = 0.5 * float(dyn.qd @ dyn.M @ dyn.qd)
    if J is None:
        e_task = 0.0
    else:
        bundle = rbd.task_dynamics(model, dyn.q, J, epsilon=epsilon, mass=dyn.M)
        xd = J @ dyn.qd
        e_task = 0.5 * float(xd @ bundle.Lambda @ xd)
    return e_acc, e_total, e_task, e_total - e_task


# ---------------------------------------------------------------------------
# scenario definition


@dataclass
class LimitConfig:
    """Per-scenario joint-space limit overrides; None falls back to the model."""

    acc_min: np.ndarray
    acc_max: np.ndarray
    q_min: np.ndarray | None = None
    q_max: np.ndarray | None = None
    v_min: np.ndarray | None = None
    v_max: np.ndarray | None = None
    dt: float | None = None       # defaults to control_dt
    brake_fraction: float = 0.4
    viability_brake: np.ndarray | None = None


@dataclass
class Scenario:
    name: str
    model: rbd.RobotModel
    q0: np.ndarray
    qd0: np.ndarray
    duration: float
    control_dt: float
    integrator_dt: float
    solver: str
    solver_config: solvers.SolverConfig
    task_configs: list[dict]
    limit_config: LimitConfig
    events: list[Event]
    seed: int = 0
    tau_ext_noise_std: float = 0.0
    source: str = "<memory>"

    def __post_init__(self):
        if self.integrator_dt > self.control_dt + 1e-12:
            raise ConfigError(f"{self.source}: integrator_dt must be <= control_dt")
        if self.solver not in solvers.SOLVER_NAMES:
            raise ConfigError(f"{self.source}: unknown solver {self.solver!r}; "
                              f"valid: {', '.join(solvers.SOLVER_NAMES)}")

    def limit_set(self) -> limits_mod.LimitSet:
        lc = self.limit_config
        dt = lc.dt or self.control_dt
        pick = lambda ov, default: default if ov is None else ov
        return limits_mod.limit_set(
            pick(lc.q_min, self.model.q_min), pick(lc.q_max, self.model.q_max),
            pick(lc.v_min, self.model.v_min), pick(lc.v_max, self.model.v_max),
            lc.acc_min, lc.acc_max, dt, lc.brake_fraction, lc.viability_brake)

    def plant_model(self, t: float) -> rbd.RobotModel:
        for ev in self.events:
            if ev.kind == "unmodeled_mass" and ev.active(t):
                if not hasattr(ev, "_plant"):
                    com = self.model.tool[:3, :3] @ ev.com_offset + self.model.tool[:3, 3]
                    ev._plant = augment_with_point_mass(self.model, ev.mass, com)
                return ev._plant
        return self.model

    def make_tasks(self, state0: rbd.JointState) -> list[tasks_mod.TaskSpec]:
        """Fresh TaskSpec objects (trackers are stateful) with targets resolved at t0."""
        dyn0 = rbd.compute_dynamics(self.model, state0)
        T_tool = dyn0.transforms[self.model.tool_frame]
        specs = []
        for i, tc in enumerate(sorted(self.task_configs, key=lambda c: c["priority"])):
            where = f"{self.source}.tasks[{i}]"
            mode = tc["mode"]
            selector = tc["selector"]
            m = {"tool_pos": 3, "tool_rot_xy": 2,
                 "joint_posture": self.model.n}[selector]
            if mode == "waypoint_tracker":
                specs.append(tasks_mod.TaskSpec(
                    priority=tc["priority"], mode=mode, selector=selector,
                    tracker=_build_tracker(tc, T_tool, where),
                    point=(np.asarray(tc["point_m"], float) if "point_m" in tc else None),
                    name=tc.get("name", f"task{i+1}")))
                continue
            K = _gain_matrix(tc["stiffness"], m)
            D = _gain_matrix(tc["damping"], m)
            target = tc.get("target", {"type": "initial"})
            kind = target.get("type", "initial")
            kwargs = dict(priority=tc["priority"], mode=mode, selector=selector,
                          stiffness=K, damping=D, name=tc.get("name", f"task{i+1}"))
            if "point_m" in tc:
                kwargs["point"] = np.asarray(tc["point_m"], float)
            if selector == "joint_posture":
                kwargs["target_q"] = (state0.q.copy() if kind == "initial"
                                      else np.asarray(target["q_rad"], float))
            elif kind == "initial":
                kwargs["target_position"] = T_tool[:3, 3].copy()
                kwargs["target_rotation"] = T_tool[:3, :3].copy()
            elif kind == "initial_rotated":
                axis = np.asarray(target["axis"], float)
                axis = axis / np.linalg.norm(axis)
                ang = math.radians(float(target["angle_deg"]))
                R = rbd.axis_rotation(axis, ang)
                kwargs["target_position"] = T_tool[:3, 3].copy()
                kwargs["target_rotation"] = R @ T_tool[:3, :3]
            elif kind == "pose":
                kwargs["target_position"] = np.asarray(target["position_m"], float)
                kwargs["target_rotation"] = np.asarray(target["rotation"], float)
            else:
                raise ConfigError(f"{where}: unknown target type {kind!r}")
            specs.append(tasks_mod.TaskSpec(**kwargs))
        return specs


def _gain_matrix(value, m: int) -> np.ndarray:
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        return float(v) * np.eye(m)
    if v.ndim == 1:
        return np.diag(v)
    return v


def _build_tracker(tc: dict, T_tool: np.ndarray, where: str) -> tasks_mod.WaypointTracker:
    wp = tc["waypoints"]
    kind = wp.get("type", "explicit")
    if kind == "octagon_with_center":
        center = np.asarray(wp["center_m"], float)
        points = tasks_mod.octagon_waypoints(center, float(wp["radius_m"]),
                                             phase=math.radians(wp.get("phase_deg", 0.0)))
        if wp.get("lead_in", True):
            points = [center.copy()] + points
    elif kind == "explicit":
        points = [np.asarray(p, float) for p in wp["points_m"]]
    else:
        raise ConfigError(f"{where}: unknown waypoint set type {kind!r}")
    return tasks_mod.WaypointTracker(
        waypoints=points, tolerance=float(tc["tolerance_m"]), kp=float(tc["kp"]),
        kv=float(tc["kv"]), v_sat=float(tc["v_sat"]),
        saturation_exponent=tc.get("saturation_exponent", "squared"))


# ---------------------------------------------------------------------------
# trace


@dataclass
class Trace:
    scenario: str
    solver: str
    n: int
    k: int
    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    tau: np.ndarray
    tau_ext: np.ndarray
    s: np.ndarray
    e_acc: np.ndarray
    e_acc_raw: np.ndarray
    e_kin_total: np.ndarray
    e_kin_task: np.ndarray
    e_kin_null: np.ndarray
    viol_q: np.ndarray            # (-1, 0, +1) per joint: which side is violated
    viol_v: np.ndarray
    viol_tau: np.ndarray
    saturated: np.ndarray         # bool, naive clamp active (projector baseline)
    pos_err: np.ndarray           # priority-1 task position error [m or rad]
    acc_err: np.ndarray           # priority-1 task acceleration error
    status: np.ndarray            # int codes, see STATUS_CODE
    repaired: np.ndarray          # bool, bound repair active on some direction
    model_limits: dict = field(default_factory=dict)

    def summary(self) -> dict:
        ticks = len(self.t)
        pct = lambda mask: 100.0 * float(np.count_nonzero(mask)) / max(ticks, 1)
        return {
            "scenario": self.scenario,
            "solver": self.solver,
            "ticks": ticks,
            "duration_s": float(self.t[-1] + (self.t[1] - self.t[0])) if ticks > 1 else 0.0,
            "mean_position_error": float(np.mean(self.pos_err)),
            "max_position_error": float(np.max(self.pos_err)),
            "mean_acceleration_error": float(np.mean(self.acc_err)),
            "violation_pct": {
                "q": pct(self.viol_q.any(axis=1)),
                "v": pct(self.viol_v.any(axis=1)),
                "tau": pct(self.viol_tau.any(axis=1)),
            },
            "violation_pct_per_joint": {
                "q": [pct(self.viol_q[:, j] != 0) for j in range(self.n)],
                "v": [pct(self.viol_v[:, j] != 0) for j in range(self.n)],
                "tau": [pct(self.viol_tau[:, j] != 0) for j in range(self.n)],
            },
            "saturation_pct": pct(self.saturated.any(axis=1)),
            "energy": {
                "acc_integral": float(np.trapezoid(self.e_acc, self.t)),
                "acc_raw_integral": float(np.trapezoid(self.e_acc_raw, self.t)),
                "kin_total_peak": float(self.e_kin_total.max()),
                "kin_null_peak": float(self.e_kin_null.max()),
            },
            "scaling": {"min": float(self.s.min()), "mean": float(self.s.mean())},
            "status_counts": {name: int(np.count_nonzero(self.status == code))
                              for name, code in STATUS_CODE.items()},
        }

    def header(self) -> list[str]:
        n, k = self.n, self.k
        cols = ["t"]
        cols += [f"q{j+1}" for j in range(n)]
        cols += [f"qd{j+1}" for j in range(n)]
        cols += [f"tau{j+1}" for j in range(n)]
        cols += [f"s{j+1}" for j in range(k)]
        cols += ["E_acc", "E_kin_total", "E_kin_task", "E_kin_null"]
        cols += [f"viol_q{j+1}" for j in range(n)]
        cols += [f"viol_v{j+1}" for j in range(n)]
        cols += [f"viol_tau{j+1}" for j in range(n)]
        cols += [f"sat{j+1}" for j in range(n)]
        cols += ["E_acc_raw", "pos_err", "acc_err", "status", "repaired"]
        return cols

    def to_csv(self, path: str | Path) -> None:
        buf = io.StringIO()
        buf.write(",".join(self.header()) + "\n")
        fmt = lambda v: format(float(v), ".10g")
        for i in range(len(self.t)):
            row = [fmt(self.t[i])]
            row += [fmt(v) for v in self.q[i]]
            row += [fmt(v) for v in self.qd[i]]
            row += [fmt(v) for v in self.tau[i]]
            row += [fmt(v) for v in self.s[i]]
            row += [fmt(self.e_acc[i]), fmt(self.e_kin_total[i]),
                    fmt(self.e_kin_task[i]), fmt(self.e_kin_null[i])]
            row += [str(int(v)) for v in self.viol_q[i]]
            row += [str(int(v)) for v in self.viol_v[i]]
            row += [str(int(v)) for v in self.viol_tau[i]]
            row += [str(int(v)) for v in self.saturated[i]]
            row += [fmt(self.e_acc_raw[i]), fmt(self.pos_err[i]),
                    fmt(self.acc_err[i]), str(int(self.status[i])),
                    str(int(self.repaired[i]))]
            buf.write(",".join(row) + "\n")
        Path(path).write_text(buf.getvalue())


def _violation_side(value: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                    rel_tol: float = 1e-6) -> np.ndarray:
    span_tol = rel_tol * np.maximum(np.abs(lo), np.abs(hi))
    side = np.zeros(len(value), dtype=np.int8)
    side[value > hi + span_tol] = 1
    side[value < lo - span_tol] = -1
    return side


def _segment_distance(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-16:
        return float(np.linalg.norm(x - b))
    u = float(np.clip((x - a) @ ab / denom, 0.0, 1.0))
    return float(np.linalg.norm(x - (a + u * ab)))


# ---------------------------------------------------------------------------
# the control loop


def run_scenario(scenario: Scenario, solver: str | None = None,
                 ext_force_in_bounds: bool | None = None,
                 ext_force_in_task: bool | None = None,
                 dump_qp_path: str | None = None,
                 record_hook=None) -> Trace:
    """Run one scenario with one solver and return the full trace.

    ``record_hook(tick, state, dyn, realized, out)`` is called after each
    control tick when given (used by tests to replay solvers in lockstep).
    """
    model = scenario.model
    name = solver or scenario.solver
    if name not in solvers.SOLVER_NAMES:
        raise ConfigError(f"unknown solver {name!r}; valid: {', '.join(solvers.SOLVER_NAMES)}")
    cfg = replace(scenario.solver_config)
    if ext_force_in_bounds is not None:
        cfg.ext_force_in_bounds = ext_force_in_bounds
    if ext_force_in_task is not None:
        cfg.ext_force_in_task = ext_force_in_task
    if dump_qp_path is not None:
        cfg.dump_qp_path = str(dump_qp_path)

    state = rbd.JointState(scenario.q0.copy(), scenario.qd0.copy())
    specs = scenario.make_tasks(state)
    k = len(specs)
    lset = scenario.limit_set()
    rng = np.random.default_rng(scenario.seed)
    noise = scenario.tau_ext_noise_std

    n_ticks = int(round(scenario.duration / scenario.control_dt))
    substeps = max(1, int(round(scenario.control_dt / scenario.integrator_dt)))
    h = scenario.control_dt / substeps

    rec = {key: [] for key in ("t", "q", "qd", "qdd", "tau", "tau_ext", "s",
                               "e_acc", "e_acc_raw", "e_kin_total", "e_kin_task",
                               "e_kin_null", "viol_q", "viol_v", "viol_tau",
                               "saturated", "pos_err", "acc_err", "status",
                               "repaired")}

    qdd_prev = np.zeros(model.n)
    for tick in range(n_ticks):
        t = tick * scenario.control_dt
        dyn = rbd.compute_dynamics(model, state)
        tau_ext = scripted_tau_ext(scenario.events, t, model, state.q, dyn.transforms)
        plant_now = scenario.plant_model(t)
        if plant_now is not model:
            tau_ext = tau_ext + payload_observer(model, plant_now, state, qdd_prev)
        if noise > 0:
            tau_ext = tau_ext + rng.normal(0.0, noise, model.n)
        realized = [tasks_mod.realize_task(sp, dyn) for sp in specs]
        have_ext = bool(np.any(tau_ext))

        if name == "dcts":
            offset = dyn.minv(tau_ext) if (have_ext and cfg.ext_force_in_bounds) else None
            limit_real = limits_mod.realize_joint_limits(lset, state.q, state.qd, offset)
            out = solvers.solve_dcts_multi(model, state, realized, limit_real,
                                           tau_ext if have_ext else None, cfg, dyn)
        elif name == "osc":
            limit_real = limits_mod.realize_joint_limits(lset, state.q, state.qd)
            out = solvers.solve_osc_saturated(model, state, realized[0], limit_real,
                                              tau_ext if have_ext else None, cfg, dyn)
        elif name == "qp-mt":
            limit_real = None
            out = solvers.solve_qp_mt(model, state, realized[0], cfg=cfg, dyn=dyn)
        else:
            limit_real = None
            out = solvers.solve_qp_md(model, state, realized[0], cfg=cfg, dyn=dyn)

        tau_cmd = out.tau
        e_acc, e_tot, e_task, e_null = energy_metrics(
            model, state, tau_cmd, J=realized[0].J, epsilon=cfg.epsilon_lambda, dyn=dyn)
        tau_raw = tau_cmd
        e_acc_raw = 0.5 * float(tau_raw @ dyn.minv(tau_raw))

        # integrate the plant
        plant = plant_now
        qdd_first = None
        sub = state
        for j in range(substeps):
            transforms = rbd.link_transforms(plant, sub.q)
            tau_ext_plant = scripted_tau_ext(scenario.events, t, plant, sub.q, transforms)
            qdd = rbd.forward_dynamics(plant, sub.q, sub.qd, tau_cmd, tau_ext_plant,
                                       transforms)
            if qdd_first is None:
                qdd_first = qdd
            qd = sub.qd + qdd * h
            sub = rbd.JointState(sub.q + qd * h, qd)
            if not np.all(np.isfinite(sub.q)):
                raise SimulationError(
                    f"{scenario.name}/{name}: non-finite state at t={t:.4f}s")
        new_state = sub

        # metrics and flags at the tick
        lead = realized[0]
        if specs[0].mode == "waypoint_tracker":
            seg = specs[0].tracker.segment()
            Ttool = dyn.transforms[model.tool_frame]
            x = (Ttool[:3, 3] if specs[0].point is None
                 else Ttool[:3, :3] @ specs[0].point + Ttool[:3, 3])
            if seg is not None:
                pos_err = _segment_distance(x, seg[0], seg[1])
            elif specs[0].tracker.done and len(specs[0].tracker.waypoints):
                pos_err = float(np.linalg.norm(x - specs[0].tracker.waypoints[-1]))
            else:
                pos_err = 0.0
        else:
            pos_err = float(np.linalg.norm(lead.error)) if lead.error is not None else 0.0
        acc_err = float(np.linalg.norm(lead.J @ qdd_first + lead.jdot_qd - lead.a_d))

        s_vec = np.ones(k)
        s_vec[:len(out.s)] = out.s[:k]
        rec["t"].append(t)
        rec["q"].append(state.q.copy())
        rec["qd"].append(state.qd.copy())
        rec["qdd"].append(qdd_first)
        rec["tau"].append(tau_cmd.copy())
        rec["tau_ext"].append(tau_ext.copy())
        rec["s"].append(s_vec)
        rec["e_acc"].append(e_acc)
        rec["e_acc_raw"].append(e_acc_raw)
        rec["e_kin_total"].append(e_tot)
        rec["e_kin_task"].append(e_task)
        rec["e_kin_null"].append(e_null)
        rec["viol_q"].append(_violation_side(state.q, lset.c_min, lset.c_max))
        rec["viol_v"].append(_violation_side(state.qd, lset.v_min, lset.v_max))
        rec["viol_tau"].append(_violation_side(tau_cmd, model.tau_min, model.tau_max))
        rec["saturated"].append(np.asarray(out.diagnostics.get(
            "saturated", np.zeros(model.n, dtype=bool))))
        rec["pos_err"].append(pos_err)
        rec["acc_err"].append(acc_err)
        rec["status"].append(STATUS_CODE.get(out.status, 3))
        rec["repaired"].append(limit_real.bounds.any_repaired if limit_real else False)
        if record_hook is not None:
            record_hook(tick, state, dyn, realized, out)
        state = new_state
        qdd_prev = qdd_first

    return Trace(scenario=scenario.name, solver=name, n=model.n, k=k,
                 t=np.asarray(rec["t"]), q=np.asarray(rec["q"]),
                 qd=np.asarray(rec["qd"]), qdd=np.asarray(rec["qdd"]),
                 tau=np.asarray(rec["tau"]), tau_ext=np.asarray(rec["tau_ext"]),
                 s=np.asarray(rec["s"]), e_acc=np.asarray(rec["e_acc"]),
                 e_acc_raw=np.asarray(rec["e_acc_raw"]),
                 e_kin_total=np.asarray(rec["e_kin_total"]),
                 e_kin_task=np.asarray(rec["e_kin_task"]),
                 e_kin_null=np.asarray(rec["e_kin_null"]),
                 viol_q=np.asarray(rec["viol_q"]), viol_v=np.asarray(rec["viol_v"]),
                 viol_tau=np.asarray(rec["viol_tau"]),
                 saturated=np.asarray(rec["saturated"]),
                 pos_err=np.asarray(rec["pos_err"]), acc_err=np.asarray(rec["acc_err"]),
                 status=np.asarray(rec["status"]),
                 repaired=np.asarray(rec["repaired"]),
                 model_limits={"v_max": lset.v_max.tolist(),
                               "q_min": lset.c_min.tolist(),
                               "q_max": lset.c_max.tolist(),
                               "tau_max": model.tau_max.tolist()})


# ---------------------------------------------------------------------------
# scenario files


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing field '{key}'")
    return d[key]


def scenario_from_dict(data: dict, source: str = "<dict>",
                       model_dir: Path | None = None) -> Scenario:
    issues = validate_scenario_dict(data, source, model_dir)
    errors = [m for level, m in issues if level == "error"]
    if errors:
        raise ConfigError("; ".join(errors))
    model = _resolve_model(data["model"], model_dir)
    n = model.n
    lim_over = data.get("limits", {})
    if "tau_max_nm" in lim_over or "tau_min_nm" in lim_over:
        tau_max = np.broadcast_to(np.asarray(
            lim_over.get("tau_max_nm", model.tau_max), float), (n,)).copy()
        tau_min = np.broadcast_to(np.asarray(
            lim_over.get("tau_min_nm", -tau_max), float), (n,)).copy()
        model = replace(model, tau_min=tau_min, tau_max=tau_max)
    q0 = np.asarray(_require(data, "q0_rad", source), dtype=float)
    qd0 = np.asarray(data.get("qd0_rad", np.zeros(n)), dtype=float)
    lim = data.get("limits", {})
    vec = lambda key, default: (None if default is None and key not in lim else
                                np.broadcast_to(np.asarray(lim.get(key, default), float),
                                                (n,)).copy())
    acc_min = vec("acc_min_rad_s2", -10.0)
    acc_max = vec("acc_max_rad_s2", 10.0)
    limit_config = LimitConfig(acc_min=acc_min, acc_max=acc_max,
                               q_min=vec("q_min_rad", None), q_max=vec("q_max_rad", None),
                               v_min=vec("v_min_rad_s", None), v_max=vec("v_max_rad_s", None),
                               dt=lim.get("dt_s"),
                               brake_fraction=float(lim.get("brake_fraction", 0.4)),
                               viability_brake=vec("viability_brake_rad_s2", None))
    events = [_event_from_dict(e, f"{source}.events[{i}]")
              for i, e in enumerate(data.get("events", []))]
    sc = data.get("solver_config", {})
    cfg = solvers.SolverConfig(**{k: tuple(v) if k == "task_weights" else v
                                  for k, v in sc.items()})
    return Scenario(name=str(data.get("name", Path(source).stem)), model=model,
                    q0=q0, qd0=qd0,
                    duration=float(_require(data, "duration_s", source)),
                    control_dt=float(data.get("control_dt_s", 1e-3)),
                    integrator_dt=float(data.get("integrator_dt_s", 1e-4)),
                    solver=str(data.get("solver", "dcts")),
                    solver_config=cfg,
                    task_configs=_require(data, "tasks", source),
                    limit_config=limit_config,
                    events=events, seed=int(data.get("seed", 0)),
                    tau_ext_noise_std=float(data.get("tau_ext_noise_std", 0.0)),
                    source=source)


def _event_from_dict(e: dict, where: str) -> Event:
    kind = _require(e, "kind", where)
    common = dict(kind=kind, start=float(_require(e, "start_s", where)),
                  duration=float(_require(e, "duration_s", where)))
    if kind == "cartesian_force":
        return Event(**common, force=np.asarray(_require(e, "force_n", where), float),
                     frame=e.get("frame"), point=np.asarray(e.get("point_m", [0, 0, 0]), float))
    if kind == "joint_torque":
        return Event(**common, joint=int(_require(e, "joint", where)) - 1,
                     amplitude=float(_require(e, "amplitude_nm", where)),
                     ramp=float(e.get("ramp_s", 0.0)))
    if kind == "unmodeled_mass":
        return Event(**common, mass=float(_require(e, "mass_kg", where)),
                     com_offset=np.asarray(e.get("com_offset_m", [0, 0, 0]), float))
    raise ConfigError(f"{where}: unknown event kind {kind!r}")


def _resolve_model(ref: str, model_dir: Path | None) -> rbd.RobotModel:
    if isinstance(ref, str) and ref.startswith("bundled:"):
        return rbd.load_bundled_model(ref.split(":", 1)[1])
    path = Path(ref)
    if not path.is_absolute() and model_dir is not None:
        path = model_dir / path
    return rbd.load_model(path)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    return scenario_from_dict(data, source=str(path), model_dir=path.parent)


def bundled_scenario_path(name: str) -> Path:
    from importlib import resources
    return Path(resources.files("dcts").joinpath(f"data/scenarios/{name}.json"))


def load_bundled_scenario(name: str) -> Scenario:
    return load_scenario(bundled_scenario_path(name))


def validate_scenario_dict(data: dict, source: str = "<dict>",
                           model_dir: Path | None = None) -> list[tuple[str, str]]:
    """All schema/invariant problems of a scenario dict as (level, message)."""
    issues: list[tuple[str, str]] = []
    err = lambda m: issues.append(("error", m))
    warn = lambda m: issues.append(("warning", m))

    model = None
    if "model" not in data:
        err(f"{source}: missing field 'model'")
    else:
        try:
            model = _resolve_model(data["model"], model_dir)
        except (rbd.ModelError, OSError) as e:
            err(f"{source}.model: {e}")
    duration = data.get("duration_s")
    if duration is None:
        err(f"{source}: missing field 'duration_s'")
    elif duration <= 0:
        err(f"{source}.duration_s: must be > 0")
    control_dt = data.get("control_dt_s", 1e-3)
    integ_dt = data.get("integrator_dt_s", 1e-4)
    if integ_dt > control_dt:
        err(f"{source}: integrator_dt_s must be <= control_dt_s")
    solver = data.get("solver", "dcts")
    if solver not in solvers.SOLVER_NAMES:
        err(f"{source}.solver: unknown {solver!r}; valid: {', '.join(solvers.SOLVER_NAMES)}")
    if model is not None:
        q0 = data.get("q0_rad")
        if q0 is None:
            err(f"{source}: missing field 'q0_rad'")
        elif len(q0) != model.n:
            err(f"{source}.q0_rad: expected {model.n} entries, got {len(q0)}")
    if not data.get("tasks"):
        err(f"{source}: needs at least one task")
    else:
        for i, tc in enumerate(data["tasks"]):
            where = f"{source}.tasks[{i}]"
            for key in ("priority", "mode", "selector"):
                if key not in tc:
                    err(f"{where}: missing field '{key}'")
            mode = tc.get("mode")
            if mode == "waypoint_tracker":
                for key in ("kp", "kv", "v_sat", "tolerance_m", "waypoints"):
                    if key not in tc:
                        err(f"{where}: missing field '{key}'")
            elif mode in ("impedance", "force_impedance"):
                for key in ("stiffness", "damping"):
                    if key not in tc:
                        err(f"{where}: missing field '{key}'")
                    elif np.any(np.asarray(tc[key], float) <= 0):
                        err(f"{where}.{key}: must be positive definite")
            elif mode is not None:
                err(f"{where}.mode: unknown {mode!r}")
        priorities = [tc.get("priority") for tc in data["tasks"]]
        if len(set(priorities)) != len(priorities):
            err(f"{source}.tasks: duplicate priorities {priorities}")
    lim = data.get("limits", {})
    acc_min = np.asarray(lim.get("acc_min_rad_s2", -10.0), float)
    acc_max = np.asarray(lim.get("acc_max_rad_s2", 10.0), float)
    if np.any(acc_min >= acc_max):
        err(f"{source}.limits: acc_min must be < acc_max")
    for i, e in enumerate(data.get("events", [])):
        where = f"{source}.events[{i}]"
        kind = e.get("kind")
        if kind not in ("cartesian_force", "joint_torque", "unmodeled_mass"):
            err(f"{where}.kind: unknown {kind!r}")
            continue
        try:
            ev = _event_from_dict(e, where)
        except ConfigError as ex:
            err(str(ex))
            continue
        if duration is not None and ev.start >= duration:
            warn(f"{where}: event starts at {ev.start}s, beyond the scenario duration")
        if kind == "joint_torque" and model is not None and not (0 <= ev.joint < model.n):
            err(f"{where}.joint: joint {ev.joint + 1} outside 1..{model.n}")
    return issues
