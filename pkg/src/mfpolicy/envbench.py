"""Toy 2-D manipulation environments with scripted experts.

Three tasks on a unit workspace with velocity-capped point-effector
kinematics, each stressing a different failure mode of chunked policies:

* ``approach_insert``   - long transit, a deliberate pre-insertion pause,
  then a tight-tolerance insertion (precise + long-horizon).
* ``latch_close``       - approach a spring-loaded slider, pause, then a
  sustained push until it latches; the slider drifts back open whenever
  contact is lost before the latch engages.
* ``two_stage_pick_place`` - two sequential pick-and-place legs with loose
  tolerances; long transits dominate.

Scripted experts are stage machines that insert a multi-step pause before
each precision phase and wobble slightly during transit, so demonstrations
are deliberately non-Markovian at short history lengths. Success checking
is a separate code path from the experts and runs after every base step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .temporal import Action, Observation

WORKSPACE_LOW = 0.0
WORKSPACE_HIGH = 1.0
EFFECTOR_SPEED = 0.04  # max effector travel per base step
GRASP_RADIUS = 0.03
ACTION_DIM = 3  # setpoint x, setpoint y, gripper
PROPRIO_DIM = 3  # effector x, effector y, gripper


@dataclass(frozen=True)
class StageDef:
    """One expert stage; ``pause_range`` inserts a hold before the stage."""

    name: str
    pause_range: tuple[int, int] | None = None


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    success_tol: float
    max_base_steps: int
    stages: tuple[StageDef, ...]
    precise: bool
    visual_dim: int

    def __post_init__(self) -> None:
        if self.success_tol <= 0:
            raise ValueError("success tolerance must be positive")
        if not self.stages:
            raise ValueError("task needs at least one stage")


@dataclass
class EnvState:
    """Mutable simulator state; positions live in the unit workspace."""

    effector: np.ndarray  # (2,)
    gripper: float
    objects: np.ndarray  # (n_obj, 2)
    attached: int  # object index or -1
    phase: int
    step: int


class ManipulationEnv:
    """Velocity-capped point-effector simulator over one task.

    A command is an absolute setpoint plus gripper value, executed over
    ``stride`` base steps: each base step moves the effector at most
    :data:`EFFECTOR_SPEED` toward the setpoint, updates attachments, runs
    the task-specific dynamics hook, logs the resulting observation, and
    latches success. Zero-motion steps still advance the step counter, so
    a stride-s command always occupies s control ticks.
    """

    spec: TaskSpec

    def __init__(self, spec: TaskSpec, seed: int):
        self.spec = spec
        self.reset(seed)

    # -- lifecycle ---------------------------------------------------------

    def reset(self, seed: int) -> Observation:
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self.state = self._initial_state(rng)
        self._success = False
        self._aborted = False
        self.visual_log: list[np.ndarray] = []
        self.proprio_log: list[np.ndarray] = []
        self._log_frame()
        self._update_phase()
        return self.observe()

    def _initial_state(self, rng: np.random.Generator) -> EnvState:
        raise NotImplementedError

    # -- observation -------------------------------------------------------

    def observe(self) -> Observation:
        return Observation(visual=self._visual(), proprio=self._proprio())

    def _visual(self) -> np.ndarray:
        raise NotImplementedError

    def _proprio(self) -> np.ndarray:
        s = self.state
        return np.array([s.effector[0], s.effector[1], s.gripper])

    def _log_frame(self) -> None:
        self.visual_log.append(self._visual())
        self.proprio_log.append(self._proprio())

    @property
    def visual(self) -> np.ndarray:
        """Logged base-rate visual stream, shape (step+1, D_v)."""
        return np.asarray(self.visual_log)

    @property
    def proprio(self) -> np.ndarray:
        return np.asarray(self.proprio_log)

    # -- dynamics ----------------------------------------------------------

    def command(self, action: np.ndarray | Action, stride: int = 1) -> None:
        """Execute one setpoint command over ``stride`` base steps."""
        if isinstance(action, Action):
            action = action.command
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (ACTION_DIM,):
            raise ValueError(f"expected command of shape ({ACTION_DIM},), got {action.shape}")
        if not np.all(np.isfinite(action)):
            self._aborted = True
            raise RuntimeError("non-finite action command")
        setpoint = np.clip(action[:2], WORKSPACE_LOW, WORKSPACE_HIGH)
        grip = float(np.clip(action[2], 0.0, 1.0))
        for _ in range(int(stride)):
            if self.done:
                # the command still occupies its control ticks
                self.state.step += 1
                self._log_frame()
                continue
            self._base_step(setpoint, grip)

    def _base_step(self, setpoint: np.ndarray, grip: float) -> None:
        s = self.state
        prev_effector = s.effector.copy()
        delta = setpoint - s.effector
        dist = float(np.linalg.norm(delta))
        if dist > EFFECTOR_SPEED:
            delta = delta * (EFFECTOR_SPEED / dist)
        s.effector = np.clip(s.effector + delta, WORKSPACE_LOW, WORKSPACE_HIGH)
        s.gripper = grip

        # attachment: grip closed near an object picks it up, open drops it
        if s.attached < 0 and grip > 0.5:
            if len(s.objects):
                d = np.linalg.norm(s.objects - s.effector, axis=1)
                near = int(np.argmin(d))
                if d[near] <= GRASP_RADIUS and self._graspable(near):
                    s.attached = near
        elif s.attached >= 0 and grip <= 0.5:
            s.attached = -1
        if s.attached >= 0:
            s.objects[s.attached] = s.effector

        self._task_dynamics(prev_effector)
        s.step += 1
        self._log_frame()
        if not self._success and self._check_success():
            self._success = True
        self._update_phase()

    def _graspable(self, obj_index: int) -> bool:
        return True

    def _task_dynamics(self, prev_effector: np.ndarray) -> None:
        """Per-task object dynamics, applied after effector motion."""

    # -- success / bookkeeping ----------------------------------------------

    def _check_success(self) -> bool:
        raise NotImplementedError

    def _update_phase(self) -> None:
        raise NotImplementedError

    def _advance_phase(self, milestone: int) -> None:
        if milestone > self.state.phase:
            self.state.phase = milestone

    @property
    def success(self) -> bool:
        return self._success

    @property
    def aborted(self) -> bool:
        return self._aborted

    @property
    def done(self) -> bool:
        return self._success or self._aborted or self.state.step >= self.spec.max_base_steps


# ---------------------------------------------------------------------------
# approach_insert: grasp a peg, carry it across the workspace, pause at a
# staging point, then insert it into a socket within a 0.01 tolerance.
# ---------------------------------------------------------------------------

APPROACH_INSERT = TaskSpec(
    task_id="approach_insert",
    success_tol=0.01,
    max_base_steps=100,
    stages=(
        StageDef("reach_peg"),
        StageDef("grasp"),
        StageDef("carry"),
        StageDef("insert", pause_range=(12, 20)),
        StageDef("hold"),
    ),
    precise=True,
    visual_dim=4,
)


class ApproachInsertEnv(ManipulationEnv):
    socket: np.ndarray

    def _initial_state(self, rng: np.random.Generator) -> EnvState:
        effector = np.array([0.12, 0.15]) + rng.uniform(-0.03, 0.03, 2)
        peg = np.array([0.22, 0.28]) + rng.uniform(-0.05, 0.05, 2)
        self.socket = np.array([0.82, 0.80]) + rng.uniform(-0.04, 0.04, 2)
        return EnvState(
            effector=effector, gripper=0.0, objects=peg[None, :],
            attached=-1, phase=0, step=0,
        )

    def _visual(self) -> np.ndarray:
        return np.concatenate([self.state.objects[0], self.socket])

    def _check_success(self) -> bool:
        peg = self.state.objects[0]
        return float(np.linalg.norm(peg - self.socket)) <= self.spec.success_tol

    def _update_phase(self) -> None:
        if self.state.attached == 0:
            self._advance_phase(1)
        if float(np.linalg.norm(self.state.objects[0] - self.socket)) <= 0.08:
            self._advance_phase(2)
        if self._success:
            self._advance_phase(3)


# ---------------------------------------------------------------------------
# latch_close: push a spring-loaded slider along a horizontal track until it
# latches shut. The slider drifts back toward its open position whenever the
# effector is out of contact and the latch has not engaged.
# ---------------------------------------------------------------------------

LATCH_CLOSE = TaskSpec(
    task_id="latch_close",
    success_tol=0.01,  # latch engagement band around the closed position
    max_base_steps=85,
    stages=(
        StageDef("approach"),
        StageDef("push", pause_range=(12, 20)),
        StageDef("hold"),
    ),
    precise=False,
    visual_dim=3,
)

LATCH_TRACK_Y = 0.68
LATCH_TRAVEL = 0.22
LATCH_CONTACT_RADIUS = 0.04
LATCH_DRIFT = 0.006  # spring-back per base step while unlatched and free


class LatchCloseEnv(ManipulationEnv):
    open_x: float
    latch_x: float
    latched: bool

    def _initial_state(self, rng: np.random.Generator) -> EnvState:
        effector = np.array([0.15, 0.30]) + rng.uniform(-0.03, 0.03, 2)
        self.open_x = 0.72 + rng.uniform(-0.05, 0.05)
        self.latch_x = self.open_x - LATCH_TRAVEL
        self.latched = False
        slider = np.array([self.open_x, LATCH_TRACK_Y])
        return EnvState(
            effector=effector, gripper=0.0, objects=slider[None, :],
            attached=-1, phase=0, step=0,
        )

    def _graspable(self, obj_index: int) -> bool:
        return False  # the slider is pushed, never carried

    def _visual(self) -> np.ndarray:
        slider = self.state.objects[0]
        return np.array([slider[0], slider[1], self.latch_x])

    def in_contact(self) -> bool:
        return float(np.linalg.norm(self.state.effector - self.state.objects[0])) <= LATCH_CONTACT_RADIUS

    def _task_dynamics(self, prev_effector: np.ndarray) -> None:
        slider = self.state.objects[0]
        if self.latched:
            return
        if self.in_contact():
            # the slider follows leftward pushes; it cannot be pulled open
            dx = self.state.effector[0] - prev_effector[0]
            if dx < 0:
                slider[0] = max(slider[0] + dx, self.latch_x - 0.02)
        else:
            slider[0] = min(slider[0] + LATCH_DRIFT, self.open_x)
        if slider[0] <= self.latch_x:
            self.latched = True

    def _check_success(self) -> bool:
        return self.latched

    def _update_phase(self) -> None:
        if self.in_contact() or self.state.phase >= 1:
            self._advance_phase(1)
        if self.state.objects[0][0] <= self.open_x - 0.5 * LATCH_TRAVEL:
            self._advance_phase(2)
        if self.latched:
            self._advance_phase(3)


# ---------------------------------------------------------------------------
# two_stage_pick_place: carry two objects to their zones, loose tolerance.
# ---------------------------------------------------------------------------

TWO_STAGE_PICK_PLACE = TaskSpec(
    task_id="two_stage_pick_place",
    success_tol=0.05,
    max_base_steps=170,
    stages=(
        StageDef("reach_first"),
        StageDef("grasp_first", pause_range=(10, 14)),
        StageDef("place_first"),
        StageDef("reach_second"),
        StageDef("grasp_second", pause_range=(10, 14)),
        StageDef("place_second"),
        StageDef("hold"),
    ),
    precise=False,
    visual_dim=8,
)


class TwoStagePickPlaceEnv(ManipulationEnv):
    zones: np.ndarray  # (2, 2)

    def _initial_state(self, rng: np.random.Generator) -> EnvState:
        effector = np.array([0.50, 0.50]) + rng.uniform(-0.03, 0.03, 2)
        objects = np.stack([
            np.array([0.15, 0.75]) + rng.uniform(-0.05, 0.05, 2),
            np.array([0.15, 0.25]) + rng.uniform(-0.05, 0.05, 2),
        ])
        self.zones = np.stack([
            np.array([0.85, 0.75]) + rng.uniform(-0.03, 0.03, 2),
            np.array([0.85, 0.25]) + rng.uniform(-0.03, 0.03, 2),
        ])
        return EnvState(
            effector=effector, gripper=0.0, objects=objects,
            attached=-1, phase=0, step=0,
        )

    def _visual(self) -> np.ndarray:
        return np.concatenate([self.state.objects.ravel(), self.zones.ravel()])

    def _placed(self, i: int) -> bool:
        return float(np.linalg.norm(self.state.objects[i] - self.zones[i])) <= self.spec.success_tol

    def _check_success(self) -> bool:
        return self._placed(0) and self._placed(1)

    def _update_phase(self) -> None:
        if self.state.attached == 0:
            self._advance_phase(1)
        if self._placed(0):
            self._advance_phase(2)
        if self.state.attached == 1:
            self._advance_phase(3)
        if self._success:
            self._advance_phase(4)


# ---------------------------------------------------------------------------
# scripted experts
# ---------------------------------------------------------------------------

LOOKAHEAD_STEPS = 4  # setpoints lead the effector by up to this many steps
TRANSIT_WOBBLE = 0.012
TRANSIT_WOBBLE_RATE = 0.7
GRASP_DWELL = 2


class ScriptedExpert:
    """Stage-machine controller with privileged access to the environment.

    Emits one absolute setpoint command per base step. Before each stage
    whose :class:`StageDef` carries a ``pause_range``, the expert holds its
    position for a duration sampled once per episode from that range: the
    hallmark non-Markovian behavior the policies must imitate. During
    transit stages a small perpendicular wobble is added so that transit
    windows never look perfectly static.
    """

    def __init__(self, env: ManipulationEnv, rng: np.random.Generator):
        self.env = env
        self.rng = rng
        self._stage = 0
        self._pause_left = self._sample_pause(0)
        self._dwell_left = 0
        self._wobble_phase = rng.uniform(0.0, 2.0 * np.pi)

    def _sample_pause(self, stage: int) -> int:
        rng_range = self.env.spec.stages[stage].pause_range
        if rng_range is None:
            return 0
        return int(self.rng.integers(rng_range[0], rng_range[1] + 1))

    def _enter_stage(self, stage: int) -> None:
        if stage != self._stage:
            self._stage = stage
            self._pause_left = self._sample_pause(stage)
            self._dwell_left = 0

    def action(self) -> np.ndarray:
        env = self.env
        stage = min(self._current_stage(), len(env.spec.stages) - 1)
        self._enter_stage(stage)
        if self._pause_left > 0:
            self._pause_left -= 1
            return self._hold()
        return self._stage_action(env.spec.stages[stage].name)

    def _hold(self, grip: float | None = None) -> np.ndarray:
        s = self.env.state
        g = s.gripper if grip is None else grip
        return np.array([s.effector[0], s.effector[1], g])

    def _toward(self, target: np.ndarray, grip: float, wobble: bool = False) -> np.ndarray:
        """Waypoint setpoint a few capped steps ahead along the line to target."""
        s = self.env.state
        delta = target - s.effector
        dist = float(np.linalg.norm(delta))
        reach = min(dist, LOOKAHEAD_STEPS * EFFECTOR_SPEED)
        point = s.effector + (delta / dist * reach if dist > 1e-12 else 0.0)
        if wobble and dist > 3 * EFFECTOR_SPEED:
            direction = delta / dist
            normal = np.array([-direction[1], direction[0]])
            point = point + normal * TRANSIT_WOBBLE * np.sin(
                TRANSIT_WOBBLE_RATE * s.step + self._wobble_phase
            )
        point = np.clip(point, WORKSPACE_LOW, WORKSPACE_HIGH)
        return np.array([point[0], point[1], grip])

    def _current_stage(self) -> int:
        raise NotImplementedError

    def _stage_action(self, name: str) -> np.ndarray:
        raise NotImplementedError


class ApproachInsertExpert(ScriptedExpert):
    def _current_stage(self) -> int:
        env: ApproachInsertEnv = self.env  # type: ignore[assignment]
        s = env.state
        if env.success:
            return 4
        if s.attached != 0:
            peg = s.objects[0]
            near = float(np.linalg.norm(s.effector - peg)) <= GRASP_RADIUS * 0.8
            return 1 if near else 0
        staging = self._staging_point()
        if float(np.linalg.norm(s.effector - staging)) > 0.02 and self._stage < 3:
            return 2
        return 3

    def _staging_point(self) -> np.ndarray:
        env: ApproachInsertEnv = self.env  # type: ignore[assignment]
        return env.socket + np.array([-0.10, -0.10])

    def _stage_action(self, name: str) -> np.ndarray:
        env: ApproachInsertEnv = self.env  # type: ignore[assignment]
        if name == "reach_peg":
            return self._toward(env.state.objects[0], grip=0.0, wobble=True)
        if name == "grasp":
            if self._dwell_left == 0:
                self._dwell_left = GRASP_DWELL
            self._dwell_left -= 1
            return self._hold(grip=1.0)
        if name == "carry":
            return self._toward(self._staging_point(), grip=1.0, wobble=True)
        if name == "insert":
            return self._toward(env.socket, grip=1.0)
        return self._hold()


class LatchCloseExpert(ScriptedExpert):
    def _contact_point(self) -> np.ndarray:
        env: LatchCloseEnv = self.env  # type: ignore[assignment]
        slider = env.state.objects[0]
        return np.array([slider[0] + 0.015, LATCH_TRACK_Y])

    def _current_stage(self) -> int:
        env: LatchCloseEnv = self.env  # type: ignore[assignment]
        if env.latched:
            return 2
        if self._stage >= 1:
            return 1
        # switch to push only once aligned with the track, so the pause and
        # the subsequent push both happen in stable contact
        arrived = float(np.linalg.norm(env.state.effector - self._contact_point())) <= 0.008
        return 1 if arrived else 0

    def _stage_action(self, name: str) -> np.ndarray:
        env: LatchCloseEnv = self.env  # type: ignore[assignment]
        if name == "approach":
            return self._toward(self._contact_point(), grip=0.0, wobble=True)
        if name == "push":
            target = np.array([env.latch_x - 0.015, LATCH_TRACK_Y])
            return self._toward(target, grip=0.0)
        return self._hold()


class TwoStagePickPlaceExpert(ScriptedExpert):
    def _current_stage(self) -> int:
        env: TwoStagePickPlaceEnv = self.env  # type: ignore[assignment]
        s = env.state
        if env.success:
            return 6
        if not self._obj_placed(0):
            if s.attached != 0:
                near = float(np.linalg.norm(s.effector - s.objects[0])) <= GRASP_RADIUS * 0.8
                return 1 if near else 0
            return 2
        if not self._obj_placed(1):
            if s.attached != 1:
                near = float(np.linalg.norm(s.effector - s.objects[1])) <= GRASP_RADIUS * 0.8
                return 4 if near else 3
            return 5
        return 6

    def _obj_placed(self, i: int) -> bool:
        env: TwoStagePickPlaceEnv = self.env  # type: ignore[assignment]
        s = env.state
        placed = float(np.linalg.norm(s.objects[i] - env.zones[i])) <= env.spec.success_tol * 0.6
        return placed and s.attached != i

    def _stage_action(self, name: str) -> np.ndarray:
        env: TwoStagePickPlaceEnv = self.env  # type: ignore[assignment]
        s = env.state
        if name == "reach_first":
            return self._toward(s.objects[0], grip=0.0, wobble=True)
        if name == "grasp_first":
            if self._dwell_left == 0:
                self._dwell_left = GRASP_DWELL
            self._dwell_left -= 1
            return self._hold(grip=1.0)
        if name == "place_first":
            if float(np.linalg.norm(s.effector - env.zones[0])) <= 0.015:
                return self._hold(grip=0.0)
            return self._toward(env.zones[0], grip=1.0, wobble=True)
        if name == "reach_second":
            return self._toward(s.objects[1], grip=0.0, wobble=True)
        if name == "grasp_second":
            if self._dwell_left == 0:
                self._dwell_left = GRASP_DWELL
            self._dwell_left -= 1
            return self._hold(grip=1.0)
        if name == "place_second":
            if float(np.linalg.norm(s.effector - env.zones[1])) <= 0.015:
                return self._hold(grip=0.0)
            return self._toward(env.zones[1], grip=1.0, wobble=True)
        return self._hold()


# ---------------------------------------------------------------------------
# registry and evaluation harness
# ---------------------------------------------------------------------------

_REGISTRY: dict[str, tuple[TaskSpec, type[ManipulationEnv], type[ScriptedExpert]]] = {
    "approach_insert": (APPROACH_INSERT, ApproachInsertEnv, ApproachInsertExpert),
    "latch_close": (LATCH_CLOSE, LatchCloseEnv, LatchCloseExpert),
    "two_stage_pick_place": (TWO_STAGE_PICK_PLACE, TwoStagePickPlaceEnv, TwoStagePickPlaceExpert),
}


def registered_tasks() -> list[str]:
    return sorted(_REGISTRY)


def task_spec(task_id: str) -> TaskSpec:
    if task_id not in _REGISTRY:
        raise KeyError(
            f"unknown task {task_id!r}; registered tasks: {', '.join(registered_tasks())}"
        )
    return _REGISTRY[task_id][0]


def make_env(task_id: str, seed: int) -> ManipulationEnv:
    spec = task_spec(task_id)
    env_cls = _REGISTRY[task_id][1]
    return env_cls(spec, seed)


def make_expert(env: ManipulationEnv, rng: np.random.Generator) -> ScriptedExpert:
    expert_cls = _REGISTRY[task_spec(env.spec.task_id).task_id][2]
    return expert_cls(env, rng)


@dataclass
class ExpertRun:
    """Summary of one scripted-expert episode (trace-compatible)."""

    success: bool
    executed_commands: int
    base_steps_elapsed: int
    aborted: bool = False


def run_scripted_expert(env: ManipulationEnv, rng: np.random.Generator) -> ExpertRun:
    expert = make_expert(env, rng)
    commands = 0
    while not env.done:
        env.command(expert.action(), stride=1)
        commands += 1
    return ExpertRun(
        success=env.success,
        executed_commands=commands,
        base_steps_elapsed=env.state.step,
    )


@dataclass
class EpisodeSummary:
    seed: int
    success: bool
    executed_commands: int
    base_steps_elapsed: int
    aborted: bool = False
    final_phase: int = 0


@dataclass
class EvalReport:
    """Per-task evaluation aggregate over a fixed episode count."""

    task_id: str
    episodes: int
    success_rate: float
    mean_executed_commands: float
    mean_base_steps: float
    per_episode: list[EpisodeSummary] = field(default_factory=list)
    traces: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "episodes": self.episodes,
            "success_rate": self.success_rate,
            "mean_executed_commands": self.mean_executed_commands,
            "mean_base_steps": self.mean_base_steps,
            "per_episode": [vars(e) for e in self.per_episode],
        }


def evaluate(
    policy_runner: Callable[[ManipulationEnv], object],
    spec: TaskSpec,
    episodes: int,
    seeds: Sequence[int] | None = None,
    keep_traces: bool = False,
) -> EvalReport:
    """Run ``policy_runner`` over freshly seeded episodes and aggregate.

    The runner gets a reset environment and must return an object exposing
    ``success``, ``executed_commands`` and ``base_steps_elapsed`` (a rollout
    trace or an :class:`ExpertRun`). A runner that raises is recorded as a
    failed, aborted episode rather than ending the evaluation.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    if seeds is None:
        seeds = range(episodes)
    seeds = list(seeds)[:episodes]
    if len(seeds) != episodes:
        raise ValueError(f"need {episodes} seeds, got {len(seeds)}")

    summaries: list[EpisodeSummary] = []
    traces: list = []
    for seed in seeds:
        env = make_env(spec.task_id, seed)
        try:
            trace = policy_runner(env)
            summary = EpisodeSummary(
                seed=seed,
                success=bool(trace.success),
                executed_commands=int(trace.executed_commands),
                base_steps_elapsed=int(trace.base_steps_elapsed),
                aborted=bool(getattr(trace, "aborted", False)),
                final_phase=env.state.phase,
            )
        except RuntimeError:
            trace = None
            summary = EpisodeSummary(
                seed=seed,
                success=False,
                executed_commands=0,
                base_steps_elapsed=env.state.step,
                aborted=True,
                final_phase=env.state.phase,
            )
        summaries.append(summary)
        if keep_traces:
            traces.append(trace)

    n = len(summaries)
    return EvalReport(
        task_id=spec.task_id,
        episodes=n,
        success_rate=sum(s.success for s in summaries) / n,
        mean_executed_commands=float(np.mean([s.executed_commands for s in summaries])),
        mean_base_steps=float(np.mean([s.base_steps_elapsed for s in summaries])),
        per_episode=summaries,
        traces=traces,
    )
