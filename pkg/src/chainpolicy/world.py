"""Synthetic tabletop world: scenes, kinematics, expert controller, episodes.

Geometry lives in the unit cube.  Objects are axis-aligned cubes described by
a center and a half-extent, resting on the table plane z = 0.  The effector
is a point gripper with a discrete aperture; grasping happens when the
aperture closes past a threshold near an object, releasing drops the object
straight down onto whatever supports it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import seeding
from .errors import (
    EpisodeFailure,
    InvariantViolation,
    MalformedAction,
    OutOfRange,
    PlacementFailure,
    Unachievable,
)

Vec3 = tuple[float, float, float]

HOME: Vec3 = (0.5, 0.5, 0.4)
APERTURE_MAX = 0.10
APERTURE_STEP = 0.02
GRASP_APERTURE = 0.04     # grasp fires when the aperture crosses below this
OPEN_APERTURE = 0.06      # release fires when the aperture crosses above this
GRASP_RADIUS = 0.03       # grasp needs an object center within this distance
LIFT_Z = 0.3              # an object this high counts as lifted
MAX_DPOS = 0.05           # per-axis displacement bound for robot actions
APPROACH_CLEARANCE = 0.10
CARRY_Z = 0.35
XY_TOL = 0.01
DESCEND_TOL = 0.01
GRASP_REACH = 0.015       # descend hands over to grasp inside this distance
PLACE_TOL = 0.005
REST_TOL = 0.02           # placement counts if within this of the rest height
MAX_EPISODE_STEPS = 120
MAX_SCENE_OBJECTS = 8
PLACE_MARGIN = 0.06       # extra center separation between placed objects
PLACE_LO, PLACE_HI = 0.15, 0.85

GRIP_WORDS = ("open", "close", "hold")

CATEGORY_HALF = {
    "block": 0.02,
    "cup": 0.03,
    "sushi": 0.02,
    "banana": 0.025,
    "book": 0.04,
    "plate": 0.04,
    "bottle": 0.025,
    "sponge": 0.03,
    "plushie": 0.035,
    "controller": 0.025,
    "bowl": 0.04,
    "pot": 0.04,
    "cloth": 0.035,
    "tiger": 0.03,
    "tape": 0.02,
}

# Categories the robot demonstrations may contain.  The held-out categories
# appear only in action-free data, which is what makes transfer measurable.
ROBOT_CATEGORIES = ("block", "cup", "sushi", "banana", "book", "plate")
HUMAN_ONLY_CATEGORIES = ("bottle", "sponge")
NEW_OBJECT_CATEGORIES = ("plushie", "controller", "bowl")
NEW_SCENE_DISTRACTORS = ("pot", "cloth", "tiger")
SCALING_CATEGORY = "tape"

AXES = ("train", "compositional", "new_object", "new_scene", "human_only", "scaling")


@dataclass(frozen=True)
class SceneObject:
    id: str
    category: str
    pos: Vec3
    half: float


@dataclass(frozen=True)
class WorldState:
    objects: tuple[SceneObject, ...]
    effector: Vec3
    aperture: float
    held: Optional[str]
    t: int
    lifted: frozenset[str]


@dataclass(frozen=True)
class Task:
    verb: str                 # "pick" or "put_on"
    subject: str              # object category
    target: Optional[str]     # category for put_on, None for pick
    instruction: str


@dataclass(frozen=True)
class Action:
    dpos: Vec3
    grip: str


@dataclass(frozen=True)
class Scenario:
    """Which categories a scene contains and how distractors are drawn."""

    axis: str
    object_pool: tuple[str, ...]       # always placed, in order
    distractor_pool: tuple[str, ...]
    n_distractors: int
    seed: int = 0


@dataclass(frozen=True)
class Frame:
    pos: Vec3
    aperture: float


@dataclass(frozen=True)
class PoseTrajectory:
    frames: tuple[Frame, ...]
    task: Task
    embodiment: str                    # "robot" or "human"
    actions: Optional[tuple[Action, ...]]
    objects0: tuple[SceneObject, ...]
    seed: int
    scenario_axis: str


@dataclass(frozen=True)
class EmbodimentGap:
    """How a human executor differs from the robot: faster, noisier, pausing."""

    scale: float = 1.5
    sigma: float = 0.005
    pause_prob: float = 0.1


def make_task(verb: str, subject: str, target: Optional[str] = None) -> Task:
    if subject not in CATEGORY_HALF:
        raise InvariantViolation(f"unknown category {subject!r}")
    if verb == "pick":
        if target is not None:
            raise InvariantViolation("pick tasks take no target")
        return Task("pick", subject, None, f"pick up the {subject}")
    if verb == "put_on":
        if target not in CATEGORY_HALF:
            raise InvariantViolation(f"unknown category {target!r}")
        return Task("put_on", subject, target, f"put the {subject} on the {target}")
    raise InvariantViolation(f"unknown verb {verb!r}")


def robot_tasks() -> tuple[Task, ...]:
    return (
        make_task("pick", "block"),
        make_task("pick", "cup"),
        make_task("pick", "sushi"),
        make_task("pick", "banana"),
        make_task("put_on", "block", "plate"),
        make_task("put_on", "sushi", "book"),
        make_task("put_on", "cup", "plate"),
        make_task("put_on", "banana", "book"),
    )


def human_tasks() -> tuple[Task, ...]:
    return (
        make_task("pick", "bottle"),
        make_task("pick", "sponge"),
        make_task("put_on", "bottle", "book"),
        make_task("put_on", "sponge", "plate"),
    )


def compositional_tasks() -> tuple[Task, ...]:
    # Seen categories in verb-object pairings absent from the robot set.
    return (
        make_task("put_on", "block", "book"),
        make_task("put_on", "cup", "book"),
        make_task("put_on", "sushi", "plate"),
        make_task("put_on", "banana", "plate"),
    )


def new_object_tasks() -> tuple[Task, ...]:
    return (
        make_task("pick", "plushie"),
        make_task("pick", "controller"),
        make_task("put_on", "plushie", "bowl"),
    )


def scaling_tasks() -> tuple[Task, ...]:
    return (make_task("pick", SCALING_CATEGORY),)


def scenario_for_task(task: Task, axis: str = "train", n_distractors: int = 2,
                      seed: int = 0) -> Scenario:
    """Scene recipe for a task: its own categories plus axis-chosen clutter."""
    if axis not in AXES:
        raise InvariantViolation(f"unknown axis {axis!r}")
    pool = (task.subject,) if task.target is None else (task.subject, task.target)
    base = NEW_SCENE_DISTRACTORS if axis == "new_scene" else ROBOT_CATEGORIES
    distractors = tuple(c for c in base if c not in pool)
    if n_distractors > len(distractors):
        raise InvariantViolation(
            f"{n_distractors} distractors requested, pool has {len(distractors)}")
    if len(pool) + n_distractors > MAX_SCENE_OBJECTS:
        raise InvariantViolation("scene would exceed the object slot budget")
    return Scenario(axis, pool, distractors, n_distractors, seed)


def _vec(p) -> np.ndarray:
    return np.asarray(p, dtype=float)


def _tup(a) -> Vec3:
    return (float(a[0]), float(a[1]), float(a[2]))


def reset(scenario: Scenario, seed: int) -> WorldState:
    """Place the scenario's objects at seeded non-overlapping table positions."""
    rng = seeding.stream(scenario.seed, seed, "reset")
    categories = list(scenario.object_pool)
    if scenario.n_distractors > 0:
        pool = [c for c in scenario.distractor_pool if c not in scenario.object_pool]
        if scenario.n_distractors > len(pool):
            raise InvariantViolation("distractor pool too small")
        picked = rng.choice(len(pool), size=scenario.n_distractors, replace=False)
        categories.extend(pool[int(i)] for i in picked)
    if len(categories) > MAX_SCENE_OBJECTS:
        raise InvariantViolation("scene exceeds the object slot budget")

    placed: list[SceneObject] = []
    for i, cat in enumerate(categories):
        half = CATEGORY_HALF[cat]
        for _ in range(1000):
            x, y = rng.uniform(PLACE_LO, PLACE_HI, size=2)
            ok = True
            for other in placed:
                gap = half + other.half + PLACE_MARGIN
                if max(abs(x - other.pos[0]), abs(y - other.pos[1])) < gap:
                    ok = False
                    break
            if ok:
                placed.append(SceneObject(f"obj{i}", cat, (float(x), float(y), half), half))
                break
        else:
            raise PlacementFailure(f"could not place {cat!r} after 1000 attempts")
    return WorldState(tuple(placed), HOME, APERTURE_MAX, None, 0, frozenset())


def find_object(objects: tuple[SceneObject, ...], category: str) -> SceneObject:
    matches = [o for o in objects if o.category == category]
    if not matches:
        raise Unachievable(f"no {category!r} in scene")
    if len(matches) > 1:
        raise InvariantViolation(f"category {category!r} is ambiguous in scene")
    return matches[0]


def _aperture_steps(aperture: float) -> int:
    return int(round(aperture / APERTURE_STEP))


def rest_height(objects: tuple[SceneObject, ...], subject: SceneObject,
                 x: float, y: float) -> float:
    rest = subject.half
    for o in objects:
        if o.id == subject.id:
            continue
        if abs(x - o.pos[0]) <= o.half and abs(y - o.pos[1]) <= o.half:
            rest = max(rest, o.pos[2] + o.half + subject.half)
    return rest


def _advance(state: WorldState, action: Action) -> WorldState:
    """Apply one action without the robot displacement bound."""
    if action.grip not in GRIP_WORDS:
        raise MalformedAction(f"grip {action.grip!r} not in {GRIP_WORDS}")
    d = _vec(action.dpos)
    if d.shape != (3,) or not np.all(np.isfinite(d)):
        raise MalformedAction(f"dpos {action.dpos!r} must be three finite numbers")

    eff = _tup(np.clip(_vec(state.effector) + d, 0.0, 1.0))

    k = _aperture_steps(state.aperture)
    if action.grip == "close":
        k = max(0, k - 1)
    elif action.grip == "open":
        k = min(int(round(APERTURE_MAX / APERTURE_STEP)), k + 1)
    aperture = k * APERTURE_STEP

    objects = list(state.objects)
    held = state.held

    if held is None and action.grip == "close" \
            and state.aperture > GRASP_APERTURE >= aperture:
        best = None
        for i, o in enumerate(objects):
            dist = float(np.linalg.norm(_vec(o.pos) - _vec(eff)))
            if dist <= GRASP_RADIUS and (best is None or dist < best[0]):
                best = (dist, i)
        if best is not None:
            held = objects[best[1]].id

    if held is not None and state.aperture < OPEN_APERTURE <= aperture:
        idx = next(i for i, o in enumerate(objects) if o.id == held)
        o = objects[idx]
        rest = rest_height(state.objects, o, eff[0], eff[1])
        objects[idx] = replace(o, pos=(eff[0], eff[1], rest))
        held = None
    elif held is not None:
        idx = next(i for i, o in enumerate(objects) if o.id == held)
        objects[idx] = replace(objects[idx], pos=eff)

    lifted = state.lifted | frozenset(o.id for o in objects if o.pos[2] >= LIFT_Z)
    return WorldState(tuple(objects), eff, aperture, held, state.t + 1, lifted)


def step(state: WorldState, action: Action) -> WorldState:
    """Apply one bounded robot action."""
    d = _vec(action.dpos)
    if d.shape == (3,) and np.all(np.isfinite(d)) and np.any(np.abs(d) > MAX_DPOS + 1e-9):
        raise OutOfRange(f"dpos {action.dpos} exceeds per-axis bound {MAX_DPOS}")
    return _advance(state, action)


def task_success(state: WorldState, task: Task) -> float:
    """Score the current state: 1 success, 0.5 partial credit, 0 otherwise."""
    subject = find_object(state.objects, task.subject)
    if task.verb == "pick":
        return 1.0 if state.held == subject.id and subject.pos[2] >= LIFT_Z else 0.0
    target = find_object(state.objects, task.target)
    if state.held != subject.id:
        on_target = (abs(subject.pos[0] - target.pos[0]) <= target.half
                     and abs(subject.pos[1] - target.pos[1]) <= target.half)
        rest = target.pos[2] + target.half + subject.half
        if on_target and abs(subject.pos[2] - rest) <= REST_TOL:
            return 1.0
    return 0.5 if subject.id in state.lifted else 0.0


def expert_plan(state: WorldState, task: Task) -> tuple[str, Vec3, str]:
    """Phase, waypoint, and grip word, derived purely from the current state."""
    subject = find_object(state.objects, task.subject)
    eff = _vec(state.effector)
    sp = _vec(subject.pos)

    if task_success(state, task) == 1.0:
        return ("done", state.effector, "hold")

    if state.held == subject.id:
        if task.verb == "pick":
            return ("lift", (subject.pos[0], subject.pos[1], CARRY_Z), "hold")
        target = find_object(state.objects, task.target)
        if max(abs(eff[0] - target.pos[0]), abs(eff[1] - target.pos[1])) > XY_TOL:
            if eff[2] < CARRY_Z - DESCEND_TOL:
                return ("lift", (state.effector[0], state.effector[1], CARRY_Z), "hold")
            return ("carry", (target.pos[0], target.pos[1], CARRY_Z), "hold")
        rest = target.pos[2] + target.half + subject.half
        if eff[2] > rest + PLACE_TOL:
            return ("lower", (target.pos[0], target.pos[1], rest), "hold")
        return ("release", state.effector, "open")

    if max(abs(eff[0] - sp[0]), abs(eff[1] - sp[1])) > XY_TOL:
        return ("approach", (subject.pos[0], subject.pos[1], subject.pos[2] + APPROACH_CLEARANCE), "hold")
    if float(np.linalg.norm(eff - sp)) > GRASP_REACH:
        return ("descend", subject.pos, "hold")
    return ("grasp", state.effector, "close")


def expert_policy(state: WorldState, task: Task) -> Action:
    _, waypoint, grip = expert_plan(state, task)
    d = np.clip(_vec(waypoint) - _vec(state.effector), -MAX_DPOS, MAX_DPOS)
    return Action(_tup(d), grip)


def observe(state: WorldState) -> tuple[str, ...]:
    """Tokenized observation: 8 padded object slots plus an effector slot.

    Each object slot is a bare category word and a quantized position; pads
    fill unused slots so the effector tokens always sit at the same
    positions, carrying its position and the aperture bucket.
    """
    if len(state.objects) > MAX_SCENE_OBJECTS:
        raise InvariantViolation("too many objects to observe")

    def q(c: float) -> str:
        # Positions quantize on the 64-bin grid but are spelled at the bucket
        # center of the 256-grid coordinate alphabet shared with reasoning
        # coordinates, so all numeric tokens live in one ordered family.
        b = min(63, max(0, int(math.floor(64.0 * c))))
        return f"c{4 * b + 2}"

    tokens: list[str] = []
    for o in sorted(state.objects, key=lambda o: (o.category, o.id)):
        tokens.append(o.category)
        tokens.extend(q(c) for c in o.pos)
    for _ in range(MAX_SCENE_OBJECTS - len(state.objects)):
        tokens.extend(["<pad>"] * 4)
    tokens.extend(q(c) for c in state.effector)
    tokens.append(f"a{min(5, max(0, _aperture_steps(state.aperture)))}")
    return tuple(tokens)


def expert_rollout(scenario: Scenario, task: Task, seed: int,
                   max_steps: int = MAX_EPISODE_STEPS
                   ) -> tuple[PoseTrajectory, float]:
    """Run the expert to completion or timeout; returns trajectory and score."""
    state = reset(scenario, seed)
    frames = [Frame(state.effector, state.aperture)]
    actions: list[Action] = []
    objects0 = state.objects
    score = task_success(state, task)
    for _ in range(max_steps):
        action = expert_policy(state, task)
        state = step(state, action)
        frames.append(Frame(state.effector, state.aperture))
        actions.append(action)
        score = task_success(state, task)
        if score == 1.0:
            break
    traj = PoseTrajectory(tuple(frames), task, "robot", tuple(actions),
                          objects0, seed, scenario.axis)
    return traj, score


def generate_robot_episode(scenario: Scenario, task: Task, seed: int,
                           max_steps: int = MAX_EPISODE_STEPS) -> PoseTrajectory:
    """A successful expert demonstration with recorded actions."""
    traj, score = expert_rollout(scenario, task, seed, max_steps)
    if score < 1.0:
        raise EpisodeFailure(f"expert scored {score} on {task.instruction!r} seed {seed}")
    return traj


def generate_human_episode(scenario: Scenario, task: Task, seed: int,
                           gap: Optional[EmbodimentGap] = None,
                           max_steps: int = MAX_EPISODE_STEPS) -> PoseTrajectory:
    """An action-free episode executed with a different embodiment.

    The expert's commanded displacements are rescaled, the recorded positions
    are jittered, and pause frames appear at random.  Only poses survive; the
    recorded trajectory carries no actions.
    """
    if gap is None:
        gap = EmbodimentGap()
    noise = seeding.stream(scenario.seed, seed, "embodiment-gap")
    state = reset(scenario, seed)
    objects0 = state.objects

    def record(s: WorldState) -> Frame:
        jitter = noise.normal(0.0, gap.sigma, size=3)
        return Frame(_tup(_vec(s.effector) + jitter), s.aperture)

    frames = [record(state)]
    for _ in range(max_steps):
        action = expert_policy(state, task)
        scaled = Action(_tup(_vec(action.dpos) * gap.scale), action.grip)
        state = _advance(state, scaled)
        frames.append(record(state))
        if noise.uniform() < gap.pause_prob:
            frames.append(record(state))
        if task_success(state, task) == 1.0:
            break
    else:
        raise EpisodeFailure(f"human executor timed out on {task.instruction!r} seed {seed}")
    return PoseTrajectory(tuple(frames), task, "human", None, objects0, seed, scenario.axis)
