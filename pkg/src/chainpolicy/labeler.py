"""Turn pose trajectories into reasoning-chain training samples.

The labeler never looks at recorded actions or at the embodiment tag: it
derives everything from the initial scene and the pose frames.  Movement
primitives come from a deadband-plus-dominant-axis rule over frame deltas,
gripper primitives from aperture threshold crossings, and the high-level
text from task-aware templates keyed by the controller phase implied by the
reconstructed state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import seeding
from .chain import (
    ReasoningChain,
    ReasoningStep,
    StepKind,
    truncate_chain,
)
from .codec import discretize_action
from .errors import InvariantViolation, TooShort
from .world import (
    APERTURE_MAX,
    GRASP_APERTURE,
    GRASP_RADIUS,
    LIFT_Z,
    OPEN_APERTURE,
    Frame,
    PoseTrajectory,
    SceneObject,
    Task,
    WorldState,
    expert_plan,
    observe,
    rest_height,
)

Matrix2x3 = tuple[tuple[float, float, float], tuple[float, float, float]]


@dataclass(frozen=True)
class LabelerParams:
    deadband: float = 0.004
    close_threshold: float = GRASP_APERTURE
    open_threshold: float = OPEN_APERTURE
    axis_priority: tuple[str, str, str] = ("x", "y", "z")
    # Axis magnitudes are compared on a grid of this pitch, so a
    # speed-clamped diagonal step resolves by axis priority instead of by
    # the rounding noise of the pose subtraction.
    tie_resolution: float = 1e-6
    # Image-plane projection for coordinates: row 0 is u, row 1 is v.
    projection: Matrix2x3 = ((1.0, 0.0, 0.0), (0.0, 0.0, 1.0))


_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
_DIRECTION = {
    ("x", 1): "right", ("x", -1): "left",
    ("y", 1): "forward", ("y", -1): "backward",
    ("z", 1): "up", ("z", -1): "down",
}
_DIR_PHRASE = {
    "forward": "in front of", "backward": "behind",
    "left": "left of", "right": "right of",
    "up": "above", "down": "below",
}


def gripper_from_keypoints(thumb, index) -> Frame:
    """Collapse a two-keypoint hand into a point gripper with an aperture."""
    t = np.asarray(thumb, dtype=float)
    i = np.asarray(index, dtype=float)
    if t.shape != (3,) or i.shape != (3,):
        raise InvariantViolation("keypoints must be 3-vectors")
    mid = (t + i) / 2.0
    aperture = min(float(np.linalg.norm(t - i)), APERTURE_MAX)
    return Frame((float(mid[0]), float(mid[1]), float(mid[2])), aperture)


def label_move_primitive(delta, params: Optional[LabelerParams] = None) -> str:
    """Deadband then dominant axis, ties broken by axis priority.

    Magnitudes are snapped to the tie-resolution grid before comparison, so
    equal-speed diagonal motion is a true tie.
    """
    p = params or LabelerParams()
    d = np.asarray(delta, dtype=float)
    if d.shape != (3,):
        raise InvariantViolation("delta must be a 3-vector")
    if np.all(np.abs(d) <= p.deadband):
        return "stop"
    best_axis, best_q = None, -1
    for name in p.axis_priority:
        q = round(abs(float(d[_AXIS_INDEX[name]])) / p.tie_resolution)
        if q > best_q:
            best_axis, best_q = name, q
    sign = 1 if float(d[_AXIS_INDEX[best_axis]]) > 0 else -1
    return f"move {_DIRECTION[(best_axis, sign)]}"


def label_gripper_primitive(aperture_prev: float, aperture_next: float,
                            params: Optional[LabelerParams] = None) -> Optional[str]:
    """Primitive for an aperture transition, None when no threshold crossed."""
    p = params or LabelerParams()
    if aperture_prev > p.close_threshold >= aperture_next:
        return "close gripper"
    if aperture_prev < p.open_threshold <= aperture_next:
        return "open gripper"
    return None


def label_pose_trajectory(traj: PoseTrajectory,
                          params: Optional[LabelerParams] = None) -> tuple[str, ...]:
    """One primitive per frame transition; gripper events take precedence."""
    p = params or LabelerParams()
    if len(traj.frames) < 2:
        raise TooShort("need at least two frames to label")
    out = []
    for a, b in zip(traj.frames, traj.frames[1:]):
        grip = label_gripper_primitive(a.aperture, b.aperture, p)
        if grip is not None:
            out.append(grip)
        else:
            delta = np.asarray(b.pos) - np.asarray(a.pos)
            out.append(label_move_primitive(delta, p))
    return tuple(out)


def reconstruct_states(objects0: tuple[SceneObject, ...], frames: tuple[Frame, ...],
                       params: Optional[LabelerParams] = None) -> tuple[WorldState, ...]:
    """Re-derive world states from poses alone, blind to actions and embodiment.

    Grasping and releasing are inferred from aperture threshold crossings, so
    the result matches the true mechanics exactly on noise-free trajectories.
    """
    p = params or LabelerParams()
    if not frames:
        raise TooShort("need at least one frame")
    states = [WorldState(
        objects0, frames[0].pos, frames[0].aperture, None, 0,
        frozenset(o.id for o in objects0 if o.pos[2] >= LIFT_Z))]
    for frame in frames[1:]:
        prev = states[-1]
        eff = frame.pos
        objects = list(prev.objects)
        held = prev.held
        if held is None and prev.aperture > p.close_threshold >= frame.aperture:
            best = None
            for i, o in enumerate(objects):
                dist = float(np.linalg.norm(np.asarray(o.pos) - np.asarray(eff)))
                if dist <= GRASP_RADIUS and (best is None or dist < best[0]):
                    best = (dist, i)
            if best is not None:
                held = objects[best[1]].id
        if held is not None and prev.aperture < p.open_threshold <= frame.aperture:
            idx = next(i for i, o in enumerate(objects) if o.id == held)
            rest = rest_height(prev.objects, objects[idx], eff[0], eff[1])
            objects[idx] = replace(objects[idx], pos=(eff[0], eff[1], rest))
            held = None
        elif held is not None:
            idx = next(i for i, o in enumerate(objects) if o.id == held)
            objects[idx] = replace(objects[idx], pos=eff)
        lifted = prev.lifted | frozenset(o.id for o in objects if o.pos[2] >= LIFT_Z)
        states.append(WorldState(tuple(objects), eff, frame.aperture, held,
                                 prev.t + 1, lifted))
    return tuple(states)


def _project(pos, params: LabelerParams) -> tuple[float, float]:
    r0, r1 = params.projection
    u = sum(a * b for a, b in zip(r0, pos))
    v = sum(a * b for a, b in zip(r1, pos))
    return (u, v)


def _q256(c: float) -> int:
    return min(255, max(0, int(math.floor(256.0 * c))))


def gripper_coords(pos, params: Optional[LabelerParams] = None) -> tuple[int, int]:
    p = params or LabelerParams()
    u, v = _project(pos, p)
    return (_q256(u), _q256(v))


def visible_objects(state: WorldState,
                    params: Optional[LabelerParams] = None
                    ) -> tuple[tuple[str, tuple[int, int, int, int]], ...]:
    """Category-named projected boxes, in the observation's object order."""
    p = params or LabelerParams()
    out = []
    for o in sorted(state.objects, key=lambda o: (o.category, o.id)):
        u, v = _project(o.pos, p)
        hu = sum(abs(a) for a in p.projection[0]) * o.half
        hv = sum(abs(a) for a in p.projection[1]) * o.half
        box = (_q256(u - hu), _q256(v - hv), _q256(u + hu), _q256(v + hv))
        out.append((o.category, box))
    return tuple(out)


def synthesize_high_level(task: Task, phase: str, primitive: str,
                          rng: np.random.Generator) -> tuple[str, str, str, str]:
    """Plan, subtask reasoning, subtask, and move reasoning texts.

    The plan is fixed per task; the other slots draw one of a few templated
    variants from the supplied generator, in a fixed order.
    """
    s, t = task.subject, task.target
    plan = f"1. move to the {s} 2. grasp the {s} 3. lift the {s}"
    if task.verb == "put_on":
        plan += f" 4. move above the {t} 5. place on the {t}"

    reasons = {
        "approach": [
            f"the gripper is empty so the {s} must be reached first",
            f"the {s} is not held yet so move to it",
            f"nothing is held so the {s} comes first",
        ],
        "descend": [
            f"the gripper is empty so the {s} must be reached first",
            f"the {s} is not held yet so move to it",
            f"nothing is held so the {s} comes first",
        ],
        "grasp": [
            f"the gripper is at the {s} so it can be grasped",
            f"the {s} is within reach so close the gripper",
        ],
        "lift": [
            f"the {s} is held so it can be raised",
            f"the {s} is grasped so lift it",
        ],
        "carry": [
            f"the {s} is held so bring it above the {t}",
            f"the {s} is up so move it toward the {t}",
        ],
        "lower": [
            f"the gripper is above the {t} so the {s} can be lowered",
            f"the {s} is over the {t} so descend",
        ],
        "release": [
            f"the {s} is at the {t} so let go",
            f"the {s} is in place so open the gripper",
        ],
        "done": [
            "the task is complete so stop",
            "the goal is reached so stop",
        ],
    }
    subtasks = {
        "approach": f"move to the {s}",
        "descend": f"move to the {s}",
        "grasp": f"grasp the {s}",
        "lift": f"lift the {s}",
        "carry": f"move above the {t}",
        "lower": f"place on the {t}",
        "release": f"place on the {t}",
        "done": "stop",
    }
    if phase not in subtasks:
        raise InvariantViolation(f"unknown phase {phase!r}")

    bank = reasons[phase]
    subtask_reasoning = bank[int(rng.integers(len(bank)))]
    subtask = subtasks[phase]

    if primitive == "stop":
        moves = ["no motion is needed now", "the gripper should stay still"]
    elif primitive == "close gripper":
        moves = [
            f"the gripper must close to hold the {s}",
            f"closing the gripper secures the {s}",
        ]
    elif primitive == "open gripper":
        moves = [
            f"the gripper must open to release the {s}",
            f"opening the gripper frees the {s}",
        ]
    else:
        word = primitive.split()[1]
        focus = t if (t is not None and phase in ("carry", "lower")) else s
        moves = [
            f"the {focus} is {_DIR_PHRASE[word]} the gripper so move {word}",
            f"moving {word} brings the gripper toward the {focus}",
        ]
    move_reasoning = moves[int(rng.integers(len(moves)))]
    return (plan, subtask_reasoning, subtask, move_reasoning)


@dataclass(frozen=True)
class Sample:
    """One supervised step: observation, goal text, and its reasoning chain."""

    source: str                       # "robot" or "action_free"
    goal: str
    obs_tokens: tuple[str, ...]
    chain: ReasoningChain

    @property
    def prefix_len(self) -> int:
        return self.chain.prefix_len


def build_samples(traj: PoseTrajectory, params: Optional[LabelerParams] = None,
                  prefix_len: int = 7) -> tuple[Sample, ...]:
    """Label every frame transition of a trajectory.

    Trajectories with recorded actions yield full chains ending in the
    discretized action; action-free trajectories yield chains truncated to
    prefix_len with no action.
    """
    p = params or LabelerParams()
    if not 1 <= prefix_len <= 7:
        raise InvariantViolation(f"prefix_len {prefix_len} outside [1, 7]")
    if len(traj.frames) < 2:
        raise TooShort("need at least two frames to build samples")
    if traj.actions is not None and len(traj.actions) != len(traj.frames) - 1:
        raise InvariantViolation("actions must pair with frame transitions")

    states = reconstruct_states(traj.objects0, traj.frames, p)
    primitives = label_pose_trajectory(traj, p)
    samples = []
    for t in range(len(traj.frames) - 1):
        state = states[t]
        phase, _, _ = expert_plan(state, traj.task)
        rng = seeding.stream(traj.seed, t, "templates")
        plan, sr, st, mr = synthesize_high_level(traj.task, phase, primitives[t], rng)
        steps = (
            ReasoningStep(StepKind.TASK_PLAN, plan),
            ReasoningStep(StepKind.SUBTASK_REASONING, sr),
            ReasoningStep(StepKind.SUBTASK, st),
            ReasoningStep(StepKind.MOVE_REASONING, mr),
            ReasoningStep(StepKind.MOVE_PRIMITIVE, primitives[t]),
            ReasoningStep(StepKind.GRIPPER_POSITION,
                          gripper_coords(traj.frames[t].pos, p)),
            ReasoningStep(StepKind.VISIBLE_OBJECTS, visible_objects(state, p)),
        )
        if traj.actions is not None:
            chain = ReasoningChain(steps, discretize_action(traj.actions[t]))
            source = "robot"
        else:
            chain = truncate_chain(ReasoningChain(steps), prefix_len)
            source = "action_free"
        samples.append(Sample(source, traj.task.instruction,
                              observe(state), chain))
    return tuple(samples)
