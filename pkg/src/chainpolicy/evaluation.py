"""Policy evaluation: batched closed-loop rollouts and score reports.

A policy proposes one bounded action per control step from the current
observation and goal text.  The model-backed policy decodes a full
reasoning chain each step and executes only its action tail; episodes
whose decode would overflow the context degrade to holding still.
Reports pair episodes across policies by (instruction, seed) so two
models can be compared on identical scenes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .codec import (
    Vocabulary,
    encode_prefix,
    tokens_to_chain,
    undiscretize_action,
)
from .decoding import ChainGrammar, decode_batch
from .errors import RangeError
from .model import Params
from .world import (
    Action,
    Scenario,
    Task,
    expert_policy,
    observe,
    reset,
    scenario_for_task,
    step,
    task_success,
)

HOLD = Action((0.0, 0.0, 0.0), "hold")


class ExpertPolicy:
    """The scripted controller, wrapped for the rollout loop."""

    label = "expert"

    def act(self, state, task: Task) -> Action:
        return expert_policy(state, task)


class ModelPolicy:
    """Greedy constrained decoding of a chain, executing its action."""

    def __init__(self, params: Params, vocab: Vocabulary,
                 label: str = "model"):
        self.params = params
        self.vocab = vocab
        self.label = label
        self.grammar = ChainGrammar(vocab)

    def chains_batch(self, states, tasks):
        """Decoded chains for a batch of observations; None on overflow."""
        prefixes = [encode_prefix(observe(s), t.instruction, self.vocab)
                    for s, t in zip(states, tasks)]
        outs = decode_batch(self.params, prefixes, self.grammar)
        chains = []
        for out in outs:
            if out is None:
                chains.append(None)
            else:
                chains.append(tokens_to_chain(
                    [self.vocab.token(i) for i in out]))
        return chains

    def act_batch(self, states, tasks):
        actions = []
        for chain in self.chains_batch(states, tasks):
            if chain is None or chain.action is None:
                actions.append(HOLD)
            else:
                actions.append(undiscretize_action(chain.action))
        return actions

    def act(self, state, task: Task) -> Action:
        return self.act_batch([state], [task])[0]


@dataclass(frozen=True)
class SuiteSpec:
    """A held-out evaluation axis: which tasks, how many scenes, how long."""

    axis: str
    tasks: tuple[Task, ...]
    total_rollouts: int
    seed: int = 0
    n_distractors: int = 2
    max_steps: int = 60

    def __post_init__(self):
        if not self.tasks:
            raise RangeError("a suite needs at least one task")
        if self.total_rollouts <= 0 or self.max_steps <= 0:
            raise RangeError("rollouts and max_steps must be positive")

    def counts(self) -> tuple[int, ...]:
        """Rollouts per task, spreading any remainder over the first tasks."""
        base, extra = divmod(self.total_rollouts, len(self.tasks))
        return tuple(base + (1 if i < extra else 0)
                     for i in range(len(self.tasks)))


@dataclass(frozen=True)
class Episode:
    instruction: str
    seed: int
    score: float
    steps: int


def run_episodes(policy, jobs, max_steps: int):
    """Roll every (scenario, task, seed) to success or the step limit.

    Jobs advance in lockstep so batch-capable policies see one batch per
    control step; finished episodes leave the batch immediately.
    """
    states = [reset(scenario, seed) for scenario, _, seed in jobs]
    tasks = [task for _, task, _ in jobs]
    finished = [False] * len(jobs)
    results: list[Optional[Episode]] = [None] * len(jobs)
    batched = hasattr(policy, "act_batch")

    for _ in range(max_steps):
        alive = [i for i in range(len(jobs)) if not finished[i]]
        if not alive:
            break
        if batched:
            actions = policy.act_batch([states[i] for i in alive],
                                       [tasks[i] for i in alive])
        else:
            actions = [policy.act(states[i], tasks[i]) for i in alive]
        for i, action in zip(alive, actions):
            states[i] = step(states[i], action)
            if task_success(states[i], tasks[i]) == 1.0:
                finished[i] = True
                results[i] = Episode(tasks[i].instruction, jobs[i][2],
                                     1.0, states[i].t)
    for i in range(len(jobs)):
        if results[i] is None:
            results[i] = Episode(tasks[i].instruction, jobs[i][2],
                                 task_success(states[i], tasks[i]),
                                 states[i].t)
    return results


def suite_jobs(suite: SuiteSpec):
    jobs = []
    for task, count in zip(suite.tasks, suite.counts()):
        scenario = scenario_for_task(task, axis=suite.axis,
                                     n_distractors=suite.n_distractors,
                                     seed=suite.seed)
        for k in range(count):
            jobs.append((scenario, task, k))
    return jobs


def evaluate(policy, suite: SuiteSpec) -> dict:
    """Run the whole suite and aggregate scores into a report."""
    episodes = run_episodes(policy, suite_jobs(suite), suite.max_steps)
    by_task: dict[str, list[float]] = {}
    for ep in episodes:
        by_task.setdefault(ep.instruction, []).append(ep.score)
    task_points = {instr: 100.0 * sum(scores) / len(scores)
                   for instr, scores in by_task.items()}
    mean = sum(ep.score for ep in episodes) / len(episodes)
    return {
        "axis": suite.axis,
        "label": getattr(policy, "label", "policy"),
        "seed": suite.seed,
        "n": len(episodes),
        "points": 100.0 * mean,
        "task_points": task_points,
        "episodes": [[ep.instruction, ep.seed, ep.score, ep.steps]
                     for ep in episodes],
    }


def compare_reports(a: dict, b: dict) -> dict:
    """Paired score difference (a minus b) over the shared episodes."""
    scores_a = {(instr, seed): score for instr, seed, score, _ in a["episodes"]}
    scores_b = {(instr, seed): score for instr, seed, score, _ in b["episodes"]}
    keys = sorted(scores_a.keys() & scores_b.keys())
    if not keys:
        raise RangeError("reports share no (instruction, seed) episodes")
    deltas = [scores_a[k] - scores_b[k] for k in keys]
    return {
        "n": len(keys),
        "points_a": a["points"],
        "points_b": b["points"],
        "delta_points": 100.0 * sum(deltas) / len(deltas),
    }
