"""End-to-end studies: co-training transfer and action-free data scaling.

The transfer study trains a pair of policies per seed, one on a mixture of
action-labeled robot episodes and action-free episodes of the held-out
categories, one on the robot episodes alone, then scores both on the tasks
only the action-free data ever showed.  The scaling study grows the
action-free pool for a single held-out task and tracks the score.
"""

from __future__ import annotations

from dataclasses import dataclass

from .codec import build_vocab, encode_sample
from .errors import EpisodeFailure, PlacementFailure
from .evaluation import ModelPolicy, SuiteSpec, compare_reports, evaluate
from .labeler import build_samples
from .model import ModelConfig
from .train import MixtureSpec, TrainConfig, train_run
from .world import (
    generate_human_episode,
    generate_robot_episode,
    human_tasks,
    robot_tasks,
    scaling_tasks,
    scenario_for_task,
)


@dataclass(frozen=True)
class ExperimentConfig:
    seeds: tuple[int, ...] = (0, 1, 2)
    robot_episodes_per_task: int = 20
    human_episodes_per_task: int = 30
    ratio: float = 0.5
    layers: int = 2
    heads: int = 4
    width: int = 64
    context: int = 192
    steps: int = 1500
    batch: int = 32
    lr: float = 2e-4
    rollouts_per_seed: int = 50
    max_steps: int = 60
    data_seed: int = 100
    scaling_sizes: tuple[int, ...] = (0, 100, 250)
    scaling_steps: int = 800
    scaling_rollouts: int = 30


def episodes_for_tasks(tasks, axis: str, per_task: int, base_seed: int,
                       embodiment: str):
    """Collect successful episodes, skipping unlucky scene seeds.

    Distractor counts cycle over 0..2 so the policy sees varied scene
    compositions instead of a fixed slot layout.
    """
    out = []
    for task in tasks:
        scenarios = [scenario_for_task(task, axis=axis, n_distractors=n,
                                       seed=base_seed) for n in (0, 1, 2)]
        got, attempt = 0, 0
        while got < per_task:
            if attempt > per_task * 4 + 20:
                raise EpisodeFailure(
                    f"could not collect {per_task} episodes for "
                    f"{task.instruction!r}")
            scenario = scenarios[attempt % len(scenarios)]
            try:
                if embodiment == "robot":
                    traj = generate_robot_episode(scenario, task, attempt)
                else:
                    traj = generate_human_episode(scenario, task, attempt)
                out.append(traj)
                got += 1
            except (EpisodeFailure, PlacementFailure):
                pass
            attempt += 1
    return out


def label_all(trajectories):
    samples = []
    for traj in trajectories:
        samples.extend(build_samples(traj))
    return samples


def _train_and_score(mix, vocab, config: ExperimentConfig, seed: int,
                     label: str, suite: SuiteSpec, steps: int,
                     progress=None):
    model_cfg = ModelConfig(vocab_size=len(vocab), layers=config.layers,
                            heads=config.heads, width=config.width,
                            context=config.context, seed=seed)
    result = train_run(mix, model_cfg,
                       TrainConfig(steps=steps, batch=config.batch,
                                   lr=config.lr, seed=seed))
    if progress:
        progress(f"trained {label} seed {seed}: "
                 f"loss {result.metrics[-1]['loss_total']:.3f}")
    report = evaluate(ModelPolicy(result.params, vocab, label), suite)
    if progress:
        progress(f"scored {label} seed {seed}: {report['points']:.1f} points")
    return result, report


def transfer_experiment(config: ExperimentConfig = ExperimentConfig(),
                        progress=None) -> dict:
    """Co-trained versus robot-only scores on the action-free-only tasks."""
    robot_trajs = episodes_for_tasks(robot_tasks(), "train",
                                     config.robot_episodes_per_task,
                                     config.data_seed, "robot")
    human_trajs = episodes_for_tasks(human_tasks(), "human_only",
                                     config.human_episodes_per_task,
                                     config.data_seed + 1, "human")
    robot_samples = label_all(robot_trajs)
    human_samples = label_all(human_trajs)
    if progress:
        progress(f"labeled {len(robot_samples)} robot and "
                 f"{len(human_samples)} action-free samples")
    vocab = build_vocab(robot_samples + human_samples)
    enc_robot = tuple(encode_sample(s, vocab, config.context)
                      for s in robot_samples)
    enc_human = tuple(encode_sample(s, vocab, config.context)
                      for s in human_samples)
    mix_a = MixtureSpec(config.ratio, enc_robot, enc_human)
    mix_b = MixtureSpec(0.0, enc_robot, ())

    per_seed = []
    for seed in config.seeds:
        suite = SuiteSpec("human_only", human_tasks(),
                          total_rollouts=config.rollouts_per_seed, seed=seed,
                          max_steps=config.max_steps)
        _, report_a = _train_and_score(mix_a, vocab, config, seed,
                                       "co-trained", suite, config.steps,
                                       progress)
        _, report_b = _train_and_score(mix_b, vocab, config, seed,
                                       "robot-only", suite, config.steps,
                                       progress)
        cmp = compare_reports(report_a, report_b)
        per_seed.append({"seed": seed,
                         "points_a": report_a["points"],
                         "points_b": report_b["points"],
                         "delta_points": cmp["delta_points"],
                         "report_a": report_a,
                         "report_b": report_b})
    n = len(per_seed)
    return {
        "kind": "transfer",
        "per_seed": per_seed,
        "mean_points_a": sum(r["points_a"] for r in per_seed) / n,
        "mean_points_b": sum(r["points_b"] for r in per_seed) / n,
        "mean_delta_points": sum(r["delta_points"] for r in per_seed) / n,
    }


def scaling_experiment(config: ExperimentConfig = ExperimentConfig(),
                       progress=None) -> dict:
    """Score on one held-out task as its action-free pool grows."""
    task = scaling_tasks()[0]
    robot_trajs = episodes_for_tasks(robot_tasks(), "train",
                                     config.robot_episodes_per_task,
                                     config.data_seed, "robot")
    pool_size = max(config.scaling_sizes)
    scenario_seed = config.data_seed + 2
    human_pool = []
    attempt = 0
    scenario = scenario_for_task(task, axis="scaling", seed=scenario_seed)
    while len(human_pool) < pool_size:
        if attempt > pool_size * 4 + 20:
            raise EpisodeFailure("could not fill the scaling pool")
        try:
            human_pool.append(generate_human_episode(scenario, task, attempt))
        except (EpisodeFailure, PlacementFailure):
            pass
        attempt += 1

    robot_samples = label_all(robot_trajs)
    pool_samples = [build_samples(t) for t in human_pool]
    vocab = build_vocab(robot_samples
                        + [s for group in pool_samples for s in group])
    enc_robot = tuple(encode_sample(s, vocab, config.context)
                      for s in robot_samples)

    points = {}
    for size in config.scaling_sizes:
        free = [s for group in pool_samples[:size] for s in group]
        if free:
            mix = MixtureSpec(config.ratio, enc_robot,
                              tuple(encode_sample(s, vocab, config.context)
                                    for s in free))
        else:
            mix = MixtureSpec(0.0, enc_robot, ())
        seed_points = []
        for seed in config.seeds:
            suite = SuiteSpec("scaling", scaling_tasks(),
                              total_rollouts=config.scaling_rollouts,
                              seed=seed, max_steps=config.max_steps)
            _, report = _train_and_score(mix, vocab, config, seed,
                                         f"free-{size}", suite,
                                         config.scaling_steps, progress)
            seed_points.append({"seed": seed, "points": report["points"]})
        points[size] = {
            "per_seed": seed_points,
            "mean_points": sum(r["points"] for r in seed_points) / len(seed_points),
        }
    return {
        "kind": "scaling",
        "sizes": list(config.scaling_sizes),
        "by_size": points,
        "mean_points": [points[s]["mean_points"] for s in config.scaling_sizes],
    }
