"""Command-line pipeline: generate episodes, label them, train, evaluate.

One executable with subcommands covering the full workflow, each stage
reading the artifacts of the previous one.  Every flag has a default shown
in ``--help``; a plain-text ``key=value`` config file can supply defaults,
with explicit flags taking precedence.  Exit codes: 0 success, 2 usage
error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .chain import serialize_chain
from .codec import build_vocab, encode_sample, undiscretize_action
from .errors import ChainPolicyError
from .evaluation import ModelPolicy, SuiteSpec, evaluate
from .experiments import episodes_for_tasks, label_all
from .labeler import build_samples
from .model import ModelConfig
from .records import (
    load_checkpoint,
    load_samples,
    load_trajectories,
    load_vocab,
    save_checkpoint,
    save_metrics,
    save_samples,
    save_trajectories,
    save_vocab,
)
from .train import MixtureSpec, TrainConfig, train_run
from .world import (
    AXES,
    compositional_tasks,
    human_tasks,
    new_object_tasks,
    observe,
    reset,
    robot_tasks,
    scaling_tasks,
    scenario_for_task,
)

_AXIS_TASKS = {
    "train": robot_tasks,
    "compositional": compositional_tasks,
    "new_object": new_object_tasks,
    "new_scene": robot_tasks,
    "human_only": human_tasks,
    "scaling": scaling_tasks,
}

# Axes whose episodes are hand demonstrations unless told otherwise.
_HUMAN_AXES = ("human_only", "scaling")


class _Usage(Exception):
    """Invalid invocation; maps to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _read_config(path: str) -> dict:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise _Usage(f"cannot read config file: {e}") from None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _Usage(f"config line {i} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _coerce_config(values: dict, sub: argparse.ArgumentParser) -> dict:
    by_dest = {a.dest: a for a in sub._actions}
    out = {}
    for key, raw in values.items():
        action = by_dest.get(key)
        if action is None:
            raise _Usage(f"unknown config key {key!r}")
        try:
            out[key] = action.type(raw) if action.type is not None else raw
        except ValueError:
            raise _Usage(f"bad value for config key {key!r}: {raw!r}") from None
    return out


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None,
                     help="key=value file supplying flag defaults")
    sub.add_argument("--seed", type=int, default=0, help="master seed")
    sub.add_argument("--out", default=".", help="output directory")


def _build_parser():
    parser = _Parser(
        prog="chainpolicy",
        description="Reasoning-chain policy pipeline over a synthetic tabletop.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    subparsers = parser.add_subparsers(dest="command", parser_class=_Parser)
    subs = {}

    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = subs["gen-data"] = subparsers.add_parser(
        "gen-data", formatter_class=fmt,
        help="generate expert episodes for one scenario axis")
    _add_common(p)
    p.add_argument("--axis", choices=AXES, default="train",
                   help="scenario axis defining tasks and clutter")
    p.add_argument("--episodes", type=int, default=10, help="episodes per task")
    p.add_argument("--embodiment", choices=("robot", "human", "auto"),
                   default="auto",
                   help="episode executor; auto picks by axis")

    p = subs["label"] = subparsers.add_parser(
        "label", formatter_class=fmt,
        help="turn trajectory files into labeled samples and a vocabulary")
    _add_common(p)
    p.add_argument("trajectories", nargs="+",
                   help="trajectory JSONL files to label")
    p.add_argument("--prefix-len", type=int, default=7,
                   help="chain sections kept for action-free samples")

    p = subs["train"] = subparsers.add_parser(
        "train", formatter_class=fmt,
        help="train a policy on labeled samples")
    _add_common(p)
    p.add_argument("--samples", required=True, help="labeled sample JSONL")
    p.add_argument("--vocab", default=None,
                   help="vocabulary file (default: vocab.txt beside samples)")
    p.add_argument("--steps", type=int, default=600, help="optimizer steps")
    p.add_argument("--batch", type=int, default=32, help="batch size")
    p.add_argument("--lr", type=float, default=7e-4, help="learning rate")
    p.add_argument("--mixture-ratio", type=float, default=0.5,
                   help="probability a batch slot is action-free")
    p.add_argument("--layers", type=int, default=2, help="transformer layers")
    p.add_argument("--heads", type=int, default=4, help="attention heads")
    p.add_argument("--width", type=int, default=64, help="model width")
    p.add_argument("--context", type=int, default=192, help="context length")
    p.add_argument("--snapshot-every", type=int, default=0,
                   help="write an intermediate checkpoint every K steps")

    p = subs["eval"] = subparsers.add_parser(
        "eval", formatter_class=fmt,
        help="roll out a checkpoint on an evaluation suite")
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--axis", choices=AXES, default="train",
                   help="evaluation suite axis")
    p.add_argument("--rollouts", type=int, default=10, help="rollouts per task")
    p.add_argument("--distractors", type=int, default=2,
                   help="distractor objects per scene")
    p.add_argument("--max-steps", type=int, default=60,
                   help="world steps per rollout")

    p = subs["inspect"] = subparsers.add_parser(
        "inspect", formatter_class=fmt,
        help="pretty-print a sample or decode one rollout step")
    _add_common(p)
    p.add_argument("--samples", default=None, help="labeled sample JSONL")
    p.add_argument("--index", type=int, default=0, help="sample index")
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint to decode one step with")
    p.add_argument("--axis", choices=AXES, default="train",
                   help="scenario axis for the decoded step")
    p.add_argument("--task-index", type=int, default=0,
                   help="index into the axis task list")

    p = subs["repro"] = subparsers.add_parser(
        "repro", formatter_class=fmt,
        help="run the full pipeline end to end from one seed")
    _add_common(p)

    return parser, subs


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_gen_data(args) -> int:
    tasks = _AXIS_TASKS[args.axis]()
    embodiment = args.embodiment
    if embodiment == "auto":
        embodiment = "human" if args.axis in _HUMAN_AXES else "robot"
    trajs = episodes_for_tasks(tasks, args.axis, args.episodes, args.seed,
                               embodiment)
    path = _outdir(args) / f"trajectories_{args.axis}.jsonl"
    save_trajectories(path, trajs, meta={
        "command": "gen-data", "axis": args.axis, "episodes": args.episodes,
        "seed": args.seed, "embodiment": embodiment})
    print(f"wrote {len(trajs)} episodes to {path}")
    return 0


def _cmd_label(args) -> int:
    samples = []
    inputs = []
    for name in args.trajectories:
        trajs, _ = load_trajectories(name)
        for traj in trajs:
            samples.extend(build_samples(traj, prefix_len=args.prefix_len))
        inputs.append(Path(name).name)
    vocab = build_vocab(samples)
    out = _outdir(args)
    save_samples(out / "samples.jsonl", samples, meta={
        "command": "label", "inputs": inputs, "prefix_len": args.prefix_len,
        "seed": args.seed})
    save_vocab(out / "vocab.txt", vocab)
    print(f"wrote {len(samples)} samples and {len(vocab)} vocabulary entries "
          f"to {out}")
    return 0


def _cmd_train(args) -> int:
    samples, _ = load_samples(args.samples)
    vocab_path = args.vocab or str(Path(args.samples).parent / "vocab.txt")
    vocab = load_vocab(vocab_path)
    robot = tuple(encode_sample(s, vocab, args.context)
                  for s in samples if s.source == "robot")
    free = tuple(encode_sample(s, vocab, args.context)
                 for s in samples if s.source == "action_free")
    ratio = args.mixture_ratio
    if not free and ratio > 0:
        print("error: samples contain no action-free data; "
              "use --mixture-ratio 0", file=sys.stderr)
        return 1
    mix = MixtureSpec(ratio, robot, free)
    model_config = ModelConfig(vocab_size=len(vocab), layers=args.layers,
                               heads=args.heads, width=args.width,
                               context=args.context, seed=args.seed)
    train_config = TrainConfig(steps=args.steps, batch=args.batch, lr=args.lr,
                               seed=args.seed,
                               snapshot_every=args.snapshot_every)
    out = _outdir(args)

    def snapshot(step: int, params) -> None:
        save_checkpoint(out / f"checkpoint_step{step}.ckpt", params, vocab,
                        meta={"command": "train", "step": step,
                              "seed": args.seed})

    result = train_run(mix, model_config, train_config, snapshot=snapshot)
    save_checkpoint(out / "checkpoint.ckpt", result.params, vocab, meta={
        "command": "train", "samples": Path(args.samples).name,
        "steps": args.steps, "batch": args.batch, "lr": args.lr,
        "mixture_ratio": ratio, "layers": args.layers, "heads": args.heads,
        "width": args.width, "context": args.context, "seed": args.seed})
    save_metrics(out / "metrics.csv", result.metrics)
    print(f"final loss {result.metrics[-1]['loss_total']:.4f}; "
          f"checkpoint and metrics in {out}")
    return 0


def _report_files(out: Path, axis: str, report: dict) -> None:
    lines = ["instruction,seed,score,steps"]
    for instruction, seed, score, steps in report["episodes"]:
        lines.append(f"{instruction},{seed},{score},{steps}")
    (out / f"report_{axis}.csv").write_text("\n".join(lines) + "\n",
                                            encoding="utf-8")
    text = [f"axis: {axis}",
            f"policy: {report['label']}",
            f"rollouts: {report['n']}"]
    for name, points in report["task_points"].items():
        text.append(f"  {name}: {points:.1f}")
    text.append(f"points: {report['points']:.1f}")
    (out / f"report_{axis}.txt").write_text("\n".join(text) + "\n",
                                            encoding="utf-8")


def _cmd_eval(args) -> int:
    params, vocab, _ = load_checkpoint(args.checkpoint)
    tasks = _AXIS_TASKS[args.axis]()
    suite = SuiteSpec(args.axis, tasks, args.rollouts * len(tasks),
                      seed=args.seed, n_distractors=args.distractors,
                      max_steps=args.max_steps)
    report = evaluate(ModelPolicy(params, vocab), suite)
    out = _outdir(args)
    _report_files(out, args.axis, report)
    print(f"{args.axis}: {report['points']:.1f} points over {report['n']} "
          f"rollouts; report in {out}")
    return 0


def _cmd_inspect(args) -> int:
    if args.samples is not None:
        samples, _ = load_samples(args.samples)
        if not 0 <= args.index < len(samples):
            raise _Usage(f"--index {args.index} outside 0..{len(samples) - 1}")
        s = samples[args.index]
        print(f"source: {s.source}")
        print(f"goal: {s.goal}")
        print(f"prefix length: {s.chain.prefix_len}")
        print("observation:", " ".join(s.obs_tokens))
        print(serialize_chain(s.chain), end="")
        return 0
    if args.checkpoint is not None:
        params, vocab, _ = load_checkpoint(args.checkpoint)
        tasks = _AXIS_TASKS[args.axis]()
        if not 0 <= args.task_index < len(tasks):
            raise _Usage(f"--task-index {args.task_index} outside "
                         f"0..{len(tasks) - 1}")
        task = tasks[args.task_index]
        state = reset(scenario_for_task(task, axis=args.axis, seed=args.seed),
                      args.seed)
        policy = ModelPolicy(params, vocab)
        chain = policy.chains_batch([state], [task])[0]
        print(f"task: {task.instruction}")
        print("observation:", " ".join(observe(state)))
        if chain is None:
            print("decode failed: context exceeded")
            return 1
        print(serialize_chain(chain), end="")
        if chain.action is not None:
            action = undiscretize_action(chain.action)
            print(f"action: dpos=({action.dpos[0]:+.3f}, "
                  f"{action.dpos[1]:+.3f}, {action.dpos[2]:+.3f}) "
                  f"grip={action.grip}")
        return 0
    raise _Usage("inspect needs --samples or --checkpoint")


def _cmd_repro(args) -> int:
    """Deterministic miniature of the whole pipeline for reproducibility checks."""
    out = _outdir(args)
    seed = args.seed
    robot_tasks_used = robot_tasks()[:5]
    human_tasks_used = human_tasks()[:2]
    robot_trajs = episodes_for_tasks(robot_tasks_used, "train", 6,
                                     seed + 100, "robot")
    human_trajs = episodes_for_tasks(human_tasks_used, "human_only", 6,
                                     seed + 200, "human")
    save_trajectories(out / "trajectories_train.jsonl", robot_trajs,
                      meta={"command": "repro", "seed": seed})
    save_trajectories(out / "trajectories_human_only.jsonl", human_trajs,
                      meta={"command": "repro", "seed": seed})

    samples = label_all(robot_trajs + human_trajs)
    vocab = build_vocab(samples)
    save_samples(out / "samples.jsonl", samples,
                 meta={"command": "repro", "seed": seed})
    save_vocab(out / "vocab.txt", vocab)

    context = 192
    robot = tuple(encode_sample(s, vocab, context)
                  for s in samples if s.source == "robot")
    free = tuple(encode_sample(s, vocab, context)
                 for s in samples if s.source == "action_free")
    mix = MixtureSpec(0.5, robot, free)
    model_config = ModelConfig(vocab_size=len(vocab), layers=2, heads=4,
                               width=64, context=context, seed=seed)
    result = train_run(mix, model_config,
                       TrainConfig(steps=240, batch=32, lr=7e-4, seed=seed))
    save_checkpoint(out / "checkpoint.ckpt", result.params, vocab,
                    meta={"command": "repro", "seed": seed})
    save_metrics(out / "metrics.csv", result.metrics)

    policy = ModelPolicy(result.params, vocab)
    scores = {}
    for axis, tasks, per_task in (("train", robot_tasks_used, 2),
                                  ("human_only", human_tasks_used, 4)):
        suite = SuiteSpec(axis, tasks, per_task * len(tasks), seed=seed,
                          max_steps=40)
        report = evaluate(policy, suite)
        _report_files(out, axis, report)
        scores[axis] = report["points"]

    summary = [f"repro seed {seed}",
               f"robot episodes {len(robot_trajs)}",
               f"human episodes {len(human_trajs)}",
               f"samples {len(samples)}",
               f"vocabulary {len(vocab)}",
               f"final loss {result.metrics[-1]['loss_total']:.4f}"]
    summary.extend(f"{axis} points {scores[axis]:.1f}" for axis in scores)
    (out / "summary.txt").write_text("\n".join(summary) + "\n",
                                     encoding="utf-8")
    print(f"repro complete; artifacts in {out}")
    return 0


_DISPATCH = {
    "gen-data": _cmd_gen_data,
    "label": _cmd_label,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "inspect": _cmd_inspect,
    "repro": _cmd_repro,
}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _Usage("a subcommand is required (see --help)")
        if args.config:
            defaults = _coerce_config(_read_config(args.config),
                                      subs[args.command])
            parser, subs = _build_parser()
            subs[args.command].set_defaults(**defaults)
            args = parser.parse_args(argv)
        return _DISPATCH[args.command](args)
    except _Usage as e:
        print(f"chainpolicy: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        return int(e.code or 0)
    except ChainPolicyError as e:
        print(f"chainpolicy: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"chainpolicy: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
