"""Canonical on-disk formats: episodes, samples, checkpoints, metrics, reports.

Every writer here is byte-deterministic: keys are sorted, floats use their
shortest round-trip repr, and nothing records a timestamp or hostname.
Running the same pipeline twice must produce identical files.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from typing import Optional

import numpy as np

from .chain import parse_chain, serialize_chain
from .codec import Vocabulary, vocab_from_text, vocab_to_text
from .errors import InvariantViolation, ParseError
from .labeler import Sample
from .model import ModelConfig, Params
from .world import Action, Frame, PoseTrajectory, SceneObject, Task

_FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    """Sorted-key JSON with no whitespace, refusing non-finite floats."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def _float(x) -> float:
    return float(x)


def _vec(v) -> list:
    return [float(c) for c in v]


# ---------------------------------------------------------------------------
# Pose trajectories (JSONL, one meta line then one episode per line)

def trajectory_to_record(traj: PoseTrajectory) -> dict:
    return {
        "task": {"verb": traj.task.verb, "subject": traj.task.subject,
                 "target": traj.task.target,
                 "instruction": traj.task.instruction},
        "embodiment": traj.embodiment,
        "seed": int(traj.seed),
        "scenario_axis": traj.scenario_axis,
        "objects": [{"id": o.id, "category": o.category,
                     "pos": _vec(o.pos), "half": _float(o.half)}
                    for o in traj.objects0],
        "frames": [[*_vec(f.pos), _float(f.aperture)] for f in traj.frames],
        "actions": None if traj.actions is None else
                   [[*_vec(a.dpos), a.grip] for a in traj.actions],
    }


def trajectory_from_record(rec: dict) -> PoseTrajectory:
    task = Task(rec["task"]["verb"], rec["task"]["subject"],
                rec["task"]["target"], rec["task"]["instruction"])
    objects = tuple(SceneObject(o["id"], o["category"],
                                tuple(o["pos"]), o["half"])
                    for o in rec["objects"])
    frames = tuple(Frame(tuple(f[:3]), f[3]) for f in rec["frames"])
    actions = rec["actions"]
    if actions is not None:
        actions = tuple(Action(tuple(a[:3]), a[3]) for a in actions)
    return PoseTrajectory(frames=frames, task=task,
                          embodiment=rec["embodiment"], actions=actions,
                          objects0=objects, seed=rec["seed"],
                          scenario_axis=rec["scenario_axis"])


def save_trajectories(path, trajectories, meta: Optional[dict] = None) -> None:
    lines = [canonical_json({"kind": "trajectories",
                             "version": _FORMAT_VERSION,
                             "count": len(trajectories),
                             "meta": meta or {}})]
    lines.extend(canonical_json(trajectory_to_record(t)) for t in trajectories)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trajectories(path):
    """Returns (trajectories, meta)."""
    with open(path, encoding="utf-8") as fh:
        head = fh.readline()
        header = json.loads(head)
        if header.get("kind") != "trajectories":
            raise ParseError(1, f"not a trajectory file: {path}")
        trajectories = [trajectory_from_record(json.loads(line))
                        for line in fh if line.strip()]
    if len(trajectories) != header["count"]:
        raise ParseError(0, f"expected {header['count']} episodes, "
                            f"found {len(trajectories)}")
    return trajectories, header.get("meta", {})


# ---------------------------------------------------------------------------
# Labeled samples (JSONL)

def sample_to_record(sample: Sample) -> dict:
    return {"source": sample.source, "goal": sample.goal,
            "obs_tokens": list(sample.obs_tokens),
            "chain": serialize_chain(sample.chain)}


def sample_from_record(rec: dict) -> Sample:
    return Sample(source=rec["source"], goal=rec["goal"],
                  obs_tokens=tuple(rec["obs_tokens"]),
                  chain=parse_chain(rec["chain"]))


def save_samples(path, samples, meta: Optional[dict] = None) -> None:
    lines = [canonical_json({"kind": "samples", "version": _FORMAT_VERSION,
                             "count": len(samples), "meta": meta or {}})]
    lines.extend(canonical_json(sample_to_record(s)) for s in samples)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_samples(path):
    """Returns (samples, meta)."""
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "samples":
            raise ParseError(1, f"not a sample file: {path}")
        samples = [sample_from_record(json.loads(line))
                   for line in fh if line.strip()]
    if len(samples) != header["count"]:
        raise ParseError(0, f"expected {header['count']} samples, "
                            f"found {len(samples)}")
    return samples, header.get("meta", {})


# ---------------------------------------------------------------------------
# Model checkpoints (JSON header line, then concatenated raw arrays)

def save_checkpoint(path, params: Params, vocab: Vocabulary,
                    meta: Optional[dict] = None) -> None:
    names = sorted(params.arrays)
    sections = []
    payload = io.BytesIO()
    for name in names:
        arr = np.ascontiguousarray(params.arrays[name])
        sections.append({"name": name, "shape": list(arr.shape),
                         "dtype": str(arr.dtype),
                         "offset": payload.tell(),
                         "nbytes": arr.nbytes})
        payload.write(arr.tobytes())
    blob = payload.getvalue()
    header = {
        "kind": "checkpoint",
        "version": _FORMAT_VERSION,
        "config": {"vocab_size": params.config.vocab_size,
                   "layers": params.config.layers,
                   "heads": params.config.heads,
                   "width": params.config.width,
                   "context": params.config.context,
                   "seed": params.config.seed,
                   "dtype": params.config.dtype},
        "sections": sections,
        "vocab": list(vocab.id_to_token),
        "sha256": hashlib.sha256(blob).hexdigest(),
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        fh.write(canonical_json(header).encode("utf-8") + b"\n")
        fh.write(blob)


def load_checkpoint(path):
    """Returns (params, vocab, meta), verifying the payload checksum."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    if header.get("kind") != "checkpoint":
        raise ParseError(1, f"not a checkpoint file: {path}")
    if hashlib.sha256(blob).hexdigest() != header["sha256"]:
        raise InvariantViolation(f"checkpoint payload corrupted: {path}")
    config = ModelConfig(**header["config"])
    arrays = {}
    for sec in header["sections"]:
        start = sec["offset"]
        raw = blob[start:start + sec["nbytes"]]
        arrays[sec["name"]] = np.frombuffer(raw, dtype=sec["dtype"]) \
            .reshape(sec["shape"]).copy()
    vocab = Vocabulary(tuple(header["vocab"]))
    return Params(config=config, arrays=arrays), vocab, header.get("meta", {})


# ---------------------------------------------------------------------------
# Vocabulary files

def save_vocab(path, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(vocab_to_text(vocab))


def load_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        return vocab_from_text(fh.read())


# ---------------------------------------------------------------------------
# Training metrics (CSV)

METRIC_COLUMNS = ("step", "loss_total", "loss_action", "loss_reasoning",
                  "loss_free", "grad_norm")


def save_metrics(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            out = [repr(int(row["step"]))]
            for col in METRIC_COLUMNS[1:]:
                out.append(repr(float(row[col])))
            writer.writerow(out)


def load_metrics(path):
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != METRIC_COLUMNS:
            raise ParseError(1, f"unexpected metric columns {header}")
        for raw in reader:
            row = {"step": int(raw[0])}
            for col, cell in zip(METRIC_COLUMNS[1:], raw[1:]):
                row[col] = float(cell)
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# Evaluation reports (canonical JSON)

def _scrub(value):
    if isinstance(value, dict):
        return {k: _scrub(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_scrub(v) for v in value]
    if isinstance(value, (np.floating, float)):
        f = float(value)
        if math.isnan(f):
            return None
        return f
    if isinstance(value, np.integer):
        return int(value)
    return value


def save_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(_scrub(report)) + "\n")


def load_report(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.loads(fh.read())
