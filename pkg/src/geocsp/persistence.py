"""On-disk formats: JSONL datasets, binary checkpoints, configs, CSV, traces.

Dataset files hold one JSON object per line so they stream and append
cleanly.  Checkpoints are ``GEOCSP1\\0`` magic bytes, a little-endian uint32
manifest length, a UTF-8 JSON manifest (format version, model geometry, a
tensor directory with shapes/dtypes/offsets, and training metadata), then
the raw little-endian tensor payload in directory order.  Loading and
re-saving a checkpoint reproduces it byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError
from .generator import PRESETS, DatasetStats, GeneratorConfig
from .geometry import Constraint
from .inference import InferenceConfig, ProblemTrace
from .model import ModelParams, init_params
from .solver import Problem, solve
from .training import TrainConfig

CHECKPOINT_MAGIC = b"GEOCSP1\x00"
FORMAT_VERSION = 1

_DTYPES = {"f8": np.dtype("<f8"), "f4": np.dtype("<f4")}


# ---------------------------------------------------------------------------
# Problems and datasets (JSONL)
# ---------------------------------------------------------------------------


def problem_to_record(problem: Problem, metadata: dict | None = None) -> dict:
    record = {
        "grid_side": problem.grid_side,
        "variables": list(problem.variables),
        "constraints": [{"kind": c.kind, "args": list(c.args)} for c in problem.constraints],
        "fixed": {v: list(p) for v, p in problem.fixed.items()},
        "labels": {v: list(p) for v, p in (problem.labels or {}).items()},
    }
    if metadata is not None:
        record["metadata"] = metadata
    return record


def problem_from_record(record: dict) -> Problem:
    labels = {v: (int(p[0]), int(p[1])) for v, p in record.get("labels", {}).items()}
    return Problem(
        grid_side=int(record["grid_side"]),
        variables=tuple(record["variables"]),
        constraints=tuple(
            Constraint(c["kind"], tuple(c["args"])) for c in record["constraints"]
        ),
        fixed={v: (int(p[0]), int(p[1])) for v, p in record["fixed"].items()},
        labels=labels if labels else None,
    )


def write_dataset(problems: list[Problem], path: str | Path, seed: int | None = None) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for index, problem in enumerate(problems):
            _, info = solve(dataclasses.replace(problem, labels=None))
            metadata = {
                "index": index,
                "max_depth": info.max_depth,
                "constraint_count": len(problem.constraints),
                "point_count": len(problem.variables),
            }
            if seed is not None:
                metadata["generator_seed"] = seed
            fh.write(json.dumps(problem_to_record(problem, metadata), sort_keys=True))
            fh.write("\n")


def read_dataset(path: str | Path, verify: bool = False) -> list[Problem]:
    problems = []
    with Path(path).open() as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                problem = problem_from_record(json.loads(line))
            except (KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"{path}:{line_no}: malformed dataset record: {exc}") from exc
            if verify:
                try:
                    problem.validate()
                except ValueError as exc:
                    raise ConfigError(f"{path}:{line_no}: invalid problem: {exc}") from exc
                assignment, _ = solve(dataclasses.replace(problem, labels=None))
                expected = {v: assignment[v] for v in problem.unknowns}
                if problem.labels != expected:
                    raise ConfigError(f"{path}:{line_no}: labels disagree with the solver")
            problems.append(problem)
    return problems


def write_stats(stats: DatasetStats, path: str | Path) -> None:
    payload = {
        "count": stats.count,
        "constraint_count_hist": stats.constraint_count_hist,
        "point_count_hist": stats.point_count_hist,
        "depth_hist": stats.depth_hist,
        "type_frequencies": stats.type_frequencies,
        "rejected_attempts": stats.rejected_attempts,
        "mean_constraints": stats.mean_constraints(),
        "mean_points": stats.mean_points(),
        "mean_depth": stats.mean_depth(),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    *,
    training_meta: dict | None = None,
    dtype: str = "f8",
) -> None:
    if dtype not in _DTYPES:
        raise CheckpointError(f"unsupported element type {dtype!r}")
    named = params.named_parameters()
    directory = []
    offset = 0
    blobs = []
    for name, tensor in named.items():
        blob = np.ascontiguousarray(tensor.data, dtype=_DTYPES[dtype]).tobytes()
        directory.append(
            {"name": name, "shape": list(tensor.shape), "dtype": dtype, "offset": offset}
        )
        offset += len(blob)
        blobs.append(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "grid_side": params.grid_side,
        "dim": params.dim,
        "cell": params.cell,
        "training": training_meta or {},
        "tensors": directory,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(manifest_bytes)))
        fh.write(manifest_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic bytes; not a geocsp checkpoint")
    header = len(CHECKPOINT_MAGIC)
    (manifest_len,) = struct.unpack_from("<I", raw, header)
    manifest_start = header + 4
    try:
        manifest = json.loads(raw[manifest_start : manifest_start + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {manifest.get('format_version')!r}"
        )
    payload = raw[manifest_start + manifest_len :]
    expected = sum(
        _DTYPES[t["dtype"]].itemsize * int(np.prod(t["shape"])) for t in manifest["tensors"]
    )
    if len(payload) != expected:
        raise CheckpointError(
            f"payload holds {len(payload)} bytes, directory declares {expected}"
        )
    params = init_params(
        manifest["grid_side"],
        manifest["dim"],
        np.random.default_rng(0),
        cell=manifest["cell"],
    )
    named = params.named_parameters()
    if set(named) != {t["name"] for t in manifest["tensors"]}:
        raise CheckpointError("tensor directory does not match the model layout")
    for entry in manifest["tensors"]:
        dt = _DTYPES[entry["dtype"]]
        size = dt.itemsize * int(np.prod(entry["shape"]))
        chunk = payload[entry["offset"] : entry["offset"] + size]
        array = np.frombuffer(chunk, dtype=dt).reshape(entry["shape"])
        target = named[entry["name"]]
        if tuple(target.shape) != tuple(entry["shape"]):
            raise CheckpointError(f"shape mismatch for {entry['name']!r}")
        target.data[...] = array.astype(np.float64)
    return params, manifest


# ---------------------------------------------------------------------------
# Config document
# ---------------------------------------------------------------------------


def default_config() -> dict:
    return {
        "generator": {"preset": "training"},
        "train": {},
        "inference": {},
    }


def load_config(path: str | Path | None) -> dict:
    config = default_config()
    if path is None:
        return config
    try:
        loaded = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for section, value in loaded.items():
        if section not in config:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(value, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        config[section].update(value)
    return config


def generator_config(section: dict, overrides: dict | None = None) -> GeneratorConfig:
    data = dict(section)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    preset = data.pop("preset", None)
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown generator preset {preset!r}; choose from {sorted(PRESETS)}")
    base = PRESETS[preset]() if preset else GeneratorConfig()
    fields = {f.name for f in dataclasses.fields(GeneratorConfig)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown generator options: {sorted(unknown)}")
    if "constraint_count_range" in data:
        data["constraint_count_range"] = tuple(data["constraint_count_range"])
    if "parents_per_constraint" in data:
        data["parents_per_constraint"] = tuple(data["parents_per_constraint"])
    if "allowed_kinds" in data:
        data["allowed_kinds"] = tuple(data["allowed_kinds"])
    return dataclasses.replace(base, **data)


def train_config(section: dict, overrides: dict | None = None) -> TrainConfig:
    data = dict(section)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown train options: {sorted(unknown)}")
    for key in ("iteration_range", "adam_betas"):
        if key in data:
            data[key] = tuple(data[key])
    return TrainConfig(**data)


def inference_config(section: dict, overrides: dict | None = None) -> InferenceConfig:
    data = dict(section)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    fields = {f.name for f in dataclasses.fields(InferenceConfig)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown inference options: {sorted(unknown)}")
    return InferenceConfig(**data)


# ---------------------------------------------------------------------------
# CSV metrics and trace export
# ---------------------------------------------------------------------------


def format_float(value: float) -> str:
    return f"{value:.17g}"


def write_metrics_csv(rows: list, path: str | Path) -> None:
    """Per-evaluation training metrics, one row per validation pass."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("epoch,train_loss,lr,val_point_acc,val_complete_acc\n")
        for row in rows:
            fh.write(
                ",".join(
                    format_float(v)
                    for v in (row.epoch, row.train_loss, row.lr, row.val_point_acc, row.val_complete_acc)
                )
                + "\n"
            )


def write_trace_jsonl(trace: ProblemTrace, path: str | Path) -> None:
    """One record per iteration: decoded points and exact satisfaction flags."""
    path = Path(path)
    with path.open("w") as fh:
        for t, (points, flags) in enumerate(zip(trace.decoded_points, trace.satisfied)):
            record = {
                "iteration": t,
                "points": {v: list(p) for v, p in points.items()},
                "satisfied": list(map(bool, flags)),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_trace_jsonl(path: str | Path) -> list[dict]:
    records = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
