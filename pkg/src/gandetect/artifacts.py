"""On-disk artifact layout and persistence.

Every artifact embeds the config hash and seed that produced it plus a
format version; loaders refuse versions they do not understand and name
the stage to run when a file is absent. CSV floats use ``repr`` so values
round-trip exactly and reruns are byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .errors import CheckpointVersionError, MissingArtifactError, ValidationError

ARTIFACT_FORMAT_VERSION = 1


@dataclass(frozen=True)
class RunPaths:
    root: Path

    @property
    def lock(self) -> Path:
        return self.root / "gandetect.lock"

    @property
    def split(self) -> Path:
        return self.root / "data" / "split.npz"

    @property
    def classifier(self) -> Path:
        return self.root / "models" / "classifier.pt"

    def gan(self, layer: int, unconditional: bool = False) -> Path:
        suffix = "_uncond" if unconditional else ""
        return self.root / "models" / f"acgan_layer{layer}{suffix}.pt"

    def attack_set(self, name: str) -> Path:
        return self.root / "attacks" / f"{name}.npz"

    def attack_csv(self, name: str) -> Path:
        return self.root / "attacks" / f"{name}.csv"

    def scores(self, layer: int) -> Path:
        return self.root / "scores" / f"layer{layer}.npz"

    def scores_csv(self, layer: int) -> Path:
        return self.root / "scores" / f"layer{layer}.csv"

    def uncond_scores(self, layer: int) -> Path:
        return self.root / "scores" / f"uncond_layer{layer}.npz"

    @property
    def detection_csv(self) -> Path:
        return self.root / "eval" / "detection.csv"

    @property
    def robust_csv(self) -> Path:
        return self.root / "eval" / "robust.csv"

    @property
    def figures_dir(self) -> Path:
        return self.root / "figures"

    @property
    def table1(self) -> Path:
        return self.root / "report" / "table1.csv"

    @property
    def table2(self) -> Path:
        return self.root / "report" / "table2.csv"


def run_paths(output_dir) -> RunPaths:
    return RunPaths(root=Path(output_dir))


def make_meta(config_hash: str, seed: int, stage: str, dataset_hash: str | None = None,
              **extra) -> dict:
    meta = {
        "config_hash": config_hash,
        "seed": int(seed),
        "stage": stage,
        "package_version": __version__,
    }
    if dataset_hash is not None:
        meta["dataset_hash"] = dataset_hash
    meta.update(extra)
    return meta


# ------------------------------------------------------------- torch containers


def save_torch(path: Path, state: dict, meta: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({"format_version": ARTIFACT_FORMAT_VERSION, "meta": meta, "state": state}, path)


def load_torch(path: Path, artifact: str, stage_to_run: str) -> tuple:
    if not path.exists():
        raise MissingArtifactError(artifact, stage_to_run)
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = int(payload.get("format_version", -1))
    if version != ARTIFACT_FORMAT_VERSION:
        raise CheckpointVersionError(path, version, ARTIFACT_FORMAT_VERSION)
    return payload["state"], payload.get("meta", {})


# ------------------------------------------------------------------ npz bundles


def save_npz(path: Path, arrays: dict, meta: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(arrays)
    payload.setdefault("format_version", np.array(ARTIFACT_FORMAT_VERSION))
    payload["artifact_meta"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8
    )
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_npz(path: Path, artifact: str, stage_to_run: str) -> tuple:
    if not path.exists():
        raise MissingArtifactError(artifact, stage_to_run)
    with np.load(path, allow_pickle=False) as data:
        arrays = {k: data[k] for k in data.files if k != "artifact_meta"}
        meta = json.loads(bytes(data["artifact_meta"]).decode()) if "artifact_meta" in data else {}
    version = int(arrays.get("format_version", -1))
    if version != ARTIFACT_FORMAT_VERSION:
        raise CheckpointVersionError(path, version, ARTIFACT_FORMAT_VERSION)
    return arrays, meta


# -------------------------------------------------------------------------- CSV


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest exact round-trip
    text = str(value)
    if "," in text or "\n" in text:
        raise ValidationError(f"CSV cell may not contain commas or newlines: {text!r}")
    return text


def write_csv(path: Path, header: list, rows: list, meta: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {key}={meta[key]}" for key in sorted(meta)]
    lines.append(",".join(header))
    for row in rows:
        if len(row) != len(header):
            raise ValidationError(f"row width {len(row)} does not match header {len(header)}")
        lines.append(",".join(format_cell(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def read_csv(path: Path, artifact: str, stage_to_run: str) -> tuple:
    """Returns (rows as dicts of strings, meta dict)."""
    if not path.exists():
        raise MissingArtifactError(artifact, stage_to_run)
    meta, header, rows = {}, None, []
    for line in path.read_text().splitlines():
        if not line:
            continue
        if line.startswith("# "):
            key, _, value = line[2:].partition("=")
            meta[key] = value
            continue
        cells = line.split(",")
        if header is None:
            header = cells
        else:
            rows.append(dict(zip(header, cells)))
    if header is None:
        raise ValidationError(f"{path} has no header row")
    return rows, meta


def check_same_dataset(metas: dict):
    """Refuse to combine artifacts built from different datasets."""
    hashes = {name: meta.get("dataset_hash") for name, meta in metas.items()}
    distinct = {h for h in hashes.values() if h}
    if len(distinct) > 1:
        detail = ", ".join(f"{name}={h}" for name, h in sorted(hashes.items()))
        raise ValidationError(f"artifacts come from different datasets: {detail}")
