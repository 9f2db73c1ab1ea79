"""On-disk formats: JSON manifests next to little-endian float64 blobs.

Every manifest written here carries a ``run`` block (the producing command,
config, input hashes, seed, tool version, timestamp) and ``run_hash``, a digest
of that block without its timestamp, so identical runs give identical hashes.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embedding import ClassEmbeddingTable
from .errors import FormatError
from .evaluation import EvalReport
from .learner import LossHistory, Mapper, TrainConfig
from .retrieval import Hit, ImageRecord, Index

INDEX_FORMAT = "hiersearch-index/1"
EMBEDDING_FORMAT = "hiersearch-embeddings/1"
MAPPER_FORMAT = "hiersearch-mapper/1"
DATASET_FORMAT = "hiersearch-dataset/1"
CSV_MAX_CLASSES = 32
_F8 = np.dtype("<f8")


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def input_hash(path: str | Path) -> str:
    """Like :func:`file_hash`, but a JSON manifest's run timestamp is ignored.

    Keeps downstream manifests byte-identical across reruns with the same
    inputs and seed.
    """
    path = Path(path)
    if path.suffix == ".json":
        try:
            obj = json.loads(path.read_text())
        except (json.JSONDecodeError, UnicodeDecodeError):
            return file_hash(path)
        if isinstance(obj, dict) and isinstance(obj.get("run"), dict):
            obj["run"].pop("timestamp", None)
            return hashlib.sha256(_dumps(obj).encode()).hexdigest()
    return file_hash(path)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    seed: int | None = None
    version: str = ""
    timestamp: str = ""

    def __post_init__(self):
        if not self.version:
            from . import __version__

            self.version = __version__
        if not self.timestamp:
            self.timestamp = datetime.now(timezone.utc).isoformat(timespec="seconds")

    def digest(self) -> str:
        body = asdict(self)
        body.pop("timestamp")
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()

    def as_block(self) -> dict:
        return {"run": asdict(self), "run_hash": self.digest()}


def _run_block(run: RunManifest | None) -> dict:
    return run.as_block() if run is not None else {}


def _read_manifest(path: Path, expected: str) -> dict:
    try:
        manifest = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None
    if manifest.get("format") != expected:
        raise FormatError(f"{path}: expected format {expected!r}, found {manifest.get('format')!r}")
    return manifest


def _write_blob(path: Path, *arrays: np.ndarray) -> None:
    with open(path, "wb") as fh:
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype=_F8).tobytes())


def _read_blob(path: Path, count: int) -> np.ndarray:
    data = np.fromfile(path, dtype=_F8)
    if data.size != count:
        raise FormatError(f"{path}: expected {count} float64 values, found {data.size}")
    return data.astype(np.float64)


# ----------------------------------------------------------------------
# class embeddings
def save_embedding_table(table: ClassEmbeddingTable, prefix: str | Path, run: RunManifest | None = None) -> Path:
    """Write ``<prefix>.json`` and ``<prefix>.bin``; returns the manifest path."""
    prefix = Path(prefix)
    blob = prefix.with_suffix(".bin")
    _write_blob(blob, table.vectors)
    manifest = {
        "format": EMBEDDING_FORMAT,
        "class_ids": list(table.class_ids),
        "dim": table.embedding_dim,
        "blob": blob.name,
        "dtype": "<f8",
        **_run_block(run),
    }
    path = prefix.with_suffix(".json")
    path.write_text(_dumps(manifest))
    return path


def load_embedding_table(path: str | Path) -> ClassEmbeddingTable:
    path = Path(path)
    manifest = _read_manifest(path, EMBEDDING_FORMAT)
    n, dim = len(manifest["class_ids"]), manifest["dim"]
    vectors = _read_blob(path.parent / manifest["blob"], n * dim).reshape(n, dim)
    return ClassEmbeddingTable(tuple(manifest["class_ids"]), vectors)


def save_embedding_csv(table: ClassEmbeddingTable, path: str | Path) -> None:
    if table.n_classes > CSV_MAX_CLASSES:
        raise ValueError(f"CSV export is limited to {CSV_MAX_CLASSES} classes")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", *(f"d{j}" for j in range(table.embedding_dim))])
        for cid, row in zip(table.class_ids, table.vectors):
            w.writerow([cid, *(repr(float(v)) for v in row)])


def load_embedding_csv(path: str | Path) -> ClassEmbeddingTable:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return ClassEmbeddingTable(tuple(r[0] for r in rows), np.array([[float(v) for v in r[1:]] for r in rows]))


def load_matrix(path: str | Path) -> np.ndarray:
    """Square matrix from JSON (nested lists) or headerless CSV."""
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        data = json.loads(text)
        if isinstance(data, dict):
            data = data["matrix"]
        return np.array(data, dtype=np.float64)
    return np.array([[float(v) for v in row] for row in csv.reader(text.splitlines()) if row])


# ----------------------------------------------------------------------
# mapper checkpoints
def save_mapper(
    mapper: Mapper,
    prefix: str | Path,
    config: TrainConfig | None = None,
    run: RunManifest | None = None,
) -> Path:
    prefix = Path(prefix)
    blob = prefix.with_suffix(".bin")
    params = mapper.params()
    layout, offset = [], 0
    for name, arr in params.items():
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    _write_blob(blob, *(a.ravel() for a in params.values()))
    manifest = {
        "format": MAPPER_FORMAT,
        "input_dim": mapper.input_dim,
        "output_dim": mapper.output_dim,
        "n_classes": mapper.n_classes,
        "hidden_dim": None if mapper.hidden_weights is None else mapper.hidden_weights.shape[0],
        "loss_mix": mapper.loss_mix,
        "seed": None if config is None else config.seed,
        "config": None if config is None else asdict(config),
        "params": layout,
        "blob": blob.name,
        "blob_sha256": file_hash(blob),
        **_run_block(run),
    }
    path = prefix.with_suffix(".json")
    path.write_text(_dumps(manifest))
    return path


def load_mapper(path: str | Path) -> tuple[Mapper, dict]:
    """Mapper and its manifest."""
    path = Path(path)
    manifest = _read_manifest(path, MAPPER_FORMAT)
    total = sum(math.prod(p["shape"]) for p in manifest["params"])
    data = _read_blob(path.parent / manifest["blob"], total)
    params = {
        p["name"]: data[p["offset"]:p["offset"] + math.prod(p["shape"])].reshape(p["shape"])
        for p in manifest["params"]
    }
    return Mapper(loss_mix=manifest["loss_mix"], **params), manifest


def mapper_hash(path: str | Path) -> str:
    manifest = _read_manifest(Path(path), MAPPER_FORMAT)
    return manifest["blob_sha256"]


def write_loss_history(history: LossHistory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "lr", "correlation", "cross_entropy", "total"])
        for row in history.rows():
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])


# ----------------------------------------------------------------------
# feature datasets (JSONL)
def _vec(a) -> list[float] | None:
    return None if a is None else [float(v) for v in np.asarray(a).ravel()]


def write_records(
    records: Iterable[ImageRecord], path: str | Path, run: RunManifest | None = None, extra: dict | None = None
) -> Path:
    """One JSON object per line plus a ``<path>.manifest.json`` sidecar."""
    path = Path(path)
    count = 0
    with open(path, "w") as fh:
        for r in records:
            obj = {"image_id": r.image_id, "features": _vec(r.raw_features)}
            if r.label is not None:
                obj["label"] = r.label
            if r.rerank_descriptor is not None:
                obj["rerank_descriptor"] = _vec(r.rerank_descriptor)
            fh.write(json.dumps(obj, sort_keys=True) + "\n")
            count += 1
    sidecar = path.with_name(path.name + ".manifest.json")
    sidecar.write_text(
        _dumps({"format": DATASET_FORMAT, "count": count, "sha256": file_hash(path), **(extra or {}), **_run_block(run)})
    )
    return sidecar


def read_records(path: str | Path) -> list[ImageRecord]:
    records = []
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                desc = obj.get("rerank_descriptor")
                records.append(
                    ImageRecord(
                        image_id=str(obj["image_id"]),
                        raw_features=np.array(obj["features"], dtype=np.float64),
                        label=obj.get("label"),
                        rerank_descriptor=None if desc is None else np.array(desc, dtype=np.float64),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{no}: bad record ({exc})") from None
    return records


# ----------------------------------------------------------------------
# index directories
def save_index(index: Index, directory: str | Path, run: RunManifest | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    _write_blob(directory / "embeddings.bin", index.embeddings)
    files = {"embeddings": "embeddings.bin", "labels": "labels.csv"}
    if index.descriptors is not None:
        _write_blob(directory / "descriptors.bin", index.descriptors)
        files["descriptors"] = "descriptors.bin"
    with open(directory / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["image_id", "label"])
        for iid, lab in zip(index.image_ids, index.labels):
            w.writerow([iid, "" if lab is None else lab])
    manifest = {
        **index.manifest,
        "format": INDEX_FORMAT,
        "count": len(index),
        "dim": index.dim,
        "rerank_dim": index.rerank_dim,
        "files": files,
        **_run_block(run),
    }
    path = directory / "manifest.json"
    path.write_text(_dumps(manifest))
    return path


def load_index(directory: str | Path) -> Index:
    directory = Path(directory)
    manifest = _read_manifest(directory / "manifest.json", INDEX_FORMAT)
    with open(directory / manifest["files"]["labels"], newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    ids = [r[0] for r in rows]
    labels = [r[1] or None for r in rows]
    count, dim = manifest["count"], manifest["dim"]
    if len(ids) != count:
        raise FormatError(f"{directory}: manifest count {count}, labels file has {len(ids)} rows")
    E = _read_blob(directory / manifest["files"]["embeddings"], count * dim).reshape(count, dim)
    D = None
    if "descriptors" in manifest["files"]:
        d_r = manifest["rerank_dim"]
        D = _read_blob(directory / manifest["files"]["descriptors"], count * d_r).reshape(count, d_r)
    return Index(ids, E, labels, D, manifest)


# ----------------------------------------------------------------------
# query results and evaluation reports
def write_hits_jsonl(fh, query_id: str, hits: Sequence[Hit]) -> None:
    for rank, h in enumerate(hits, 1):
        obj = {"query_id": query_id, "rank": rank, "image_id": h.image_id, "score": h.score}
        if h.rerank_score is not None:
            obj["rerank_score"] = h.rerank_score
        fh.write(json.dumps(obj) + "\n")


def save_eval_report(report: EvalReport, directory: str | Path, run: RunManifest | None = None) -> tuple[Path, Path]:
    """``report.json`` plus ``hp_curve.csv`` (k, mean HP@k before/after re-rank)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rpath = directory / "report.json"
    rpath.write_text(_dumps({"format": "hiersearch-eval/1", **report.to_dict(), **_run_block(run)}))
    cpath = directory / "hp_curve.csv"
    with open(cpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "mean_hp", "mean_hp_before_rerank"])
        for k, (a, b) in enumerate(zip(report.after_rerank.hp_curve, report.before_rerank.hp_curve), 1):
            w.writerow([k, repr(a), repr(b)])
    return rpath, cpath
