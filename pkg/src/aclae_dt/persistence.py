"""Versioned text artifacts: checkpoints, JSON records and delimited tables.

Every file starts with a one-line header ``#aclae-dt <kind> v<N>``. JSON
bodies are written with sorted keys and fixed separators so equal content
gives equal bytes; float arrays are stored as base64 little-endian float64
so they round-trip bit-exactly.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .model import ConvLSTMAutoencoder, ModelSpec
from .preprocess import EmbeddingTable, MinMaxScaler

FORMAT_VERSION = 1
MAGIC = "#aclae-dt"


class ArtifactError(ValueError):
    """A persisted file is missing, has the wrong header, or is inconsistent."""


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode()).hexdigest()[:16]


def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def header(kind: str) -> str:
    return f"{MAGIC} {kind} v{FORMAT_VERSION}"


def _clean(obj):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats -> None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def write_json(path, kind: str, payload: dict, cfg_hash: str, seed: int) -> Path:
    path = Path(path)
    body = dict(_clean(payload), config_hash=cfg_hash, seed=int(seed))
    path.write_text(header(kind) + "\n" + json.dumps(body, sort_keys=True, indent=1, allow_nan=False) + "\n")
    return path


def read_json(path, kind: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    first, _, rest = path.read_text().partition("\n")
    if first != header(kind):
        raise ArtifactError(f"{path}: expected header {header(kind)!r}, found {first!r}")
    return json.loads(rest)


def write_table(path, kind: str, columns: list, rows, cfg_hash: str, seed: int, delimiter: str = "\t") -> Path:
    """Delimited text: header line, a metadata comment, then column names and rows."""
    path = Path(path)
    lines = [header(kind), f"# config_hash={cfg_hash} seed={int(seed)}", delimiter.join(columns)]
    for row in rows:
        lines.append(delimiter.join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_table(path, kind: str | None = None, delimiter: str = "\t"):
    """Returns ``(meta, columns, rows)`` with rows as lists of strings."""
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact: {path}")
    lines = path.read_text().splitlines()
    if len(lines) < 3 or not lines[0].startswith(MAGIC):
        raise ArtifactError(f"{path}: not an aclae-dt table")
    if kind is not None and lines[0] != header(kind):
        raise ArtifactError(f"{path}: expected header {header(kind)!r}, found {lines[0]!r}")
    meta = dict(tok.split("=", 1) for tok in lines[1].lstrip("# ").split())
    columns = lines[2].split(delimiter)
    rows = [ln.split(delimiter) for ln in lines[3:]]
    return meta, columns, rows


@dataclass
class Checkpoint:
    model: ConvLSTMAutoencoder
    tables: list
    scaler: MinMaxScaler
    meta: dict


def save_checkpoint(path, model: ConvLSTMAutoencoder, tables: list, scaler: MinMaxScaler,
                    cfg_hash: str, seed: int, meta: dict | None = None) -> Path:
    """Parameters by layer name, embedding tables, scaler and model spec."""
    payload = {
        "spec": model.spec.to_dict(),
        "model_seed": model.seed,
        "parameters": [dict(name=n, **encode_array(p.data)) for n, p in model.params.named_parameters()],
        "embeddings": [dict(name=t.name, **encode_array(t.weights.data)) for t in tables],
        "scaler": {"min": encode_array(scaler.lo), "max": encode_array(scaler.hi)},
        "meta": meta or {},
    }
    return write_json(path, "checkpoint", payload, cfg_hash, seed)


def load_checkpoint(path) -> Checkpoint:
    body = read_json(path, "checkpoint")
    spec_d = dict(body["spec"])
    spec_d["encoder_filters"] = tuple(spec_d["encoder_filters"])
    spec_d["decoder_filters"] = tuple(spec_d["decoder_filters"])
    model = ConvLSTMAutoencoder(ModelSpec(**spec_d), seed=body["model_seed"])
    named = dict(model.params.named_parameters())
    stored = {p["name"]: p for p in body["parameters"]}
    if set(stored) != set(named):
        raise ArtifactError(f"{path}: parameter names do not match the stored model spec")
    for name, tensor in named.items():
        arr = decode_array(stored[name])
        if arr.shape != tensor.shape:
            raise ArtifactError(f"{path}: {name} has shape {arr.shape}, spec expects {tensor.shape}")
        tensor.data = arr
    tables = [EmbeddingTable(e["name"], Tensor(decode_array(e), requires_grad=True)) for e in body["embeddings"]]
    scaler = MinMaxScaler(decode_array(body["scaler"]["min"]), decode_array(body["scaler"]["max"]))
    meta = dict(body["meta"], config_hash=body["config_hash"], seed=body["seed"])
    return Checkpoint(model, tables, scaler, meta)
