"""Binary checkpoints and metrics export.

Checkpoint layout::

    b"TMGN1" | uint64 LE manifest length | JSON manifest | float64 LE blob

The manifest lists every parameter and buffer with its shape and byte
offset into the blob, plus the hash of the config that produced it.
"""

from __future__ import annotations

import csv
import json
import logging
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"TMGN1"


class CheckpointError(ValueError):
    pass


def save_state(path, state: dict, config_hash: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name, arr in state.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "dtype": "<f8", "offset": offset, "nbytes": a.nbytes})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = json.dumps({"config_hash": config_hash, "params": entries, "blob_size": offset},
                          sort_keys=True).encode()
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for c in chunks:
            fh.write(c)
    return path


def load_state(path) -> tuple[OrderedDict, dict]:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:len(MAGIC)]!r}, expected {MAGIC!r}")
    head = len(MAGIC) + 8
    if len(raw) < head:
        raise CheckpointError(f"{path}: truncated header")
    (mlen,) = struct.unpack("<Q", raw[len(MAGIC):head])
    if len(raw) < head + mlen:
        raise CheckpointError(f"{path}: truncated manifest ({len(raw) - head} of {mlen} bytes)")
    try:
        manifest = json.loads(raw[head:head + mlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointError(f"{path}: manifest is not valid JSON ({e})") from None
    blob = raw[head + mlen:]
    size = manifest.get("blob_size")
    if len(blob) < size:
        raise CheckpointError(f"{path}: truncated blob ({len(blob)} of {size} bytes)")
    if len(blob) != size:
        raise CheckpointError(f"{path}: blob has {len(blob)} bytes but manifest declares {size}")
    state = OrderedDict()
    end_prev = 0
    for e in sorted(manifest["params"], key=lambda e: e["offset"]):
        n = int(np.prod(e["shape"], dtype=np.int64)) * 8
        if e["dtype"] != "<f8" or e["nbytes"] != n:
            raise CheckpointError(f"{path}: entry {e['name']!r} has inconsistent dtype/size")
        if e["offset"] < end_prev or e["offset"] + n > size:
            raise CheckpointError(f"{path}: entry {e['name']!r} overlaps another or runs past the blob")
        end_prev = e["offset"] + n
    for e in manifest["params"]:
        a = np.frombuffer(blob, dtype="<f8", count=e["nbytes"] // 8, offset=e["offset"])
        state[e["name"]] = a.reshape(e["shape"]).astype(np.float64)
    return state, manifest


def save_checkpoint(model, path, config_hash: str | None = None) -> Path:
    if config_hash is None:
        cfg = getattr(model, "cfg", None)
        config_hash = cfg.hash() if hasattr(cfg, "hash") else ""
    return save_state(path, model.state_dict(), config_hash)


def load_checkpoint(path, model) -> list:
    """Load into ``model``. A config-hash mismatch warns and loads the name/shape intersection."""
    state, manifest = load_state(path)
    cfg = getattr(model, "cfg", None)
    expected = cfg.hash() if hasattr(cfg, "hash") else ""
    if manifest.get("config_hash") == expected:
        return model.load_state_dict(state, strict=True)
    log.warning("checkpoint %s was written by config %s (current %s); loading matching names and shapes",
                path, manifest.get("config_hash"), expected)
    return model.load_state_dict(state, strict=False)


def export_metrics(report, out_dir, embeddings=None, labels=None, extra: dict | None = None) -> dict:
    """metrics.json, pr_curves.csv and, when embeddings are given, embeddings.csv."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from None
    doc = report.to_dict()
    if extra:
        doc.update(extra)
    paths = {"metrics": out / "metrics.json", "pr": out / "pr_curves.csv"}
    paths["metrics"].write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    with paths["pr"].open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "threshold", "precision", "recall"])
        for c, t, p, r in report.pr:
            w.writerow([c, repr(t), repr(p), repr(r)])
    if embeddings is not None:
        paths["embeddings"] = out / "embeddings.csv"
        emb = np.asarray(embeddings)
        with paths["embeddings"].open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"e{i}" for i in range(emb.shape[1])])
            for lab, row in zip(labels, emb):
                w.writerow([int(lab)] + [repr(float(v)) for v in row])
    return paths
