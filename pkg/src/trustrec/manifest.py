"""Run manifests: the resolved configuration of a command, written before
any other output so interrupted runs still document what was attempted."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__

DATASET_FILES = ("meta.json", "nodes.tsv", "ratings.tsv", "social.tsv")


def dataset_fingerprint(data_dir):
    """Content hash over the canonical dataset files."""
    digest = hashlib.sha256()
    root = Path(data_dir)
    for name in DATASET_FILES:
        path = root / name
        digest.update(name.encode("utf-8"))
        if path.exists():
            digest.update(path.read_bytes())
    return digest.hexdigest()


def write_manifest(out_dir, command, config, *, data_dir=None, artifacts=(), seeds=None):
    """Write manifest.json into out_dir (creating it) and return its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "dataset_fingerprint": dataset_fingerprint(data_dir) if data_dir else None,
        "artifacts": [str(a) for a in artifacts],
        "seeds": seeds or {},
    }
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
