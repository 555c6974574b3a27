"""Trace files, attack manifests and report headers.

Traces are CSV: a ``# gridshield <version> config_sha256=<hex>`` comment,
then a header ``index,label,attack_kind,<channel:bus:measurement>...`` and
one row per sample.  Floats are written in their shortest round-trip form so
a trace read back reproduces the in-memory arrays bit for bit.  Every file is
written to a temporary sibling and renamed into place.
"""
from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .attackgen import AttackEvent, AttackScenario, Column, LabeledDataset

__all__ = [
    "TraceError",
    "config_hash",
    "header_line",
    "atomic_write_text",
    "write_trace",
    "read_trace",
    "write_manifest",
    "read_manifest",
]

NORMAL_KIND = "none"


class TraceError(ValueError):
    pass


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form of ``config``."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def header_line(config_sha: str) -> str:
    return f"gridshield {__version__} config_sha256={config_sha}"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_trace(path, ds: LabeledDataset, config_sha: str = "") -> Path:
    buf = io.StringIO()
    buf.write(f"# {header_line(config_sha)}\n")
    buf.write(",".join(["index", "label", "attack_kind"] + [c.name for c in ds.columns]) + "\n")
    kinds = np.where(ds.attack_kind == "", NORMAL_KIND, ds.attack_kind)
    body = np.char.add(
        np.char.add(np.arange(len(ds)).astype(str), ","),
        np.char.add(np.char.add(ds.labels.astype(str), ","), kinds.astype(str)),
    )
    for prefix, row in zip(body, ds.features):
        buf.write(prefix)
        buf.write(",")
        buf.write(",".join(map(repr, row.tolist())))
        buf.write("\n")
    return atomic_write_text(path, buf.getvalue())


def _read_header(path: Path) -> tuple[list[str], list[str]]:
    comments = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            return comments, line.rstrip("\n").split(",")
    raise TraceError(f"{path}: no header row")


def read_trace(path, case=None) -> LabeledDataset:
    """Load a trace; with ``case`` given, the columns must match its meters."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace not found: {path}")
    comments, header = _read_header(path)
    skip = len(comments) + 1
    if header[:3] != ["index", "label", "attack_kind"]:
        raise TraceError(f"{path}: header must start with index,label,attack_kind")
    names = header[3:]
    if case is not None:
        labels = [m.label for m in case.measurements]
        d = len(labels)
        if len(names) % d:
            raise TraceError(f"{path}: {len(names)} feature columns do not fit {d} measurements of {case.name}")
        columns = []
        for j, name in enumerate(names):
            col = Column.parse(name, j % d)
            if col.label != labels[j % d] or col.bus != case.measurements[j % d].owner_bus:
                raise TraceError(f"{path}: column {name!r} does not match measurement {labels[j % d]!r}")
            columns.append(col)
    else:
        columns = [Column.parse(name, j) for j, name in enumerate(names)]
    cols = [1] + list(range(3, len(header)))
    numeric = np.loadtxt(path, delimiter=",", comments=None, skiprows=skip, usecols=cols, ndmin=2)
    kinds = np.loadtxt(path, delimiter=",", comments=None, skiprows=skip, usecols=2, dtype=str, ndmin=1)
    kinds = np.where(kinds == NORMAL_KIND, "", kinds)
    chans = tuple(dict.fromkeys(c.channel for c in columns))
    return LabeledDataset(
        features=numeric[:, 1:],
        labels=numeric[:, 0].astype(np.int8),
        attack_kind=kinds.astype(str),
        columns=tuple(columns),
        layout="pc" if chans == ("pc",) else "cross",
        case_name=case.name if case is not None else "",
    )


def write_manifest(path, ds: LabeledDataset, config_sha: str = "") -> Path:
    doc = {
        "generator": header_line(config_sha),
        "scenario": None if ds.scenario is None else ds.scenario.__dict__,
        "samples": len(ds),
        "attacked": ds.attacked_count,
        "events": [ev.to_dict() for ev in ds.events],
    }
    return atomic_write_text(path, json.dumps(doc, indent=1, default=list) + "\n")


def read_manifest(path) -> tuple[AttackScenario | None, list[AttackEvent], int]:
    doc = json.loads(Path(path).read_text())
    sc = doc.get("scenario")
    if sc is not None:
        if sc.get("severity") is not None:
            sc["severity"] = tuple(sc["severity"])
        sc = AttackScenario(**sc)
    return sc, [AttackEvent.from_dict(e) for e in doc["events"]], int(doc["samples"])
