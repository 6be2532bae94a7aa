"""Trace schema and persistence.

A run produces a TraceBundle: one OpRecord per operation, periodic
population snapshots, and run metadata. The CSV renderings here are the
stable on-disk contract between `simulate` and `check`; the digest over
them is the determinism fingerprint recorded in the run manifest.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import Tag

COMPLETED, TIMEOUT, CLIENT_DEPARTED = "completed", "timeout", "client_departed"

OPS_COLUMNS = [
    "op_id", "kind", "client", "t_invoke", "t_respond", "status",
    "returned_value", "returned_tag", "propagated_value", "propagated_tag",
    "consult_start", "consult_end", "prop_start", "prop_end",
    "consult_responders", "prop_responders",
    "distinct_contacts", "max_depth", "messages_sent", "retries", "degraded",
]

SNAPSHOT_COLUMNS = ["t", "uptodate_count", "live_count"]


@dataclass
class OpRecord:
    """Audit entry for one operation."""

    op_id: int
    kind: str                      # read | write
    client: int
    t_invoke: float
    t_respond: Optional[float]
    status: str
    returned_value: object = None
    returned_tag: Optional[Tag] = None
    propagated_value: object = None
    propagated_tag: Optional[Tag] = None
    consult_start: Optional[float] = None
    consult_end: Optional[float] = None
    prop_start: Optional[float] = None
    prop_end: Optional[float] = None
    consult_responders: frozenset = frozenset()
    prop_responders: frozenset = frozenset()
    distinct_contacts: int = 0
    max_depth: int = 0
    messages_sent: int = 0
    retries: int = 0
    degraded: bool = False


@dataclass
class Snapshot:
    t: float
    uptodate_count: int
    live_count: int


@dataclass
class TraceBundle:
    ops: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(ops_csv_text(self.ops).encode())
        h.update(snapshots_csv_text(self.snapshots).encode())
        return h.hexdigest()


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, Tag):
        return v.render()
    if isinstance(v, frozenset):
        return " ".join(str(i) for i in sorted(v))
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _opt_float(s: str) -> Optional[float]:
    return float(s) if s else None


def _opt_tag(s: str) -> Optional[Tag]:
    return Tag.parse(s) if s else None


def _id_set(s: str) -> frozenset:
    return frozenset(int(x) for x in s.split()) if s else frozenset()


def ops_csv_text(ops) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(OPS_COLUMNS)
    for r in sorted(ops, key=lambda r: r.op_id):
        w.writerow([_cell(getattr(r, c)) if hasattr(r, c) else "" for c in OPS_COLUMNS])
    return buf.getvalue()


def snapshots_csv_text(snapshots) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SNAPSHOT_COLUMNS)
    for s in snapshots:
        w.writerow([_cell(s.t), s.uptodate_count, s.live_count])
    return buf.getvalue()


def write_trace(bundle: TraceBundle, out_dir) -> dict:
    """Persist a bundle as ops.csv / snapshots.csv / meta.json under
    `out_dir`; returns the path map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "ops": out / "ops.csv",
        "snapshots": out / "snapshots.csv",
        "meta": out / "meta.json",
    }
    paths["ops"].write_text(ops_csv_text(bundle.ops))
    paths["snapshots"].write_text(snapshots_csv_text(bundle.snapshots))
    paths["meta"].write_text(json.dumps(bundle.meta, indent=2, sort_keys=True) + "\n")
    return {k: str(v) for k, v in paths.items()}


def read_ops_csv(path) -> list:
    ops = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            ops.append(OpRecord(
                op_id=int(row["op_id"]),
                kind=row["kind"],
                client=int(row["client"]),
                t_invoke=float(row["t_invoke"]),
                t_respond=_opt_float(row["t_respond"]),
                status=row["status"],
                returned_value=row["returned_value"] or None,
                returned_tag=_opt_tag(row["returned_tag"]),
                propagated_value=row["propagated_value"] or None,
                propagated_tag=_opt_tag(row["propagated_tag"]),
                consult_start=_opt_float(row["consult_start"]),
                consult_end=_opt_float(row["consult_end"]),
                prop_start=_opt_float(row["prop_start"]),
                prop_end=_opt_float(row["prop_end"]),
                consult_responders=_id_set(row["consult_responders"]),
                prop_responders=_id_set(row["prop_responders"]),
                distinct_contacts=int(row["distinct_contacts"]),
                max_depth=int(row["max_depth"]),
                messages_sent=int(row["messages_sent"]),
                retries=int(row["retries"]),
                degraded=row["degraded"] == "1",
            ))
    return ops


def read_snapshots_csv(path) -> list:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(Snapshot(float(row["t"]), int(row["uptodate_count"]),
                                int(row["live_count"])))
    return out
