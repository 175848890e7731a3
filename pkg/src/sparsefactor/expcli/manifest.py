"""Run manifest and deterministic CSV output."""
import csv
import io
import json
import math
import os
import tempfile
from datetime import datetime, timezone

TIMESTAMP_KEYS = ("started", "finished")


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _plain(v):
    """JSON/CSV-safe scalar: numpy scalars to Python, non-finite floats to strings."""
    if hasattr(v, "item"):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return repr(v)
    return v


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(columns, rows):
    """RFC-4180 CSV (CRLF line ends); floats written with repr so reruns are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_plain(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, columns, rows):
    atomic_write(path, csv_text(columns, rows))


class RunManifest:
    """Config snapshot, seed lineage, code version, timestamps and per-task status.

    Rewritten atomically after every status change; keys are sorted so the
    file is stable apart from the timestamp fields.
    """

    def __init__(self, path, config_snapshot, seed, code_version, tasks):
        self.path = path
        self.data = {
            "code_version": code_version,
            "config": config_snapshot,
            "seed": seed,
            "started": _now(),
            "finished": None,
            "tasks": {t.task_id: {"status": "pending", "stream": list(t.stream)} for t in tasks},
            "outputs": [],
        }
        self.write()

    def write(self):
        atomic_write(self.path, json.dumps(self.data, sort_keys=True, indent=2, default=_plain) + "\n")

    def mark(self, task_id, status, error=None):
        entry = self.data["tasks"][task_id]
        entry["status"] = status
        if error is not None:
            entry["error"] = error
        self.write()

    def finish(self, outputs):
        self.data["outputs"] = sorted(outputs)
        self.data["finished"] = _now()
        self.write()

    @property
    def failed(self):
        return sorted(k for k, v in self.data["tasks"].items() if v["status"] != "done")


def load_manifest(path, drop_timestamps=False):
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if drop_timestamps:
        for key in TIMESTAMP_KEYS:
            data.pop(key, None)
    return data
