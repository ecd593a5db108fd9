"""Atomic output writing and the run-directory manifest."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import platform
import tempfile
from typing import Iterable, Sequence

import numpy as np
import scipy

MANIFEST = "manifest.json"


def atomic_write(path: str, data: str) -> str:
    """Write via a temporary file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return hashlib.sha256(data.encode("utf-8")).hexdigest()


def dumps_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def csv_text(header: Sequence[str], rows: Iterable[Sequence], preamble: str | None = None) -> str:
    buf = io.StringIO()
    if preamble:
        buf.write(f"# {preamble}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def versions() -> dict[str, str]:
    from . import __version__
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "soccerpm": __version__}


class RunDirectory:
    """Output directory whose manifest maps each artifact to its digest."""

    def __init__(self, path: str, command: str, config_hash: str, seed: int):
        self.path = path
        self.command = command
        self.config_hash = config_hash
        self.seed = seed
        self.written: dict[str, str] = {}

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def write_text(self, name: str, text: str) -> str:
        path = self.file(name)
        self.written[name] = atomic_write(path, text)
        return path

    def write_json(self, name: str, payload: dict) -> str:
        body = dict(payload)
        body["configHash"] = self.config_hash
        body["seed"] = self.seed
        return self.write_text(name, dumps_json(body))

    def write_csv(self, name: str, header, rows) -> str:
        return self.write_text(name, csv_text(header, rows, f"configHash={self.config_hash} seed={self.seed}"))

    def finalize(self) -> str:
        path = self.file(MANIFEST)
        manifest = {"outputs": {}}
        if os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                manifest = json.load(fh)
        for name, digest in self.written.items():
            manifest["outputs"][name] = {"sha256": digest, "command": self.command,
                                         "configHash": self.config_hash, "seed": self.seed}
        manifest["versions"] = versions()
        atomic_write(path, dumps_json(manifest))
        return path
