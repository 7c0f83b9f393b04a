import hashlib
import json
import logging
import os
import tempfile
from datetime import datetime, timezone
from typing import Any, List, Optional

import pandas
from pydantic import BaseModel

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class ProducedFile(BaseModel):
    path: str  # relative to the run directory
    sha256: str
    size: int


class RunManifest(BaseModel):
    run_id: str
    kind: str
    config_hash: str
    tool_version: str
    started_at: str
    finished_at: str
    config: str  # canonical config text
    files: List[ProducedFile]


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat()


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def atomic_write_bytes(path: str, payload: bytes):
    """Writes to a temp file in the target directory, fsyncs, then renames over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise


class RunWriter:
    """Tracks every file a run produces so the manifest lists them and failures can clean up."""

    def __init__(self, directory: str):
        self.directory = directory
        self.files: List[ProducedFile] = []
        self._created_directory = not os.path.exists(directory)
        os.makedirs(directory, exist_ok=True)

    def _path(self, name: str) -> str:
        path = os.path.abspath(os.path.join(self.directory, name))
        if os.path.commonpath([path, os.path.abspath(self.directory)]) != os.path.abspath(self.directory):
            raise ValueError(f"Output name '{name}' escapes the run directory")
        return path

    def write_bytes(self, name: str, payload: bytes) -> ProducedFile:
        path = self._path(name)
        atomic_write_bytes(path, payload)
        produced = ProducedFile(path=name, sha256=hashlib.sha256(payload).hexdigest(), size=len(payload))
        self.files = [f for f in self.files if f.path != name] + [produced]
        logger.info(f"Wrote {path} ({len(payload)} bytes)")
        return produced

    def write_csv(self, name: str, frame: pandas.DataFrame) -> ProducedFile:
        return self.write_bytes(name, frame.to_csv(index=False, lineterminator="\n").encode())

    def write_json(self, name: str, payload: Any) -> ProducedFile:
        return self.write_bytes(name, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())

    def write_manifest(self, manifest: RunManifest):
        """Written last and kept out of its own file list."""
        atomic_write_bytes(self._path(MANIFEST_NAME), manifest.model_dump_json(indent=2).encode())
        logger.info(f"Manifest written for run {manifest.run_id}")

    def discard(self):
        for produced in self.files:
            path = self._path(produced.path)
            if os.path.exists(path):
                os.remove(path)
        self.files = []
        manifest = self._path(MANIFEST_NAME)
        if os.path.exists(manifest):
            os.remove(manifest)
        for root, dirs, _ in os.walk(self.directory, topdown=False):
            for name in dirs:
                path = os.path.join(root, name)
                if not os.listdir(path):
                    os.rmdir(path)
        if self._created_directory and os.path.isdir(self.directory) and not os.listdir(self.directory):
            os.rmdir(self.directory)
        logger.warning(f"Discarded partial outputs in {self.directory}")


def load_manifest(directory: str) -> RunManifest:
    path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.exists(path):
        raise FileNotFoundError(f"No manifest in {directory}")
    with open(path, "rb") as handle:
        return RunManifest.model_validate_json(handle.read())


def verify_manifest(directory: str, manifest: Optional[RunManifest] = None) -> List[str]:
    """Paths whose file is missing or whose checksum no longer matches."""
    manifest = manifest or load_manifest(directory)
    bad = []
    for produced in manifest.files:
        path = os.path.join(directory, produced.path)
        if not os.path.exists(path) or sha256_file(path) != produced.sha256:
            bad.append(produced.path)
    return bad
