"""Download client for the motor movement/imagery EDF files with a size + SHA-256 manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
import urllib.error
import urllib.request
from pathlib import Path
from typing import Sequence

log = logging.getLogger(__name__)

DEFAULT_BASE_URL = "https://physionet.org/files/eegmmidb/1.0.0/"
MANIFEST_NAME = "manifest.json"
ENV_ROOT = "NEUROCAM_DATA_ROOT"

_locks: dict[str, threading.Lock] = {}
_locks_guard = threading.Lock()


class FetchError(RuntimeError):
    """One or more files could not be fetched; ``failures`` maps file name to reason."""

    def __init__(self, failures: dict[str, str], paths: list[Path]):
        super().__init__("; ".join(f"{k}: {v}" for k, v in failures.items()))
        self.failures = failures
        self.paths = paths


class ManifestMismatch(FetchError):
    pass


def data_root(default="data") -> Path:
    return Path(os.environ.get(ENV_ROOT, default))


def _lock(key: str) -> threading.Lock:
    with _locks_guard:
        return _locks.setdefault(key, threading.Lock())


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_manifest(root) -> dict:
    p = Path(root) / MANIFEST_NAME
    if not p.exists():
        return {"files": {}}
    return json.loads(p.read_text())


def _update_manifest(root: Path, rel: str, size: int, digest: str) -> None:
    with _lock(str(root / MANIFEST_NAME)):
        man = load_manifest(root)
        man["files"][rel] = {"size": size, "sha256": digest}
        _atomic_write(root / MANIFEST_NAME, json.dumps(man, indent=1, sort_keys=True).encode())


def _atomic_write(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_file(subject_id: int, run: int) -> str:
    """Dataset-relative path, e.g. ``S042/S042R03.edf``."""
    return f"S{subject_id:03d}/S{subject_id:03d}R{run:02d}.edf"


def verify(root, rel: str) -> bool:
    """True when the file exists and matches its manifest entry; raises on a mismatch."""
    root = Path(root)
    entry = load_manifest(root)["files"].get(rel)
    path = root / rel
    if entry is None or not path.exists():
        return False
    size = path.stat().st_size
    if size != entry["size"] or sha256_file(path) != entry["sha256"]:
        raise ManifestMismatch({rel: f"on-disk file differs from manifest (size {size} vs {entry['size']})"}, [])
    return True


def _download(url: str, timeout: float) -> bytes:
    with urllib.request.urlopen(url, timeout=timeout) as resp:
        status = getattr(resp, "status", 200)
        if status != 200:
            raise urllib.error.HTTPError(url, status, "non-200 response", resp.headers, None)
        return resp.read()


def fetch_subject(
    subject_id: int,
    runs: Sequence[int],
    dest=None,
    base_url: str = DEFAULT_BASE_URL,
    retries: int = 3,
    timeout: float = 60.0,
    backoff: float = 1.0,
) -> list[Path]:
    """Download the requested runs of one subject into ``dest`` (default: $NEUROCAM_DATA_ROOT or ./data).

    Files already present and matching the manifest are not downloaded
    again. Connection errors are retried with exponential backoff; an HTTP
    error status fails that file immediately. Failures are collected and
    raised together as :class:`FetchError` after all runs were attempted.
    """
    if not 1 <= int(subject_id) <= 109:
        raise ValueError("subject_id must lie in 1..109")
    root = Path(dest) if dest is not None else data_root()
    paths: list[Path] = []
    failures: dict[str, str] = {}
    for run in runs:
        rel = run_file(subject_id, int(run))
        path = root / rel
        with _lock(str(path.resolve())):
            try:
                if verify(root, rel):
                    paths.append(path)
                    continue
            except ManifestMismatch as exc:
                failures.update(exc.failures)
                continue
            url = base_url.rstrip("/") + "/" + rel
            payload, last = None, ""
            for attempt in range(retries + 1):
                try:
                    payload = _download(url, timeout)
                    break
                except urllib.error.HTTPError as exc:
                    last = f"HTTP {exc.code}"
                    break
                except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
                    last = f"network error: {exc}"
                    log.warning("%s attempt %d failed: %s", rel, attempt + 1, exc)
                    if attempt < retries:
                        time.sleep(backoff * 2**attempt)
            if payload is None:
                failures[rel] = last
                continue
            _atomic_write(path, payload)
            _update_manifest(root, rel, len(payload), hashlib.sha256(payload).hexdigest())
            log.info("fetched %s (%d bytes)", rel, len(payload))
            paths.append(path)
    if failures:
        raise FetchError(failures, paths)
    return paths
