"""
Completed-stage bookkeeping for an artifact directory.

``stages.json`` maps each finished stage to the fingerprint of its inputs and
the sha256 of every file it produced. A stage is reusable only while both
still match.
"""

import functools
import hashlib
import json
from pathlib import Path
from typing import Callable, Dict, Iterable, Optional, Union

from core.errors import StageError, ToolkitError

LEDGER_NAME = "stages.json"


def sha256_file(path: Union[str, Path], chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(chunk_size), b""):
            digest.update(block)
    return digest.hexdigest()


def sha256_arrays(*arrays) -> str:
    digest = hashlib.sha256()
    for array in arrays:
        digest.update(str(array.dtype).encode())
        digest.update(str(array.shape).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()


def combine(*parts: str) -> str:
    return hashlib.sha256("|".join(parts).encode("utf-8")).hexdigest()


class StageLedger:

    def __init__(self, artifact_dir: Union[str, Path]):
        self.artifact_dir = Path(artifact_dir)
        self.path = self.artifact_dir / LEDGER_NAME
        self.entries: Dict[str, Dict] = {}
        if self.path.exists():
            with open(self.path, "r", encoding="utf-8") as f:
                self.entries = json.load(f)

    def is_current(self, stage: str, fingerprint: str) -> bool:
        entry = self.entries.get(stage)
        if entry is None or entry.get('fingerprint') != fingerprint:
            return False
        for name, digest in entry.get('outputs', {}).items():
            path = self.artifact_dir / name
            if not path.exists() or sha256_file(path) != digest:
                return False
        return True

    def record(self, stage: str, fingerprint: str, outputs: Iterable[Union[str, Path]]) -> None:
        hashes = {}
        for output in outputs:
            output = Path(output)
            hashes[output.relative_to(self.artifact_dir).as_posix()] = sha256_file(output)
        self.entries[stage] = {'fingerprint': fingerprint, 'outputs': hashes}
        self.artifact_dir.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as f:
            json.dump(self.entries, f, indent=2, sort_keys=True)

    def fingerprint_of(self, stage: str) -> Optional[str]:
        entry = self.entries.get(stage)
        return entry.get('fingerprint') if entry else None


def guarded(stage: str) -> Callable:
    """Wrap a node's ``process`` so any failure surfaces as a StageError naming the stage."""
    def decorate(process: Callable) -> Callable:
        @functools.wraps(process)
        def wrapper(self, state):
            try:
                return process(self, state)
            except StageError:
                raise
            except (ToolkitError, OSError, ValueError, ArithmeticError, KeyError, RuntimeError) as exc:
                print(f" Stage '{stage}' failed: {exc}")
                raise StageError(stage, exc) from exc
        return wrapper
    return decorate
