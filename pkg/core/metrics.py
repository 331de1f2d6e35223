"""
Run metrics and classification error.
"""

import csv
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from core.arch_dsl import ArchSpec
from core.tensor_engine import NetworkParams, predict_logits

METRICS_HEADER = ["seed", "epoch", "train_loss", "val_error", "test_error"]


def format_number(value: Optional[float]) -> str:
    """Locale-independent shortest round-trip text; blank for missing values."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def error_rate(logits: np.ndarray, labels: np.ndarray) -> float:
    """Argmax classification error; ties go to the lowest class index."""
    if len(labels) == 0:
        raise ValueError("cannot compute an error rate on an empty set")
    predictions = np.argmax(logits, axis=1)
    return float(np.count_nonzero(predictions != np.asarray(labels)) / len(labels))


def evaluate(params: NetworkParams, spec: ArchSpec, test_set) -> float:
    if len(test_set) == 0:
        raise ValueError(f"{test_set.name}: empty evaluation set")
    return error_rate(predict_logits(spec, params, test_set.images), test_set.labels)


def improvement(baseline_error: float, achieved_error: float) -> float:
    """(baseline - achieved) / baseline as a fraction."""
    if baseline_error <= 0:
        raise ValueError("baseline error must be positive to compute an improvement")
    return (baseline_error - achieved_error) / baseline_error


@dataclass
class RunMetrics:
    tag: str
    seed: int
    fingerprint: str = ""
    epochs: List[Dict[str, Any]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_error: Optional[float] = None
    test_error: Optional[float] = None
    baseline_error: Optional[float] = None
    wall_s: float = 0.0
    log_entries: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.epochs)

    @property
    def improvement_pct(self) -> Optional[float]:
        if self.baseline_error is None or self.test_error is None or self.baseline_error <= 0:
            return None
        return 100.0 * improvement(self.baseline_error, self.test_error)

    def record_epoch(self, epoch: int, train_loss: float, val_error: Optional[float], improved: bool) -> None:
        row = {'epoch': epoch, 'train_loss': train_loss, 'val_error': val_error}
        self.epochs.append(row)
        self.log_entries.append({
            'timestamp': datetime.now().isoformat(),
            'node': self.tag,
            'action': 'epoch_completed',
            'improved': improved,
            **row,
        })

    def write_csv(self, path: Union[str, Path]) -> Path:
        """Per-epoch rows plus a 'final' row; contains nothing that varies between identical runs."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(METRICS_HEADER)
            for row in self.epochs:
                writer.writerow([self.seed, row['epoch'], format_number(row['train_loss']),
                                 format_number(row['val_error']), ""])
            best = self.epochs[self.best_epoch - 1] if self.best_epoch else {}
            writer.writerow([self.seed, "final", format_number(best.get('train_loss')),
                             format_number(self.best_val_error), format_number(self.test_error)])
        return path

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['epochs_run'] = self.epochs_run
        data['improvement_pct'] = self.improvement_pct
        return data

    def write_summary(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, ensure_ascii=False)
        return path

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunMetrics":
        known = {name: data[name] for name in cls.__dataclass_fields__ if name in data}
        return cls(**known)

    @classmethod
    def read_summary(cls, path: Union[str, Path]) -> "RunMetrics":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))
