"""
State schema for the distillation pipeline.
Defines the shared state structure passed between nodes.
"""

from datetime import datetime
from typing import Any, Dict, List, Optional, TypedDict

from core.datasets import LabeledSet
from core.metrics import RunMetrics
from core.teacher import LogitRecordSet
from core.tensor_engine import NetworkParams
from utils.config_loader import ExperimentConfig


class SeedResult(TypedDict):

    seed: int
    checkpoint: str
    metrics_csv: str
    summary: str
    test_error: Optional[float]
    reused: bool


class PipelineState(TypedDict):

    config: ExperimentConfig
    config_fingerprint: str
    artifact_dir: str

    splits: Dict[str, LabeledSet]
    data_fingerprint: str

    teacher_params: Optional[NetworkParams]
    logit_set: Optional[LogitRecordSet]

    # stage name -> content fingerprint of its inputs
    stage_fingerprints: Dict[str, str]

    pending_seeds: List[int]
    current_seed: Optional[int]
    runs_complete: bool
    student_params: Optional[NetworkParams]
    student_metrics: Optional[RunMetrics]
    student_reused: bool
    seed_results: List[SeedResult]

    progress: bool
    log_entries: List[Dict[str, Any]]
    timestamp: str


def initial_state(config: ExperimentConfig, progress: bool = True) -> PipelineState:
    return {
        'config': config,
        'config_fingerprint': '',
        'artifact_dir': '',
        'splits': {},
        'data_fingerprint': '',
        'teacher_params': None,
        'logit_set': None,
        'stage_fingerprints': {},
        'pending_seeds': list(config.seeds),
        'current_seed': None,
        'runs_complete': False,
        'student_params': None,
        'student_metrics': None,
        'student_reused': False,
        'seed_results': [],
        'progress': progress,
        'log_entries': [],
        'timestamp': datetime.now().isoformat(),
    }
