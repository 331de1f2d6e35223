"""
TeacherNode: Trains the teacher on hard labels, or loads a prebuilt or
previously trained checkpoint.
"""

from datetime import datetime
from pathlib import Path

from core.arch_dsl import render_arch
from core.checkpoint import load_checkpoint, save_checkpoint
from core.errors import ShapeError
from core.metrics import evaluate
from core.teacher import train_teacher
from nodes.state_schema import PipelineState
from utils.config_loader import fingerprint_values
from utils.stage_ledger import StageLedger, combine, guarded, sha256_file

CHECKPOINT_NAME = "teacher.ntck"
METRICS_NAME = "teacher_metrics.csv"
SUMMARY_NAME = "teacher_summary.json"


class TeacherNode:

    def __init__(self):
        self.node_name = "TeacherNode"

    def _log(self, state: PipelineState, action: str, **extra) -> None:
        state['log_entries'].append({
            'timestamp': datetime.now().isoformat(),
            'node': self.node_name,
            'action': action,
            **extra,
        })

    def stage_fingerprint(self, state: PipelineState) -> str:
        cfg = state['config']
        canonical = cfg.canonical()
        teacher = {k: v for k, v in canonical['teacher'].items() if k != 'checkpoint'}
        return combine("teacher", state['data_fingerprint'],
                       fingerprint_values({'teacher': teacher, 'batch_size': cfg.batch_size}))

    @guarded("teacher")
    def process(self, state: PipelineState) -> PipelineState:
        cfg = state['config']
        spec = cfg.teacher_spec
        artifact_dir = Path(state['artifact_dir'])
        prebuilt = cfg.teacher_checkpoint

        if prebuilt is not None:
            params = load_checkpoint(prebuilt)
            if render_arch(params.spec) != render_arch(spec):
                raise ShapeError(f"checkpoint {prebuilt} holds {render_arch(params.spec)}, "
                                 f"config asks for {render_arch(spec)}")
            fingerprint = combine("teacher-checkpoint", sha256_file(prebuilt))
            self._log(state, 'teacher_checkpoint_loaded', path=str(prebuilt), fingerprint=fingerprint)
            print(f"Using prebuilt teacher checkpoint {prebuilt}")
        else:
            fingerprint = self.stage_fingerprint(state)
            ledger = StageLedger(artifact_dir)
            checkpoint = artifact_dir / CHECKPOINT_NAME
            if ledger.is_current("teacher", fingerprint):
                params = load_checkpoint(checkpoint)
                self._log(state, 'stage_reused', stage='teacher', path=str(checkpoint))
                print(f"Teacher stage up to date, reusing {checkpoint}")
            else:
                splits = state['splits']
                seed = cfg.get('teacher', 'seed')
                print(f"Training teacher {render_arch(spec)} (seed {seed})...")
                params, metrics = train_teacher(spec, splits['train'], splits['validation'],
                                                cfg.train_config('teacher'), seed, state['progress'])
                metrics.test_error = evaluate(params, spec, splits['test'])
                metrics.fingerprint = fingerprint
                save_checkpoint(params, checkpoint)
                outputs = [checkpoint, metrics.write_csv(artifact_dir / METRICS_NAME),
                           metrics.write_summary(artifact_dir / SUMMARY_NAME)]
                ledger.record("teacher", fingerprint, outputs)
                state['log_entries'].extend(metrics.log_entries)
                self._log(state, 'teacher_trained', epochs=metrics.epochs_run,
                          best_val_error=metrics.best_val_error, test_error=metrics.test_error)
                print(f"Teacher test error: {metrics.test_error:.4f}")

        state['teacher_params'] = params
        state['stage_fingerprints']['teacher'] = fingerprint
        return state
