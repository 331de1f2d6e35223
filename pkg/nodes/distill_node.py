"""
DistillNode: Trains one student per seed from the cached teacher logits.
"""

from datetime import datetime
from pathlib import Path

from core.checkpoint import load_checkpoint, save_checkpoint
from core.distill import distill
from core.metrics import RunMetrics
from nodes.state_schema import PipelineState
from utils.config_loader import fingerprint_values
from utils.stage_ledger import StageLedger, combine, guarded


def student_paths(artifact_dir: Path, seed: int) -> dict:
    return {
        'checkpoint': artifact_dir / f"student_seed{seed}.ntck",
        'history': artifact_dir / f"student_seed{seed}_history.json",
        'metrics': artifact_dir / f"student_seed{seed}_metrics.csv",
        'summary': artifact_dir / f"student_seed{seed}_summary.json",
    }


class DistillNode:

    def __init__(self):
        self.node_name = "DistillNode"

    def stage_fingerprint(self, state: PipelineState, seed: int) -> str:
        cfg = state['config']
        canonical = cfg.canonical()
        inputs = {'student': canonical['student'], 'noise': canonical['noise'], 'batch_size': cfg.batch_size}
        return combine("distill", state['stage_fingerprints']['export-logits'], state['data_fingerprint'],
                       fingerprint_values(inputs), str(seed))

    @guarded("distill")
    def process(self, state: PipelineState) -> PipelineState:
        cfg = state['config']
        seed = state['current_seed']
        stage = f"distill-seed{seed}"
        artifact_dir = Path(state['artifact_dir'])
        paths = student_paths(artifact_dir, seed)
        fingerprint = self.stage_fingerprint(state, seed)
        ledger = StageLedger(artifact_dir)

        if ledger.is_current(stage, fingerprint):
            params = load_checkpoint(paths['checkpoint'])
            metrics = RunMetrics.read_summary(paths['history'])
            state['student_reused'] = True
            action = 'stage_reused'
            print(f"Student seed {seed} up to date, reusing {paths['checkpoint']}")
        else:
            splits = state['splits']
            print(f"Distilling student (seed {seed}, sigma={cfg.noise.sigma}, alpha={cfg.noise.alpha}, "
                  f"target={cfg.noise.target.value})...")
            params, metrics = distill(cfg.distill_config(seed), state['logit_set'], splits['train'],
                                      splits['validation'], progress=state['progress'])
            metrics.fingerprint = fingerprint
            save_checkpoint(params, paths['checkpoint'])
            metrics.write_summary(paths['history'])
            ledger.record(stage, fingerprint, [paths['checkpoint'], paths['history']])
            state['log_entries'].extend(metrics.log_entries)
            state['student_reused'] = False
            action = 'student_distilled'

        state['student_params'] = params
        state['student_metrics'] = metrics
        state['stage_fingerprints'][stage] = fingerprint
        state['log_entries'].append({
            'timestamp': datetime.now().isoformat(),
            'node': self.node_name,
            'action': action,
            'stage': stage,
            'seed': seed,
            'epochs': metrics.epochs_run,
            'best_val_error': metrics.best_val_error,
        })
        return state
