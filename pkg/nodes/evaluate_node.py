"""
EvaluateNode: Scores the current student on the test set and writes its metrics files.
"""

from datetime import datetime
from pathlib import Path

from core.metrics import RunMetrics, evaluate
from nodes.distill_node import student_paths
from nodes.state_schema import PipelineState
from utils.stage_ledger import StageLedger, combine, guarded, sha256_arrays


class EvaluateNode:

    def __init__(self):
        self.node_name = "EvaluateNode"

    @guarded("evaluate")
    def process(self, state: PipelineState) -> PipelineState:
        seed = state['current_seed']
        stage = f"evaluate-seed{seed}"
        artifact_dir = Path(state['artifact_dir'])
        paths = student_paths(artifact_dir, seed)
        test = state['splits']['test']
        fingerprint = combine("evaluate", state['stage_fingerprints'][f"distill-seed{seed}"],
                              sha256_arrays(test.images, test.labels))
        ledger = StageLedger(artifact_dir)

        reused = ledger.is_current(stage, fingerprint)
        if reused:
            metrics = RunMetrics.read_summary(paths['summary'])
        else:
            params = state['student_params']
            metrics = state['student_metrics']
            metrics.test_error = evaluate(params, params.spec, test)
            metrics.write_csv(paths['metrics'])
            metrics.write_summary(paths['summary'])
            ledger.record(stage, fingerprint, [paths['metrics'], paths['summary']])

        state['stage_fingerprints'][stage] = fingerprint
        state['seed_results'].append({
            'seed': seed,
            'checkpoint': str(paths['checkpoint']),
            'metrics_csv': str(paths['metrics']),
            'summary': str(paths['summary']),
            'test_error': metrics.test_error,
            'reused': reused and state['student_reused'],
        })
        state['log_entries'].append({
            'timestamp': datetime.now().isoformat(),
            'node': self.node_name,
            'action': 'stage_reused' if reused else 'student_evaluated',
            'stage': stage,
            'seed': seed,
            'test_error': metrics.test_error,
        })
        print(f"Seed {seed}: test error {metrics.test_error:.4f}{' (reused)' if reused else ''}")
        return state
