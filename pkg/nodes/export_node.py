"""
ExportLogitsNode: Writes the teacher's logits for the training split to the logit cache.
"""

from datetime import datetime
from pathlib import Path

from core.teacher import export_logits, load_logits, teacher_tag_for
from nodes.state_schema import PipelineState
from utils.stage_ledger import StageLedger, combine, guarded

LOGITS_NAME = "teacher_logits.nlgt"


class ExportLogitsNode:

    def __init__(self):
        self.node_name = "ExportLogitsNode"

    @guarded("export-logits")
    def process(self, state: PipelineState) -> PipelineState:
        cfg = state['config']
        artifact_dir = Path(state['artifact_dir'])
        path = artifact_dir / LOGITS_NAME
        fingerprint = combine("export-logits", state['stage_fingerprints']['teacher'], state['data_fingerprint'])
        ledger = StageLedger(artifact_dir)

        if ledger.is_current("export-logits", fingerprint):
            records = load_logits(path)
            action = 'stage_reused'
            print(f"Logit cache up to date, reusing {path}")
        else:
            params = state['teacher_params']
            records = export_logits(params, params.spec, state['splits']['train'], path,
                                    teacher_tag_for(params.spec, cfg.get('teacher', 'seed')))
            ledger.record("export-logits", fingerprint, [path])
            action = 'logits_exported'

        state['logit_set'] = records
        state['stage_fingerprints']['export-logits'] = fingerprint
        state['log_entries'].append({
            'timestamp': datetime.now().isoformat(),
            'node': self.node_name,
            'action': action,
            'stage': 'export-logits',
            'path': str(path),
            'records': len(records),
            'n_classes': records.n_classes,
        })
        return state
