"""
ConfigCheckNode: Validates an experiment config before any stage runs.
"""

from datetime import datetime
from pathlib import Path

from core.errors import InvalidValueError
from nodes.state_schema import PipelineState
from utils.config_loader import check_paths
from utils.stage_ledger import guarded


class ConfigCheckNode:

    def __init__(self):
        self.node_name = "ConfigCheckNode"

    def validate(self, state: PipelineState) -> None:
        cfg = state['config']
        check_paths(cfg)
        teacher, student = cfg.teacher_spec, cfg.student_spec
        teacher.logit_layer_index()
        student.logit_layer_index()
        if not cfg.seeds:
            raise InvalidValueError("run.seeds must list at least one seed")

    @guarded("config")
    def process(self, state: PipelineState) -> PipelineState:
        cfg = state['config']
        self.validate(state)

        for warning in cfg.warnings:
            state['log_entries'].append({'node': self.node_name, **warning})
            print(f"Warning: duplicate key {warning['section']}.{warning['key']} "
                  f"(line {warning['line']} overrides line {warning['previous_line']})")

        artifact_dir = Path(cfg.output_dir)
        artifact_dir.mkdir(parents=True, exist_ok=True)
        state['artifact_dir'] = str(artifact_dir)
        state['config_fingerprint'] = cfg.fingerprint()

        state['log_entries'].append({
            'timestamp': datetime.now().isoformat(),
            'node': self.node_name,
            'action': 'config_validated',
            'source': cfg.source_path,
            'fingerprint': state['config_fingerprint'],
            'seeds': cfg.seeds,
        })
        print(f"Config validated: {cfg.source_path or '<inline>'} (fingerprint {state['config_fingerprint'][:12]})")
        return state
