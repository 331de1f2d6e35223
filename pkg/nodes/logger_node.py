import json
from datetime import datetime
from pathlib import Path
from typing import Dict

from core import __version__
from nodes.state_schema import PipelineState
from utils.stage_ledger import guarded, sha256_file

MANIFEST_NAME = "manifest.json"
SUMMARY_NAME = "manifest.txt"


class LoggerNode:

    def __init__(self, log_path: str = ""):
        self.log_path = Path(log_path) if log_path else None
        self.node_name = "LoggerNode"

    def artifact_hashes(self, artifact_dir: Path) -> Dict[str, Dict]:
        files = {}
        for path in sorted(artifact_dir.rglob("*")):
            if not path.is_file() or path.name in (MANIFEST_NAME, SUMMARY_NAME):
                continue
            files[path.relative_to(artifact_dir).as_posix()] = {
                'sha256': sha256_file(path),
                'size_bytes': path.stat().st_size,
            }
        return files

    def serialize_state(self, state: PipelineState) -> dict:
        cfg = state['config']
        errors = [r['test_error'] for r in state['seed_results'] if r['test_error'] is not None]
        return {
            'metadata': {
                'toolkit_version': __version__,
                'config_source': cfg.source_path,
                'config_fingerprint': state['config_fingerprint'],
                'config': cfg.canonical(),
                'started': state['timestamp'],
                'log_generated': datetime.now().isoformat(),
            },
            'stages': dict(state['stage_fingerprints']),
            'seeds': state['seed_results'],
            'mean_test_error': sum(errors) / len(errors) if errors else None,
            'files': self.artifact_hashes(Path(state['artifact_dir'])),
            'node_log': state['log_entries'],
        }

    def write_log(self, data: dict, path: Path) -> None:
        """
        Write log data to file in JSON format.
        """
        path.parent.mkdir(parents=True, exist_ok=True)

        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False, default=str)

    def generate_text_summary(self, data: dict) -> str:
        """
        Generate a human-readable text summary.
        """
        meta = data['metadata']
        summary = f"""
Generated: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}

Toolkit version: {meta['toolkit_version']}
Config: {meta['config_source']}
Config fingerprint: {meta['config_fingerprint']}
Teacher: {meta['config']['teacher']['arch']}
Student: {meta['config']['student']['arch']}

RUNS:
"""
        for run in data['seeds']:
            error = 'n/a' if run['test_error'] is None else f"{run['test_error']:.4f}"
            summary += f"  seed {run['seed']}: test error {error}{' (reused)' if run['reused'] else ''}\n"
        if data['mean_test_error'] is not None:
            summary += f"  mean: {data['mean_test_error']:.4f}\n"

        summary += "\nFILES:\n"
        for name, entry in data['files'].items():
            summary += f"  {entry['sha256']}  {name}\n"
        return summary

    @guarded("manifest")
    def process(self, state: PipelineState) -> PipelineState:
        artifact_dir = Path(state['artifact_dir'])
        manifest_path = artifact_dir / MANIFEST_NAME
        print(f"Writing manifest to {manifest_path}...")

        state['log_entries'].append({
            'timestamp': datetime.now().isoformat(),
            'node': self.node_name,
            'action': 'manifest_written',
            'path': str(manifest_path),
        })
        data = self.serialize_state(state)
        self.write_log(data, manifest_path)
        (artifact_dir / SUMMARY_NAME).write_text(self.generate_text_summary(data), encoding='utf-8')
        if self.log_path is not None:
            self.write_log({'metadata': data['metadata'], 'node_log': data['node_log']}, self.log_path)
            print(f"   Run log: {self.log_path}")

        print(f"Manifest written:")
        print(f"   JSON: {manifest_path}")
        print(f"   Text: {artifact_dir / SUMMARY_NAME}")
        return state
