"""
DataNode: Loads the configured dataset into train / validation / test sets.
"""

from datetime import datetime

from core.datasets import load_dataset
from nodes.state_schema import PipelineState
from utils.config_loader import fingerprint_values
from utils.stage_ledger import combine, guarded, sha256_arrays


class DataNode:

    def __init__(self):
        self.node_name = "DataNode"

    @guarded("data")
    def process(self, state: PipelineState) -> PipelineState:
        cfg = state['config']
        dataset = cfg.values['dataset']
        splits = load_dataset(cfg.dataset_name, cfg.dataset_dir, cfg.split,
                              dataset['train_limit'], dataset['test_limit'])

        state['splits'] = splits
        state['data_fingerprint'] = combine(
            fingerprint_values({k: v for k, v in dataset.items() if k != 'dir'}),
            *(sha256_arrays(part.images, part.labels, part.sample_ids) for part in splits.values()),
        )

        state['log_entries'].append({
            'timestamp': datetime.now().isoformat(),
            'node': self.node_name,
            'action': 'dataset_loaded',
            'dataset': cfg.dataset_name,
            'sizes': {name: len(part) for name, part in splits.items()},
            'fingerprint': state['data_fingerprint'],
        })
        print(f"Loaded {cfg.dataset_name}: " + ", ".join(f"{n}={len(p)}" for n, p in splits.items()))
        return state
