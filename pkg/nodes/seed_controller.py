"""
SeedControllerNode: Hands out the configured seeds one distillation run at a time.
"""

from datetime import datetime

from nodes.state_schema import PipelineState


class SeedControllerNode:

    def __init__(self):
        self.node_name = "SeedControllerNode"

    def process(self, state: PipelineState) -> PipelineState:
        pending = state['pending_seeds']

        if pending:
            seed = pending.pop(0)
            state['current_seed'] = seed
            state['runs_complete'] = False
            state['log_entries'].append({
                'timestamp': datetime.now().isoformat(),
                'node': self.node_name,
                'action': 'seed_assigned',
                'seed': seed,
                'remaining': len(pending),
            })
        else:
            state['current_seed'] = None
            state['runs_complete'] = True
            state['log_entries'].append({
                'timestamp': datetime.now().isoformat(),
                'node': self.node_name,
                'action': 'runs_completed',
                'total_runs': len(state['seed_results']),
            })
            print(f"\nAll {len(state['seed_results'])} distillation runs complete.\n")

        return state

    @staticmethod
    def route(state: PipelineState) -> str:
        return "manifest" if state['runs_complete'] else "distill"
