
from pathlib import Path

from graphviz import Digraph, ExecutableNotFound


def create_pipeline_dag():

    dot = Digraph(comment='Noisy-teacher distillation pipeline', format='png')
    dot.attr(rankdir='TB')  # Top to bottom
    dot.attr('node', shape='box', style='rounded,filled', fontname='Arial')
    dot.attr('edge', fontname='Arial')

    colors = {
        'input': '#E3F2FD',
        'controller': '#FFF3E0',  # Light orange
        'training': '#E8F5E9',    # Light green
        'cache': '#F3E5F5',       # Light purple
        'evaluate': '#FCE4EC',    # Light pink
        'logger': '#F5F5F5',      # Light gray
    }

    dot.node('start', 'START', shape='ellipse', fillcolor='#4CAF50', fontcolor='white')
    dot.node('config_check', 'ConfigCheckNode\n(Validate Config)', fillcolor=colors['input'])
    dot.node('data', 'DataNode\n(Load & Split Dataset)', fillcolor=colors['input'])
    dot.node('teacher', 'TeacherNode\n(Train or Load Teacher)', fillcolor=colors['training'])
    dot.node('export_logits', 'ExportLogitsNode\n(Write Logit Cache)', fillcolor=colors['cache'])
    dot.node('seed_controller', 'SeedController\n(Next Seed)', fillcolor=colors['controller'])
    dot.node('distill', 'DistillNode\n(Noisy-Teacher Student)', fillcolor=colors['training'])
    dot.node('evaluate', 'EvaluateNode\n(Test Error & Metrics)', fillcolor=colors['evaluate'])
    dot.node('manifest', 'LoggerNode\n(Write Manifest)', fillcolor=colors['logger'])
    dot.node('end', 'END', shape='ellipse', fillcolor='#F44336', fontcolor='white')

    dot.edge('start', 'config_check', label='1. Experiment config')
    dot.edge('config_check', 'data', label='2. Paths & archs valid')
    dot.edge('data', 'teacher', label='3. Train / validation / test')
    dot.edge('teacher', 'export_logits', label='4. Teacher checkpoint')
    dot.edge('export_logits', 'seed_controller', label='5. Logit cache')

    dot.edge('seed_controller', 'distill', label='6a. Seed pending')
    dot.edge('seed_controller', 'manifest', label='6b. All seeds done')

    dot.edge('distill', 'evaluate', label='7. Student checkpoint')
    dot.edge('evaluate', 'seed_controller', label='8. Metrics written\n(Loop per seed)', style='dashed')

    dot.edge('manifest', 'end', label='9. Manifest written')

    with dot.subgraph(name='cluster_legend') as legend:
        legend.attr(label='Workflow Legend', style='dashed')
        legend.node('leg1', 'Input', shape='box', style='rounded,filled', fillcolor=colors['input'])
        legend.node('leg2', 'Control', shape='box', style='rounded,filled', fillcolor=colors['controller'])
        legend.node('leg3', 'Training', shape='box', style='rounded,filled', fillcolor=colors['training'])
        legend.node('leg4', 'Artifacts', shape='box', style='rounded,filled', fillcolor=colors['cache'])
        legend.attr(rank='same')

    return dot


def write_dag(output_path: Path) -> Path:
    """Writes the .dot source and, when the Graphviz binaries are installed, a PNG next to it."""
    dag = create_pipeline_dag()
    output_path.parent.mkdir(parents=True, exist_ok=True)

    dot_path = output_path.with_suffix('.dot')
    with open(dot_path, 'w') as f:
        f.write(dag.source)
    print(f"DAG source saved: {dot_path}")

    try:
        dag.render(output_path, cleanup=True)
        print(f"DAG visualization saved: {output_path}.png")
    except ExecutableNotFound:
        print("Graphviz 'dot' executable not found; skipped PNG rendering")
    return dot_path


def main():
    print(" Generating pipeline DAG visualization...")
    write_dag(Path('docs') / 'pipeline_dag')


if __name__ == '__main__':
    main()
