"""
Parameter sweeps over noise level, selection probability, noise target and
student dropout, written as one CSV table.
"""

import itertools
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
import yaml

from core.arch_dsl import ArchSpec, LayerKind, LayerSpec
from core.datasets import LabeledSet
from core.distill import DistillConfig, NoiseTarget, distill
from core.errors import ToolkitError
from core.metrics import format_number, improvement
from core.teacher import LogitRecordSet

SWEEP_HEADER = ["sigma", "alpha", "target", "sharing", "dropout", "seed",
                "test_error", "improvement_pct", "epochs", "wall_s"]
GRID_KEYS = {'base', 'sigma', 'alpha', 'dropout', 'seeds', 'target', 'baseline'}
DEFAULT_BASELINE = {'target': 'none', 'sigma': 0.0, 'alpha': 0.0, 'dropout': 0.0}


@dataclass
class SweepGrid:
    base: DistillConfig
    sigmas: List[float] = field(default_factory=lambda: [0.5])
    alphas: List[float] = field(default_factory=lambda: [0.5])
    dropouts: List[float] = field(default_factory=lambda: [0.0])
    seeds: List[int] = field(default_factory=lambda: [0])
    targets: List[str] = field(default_factory=lambda: [NoiseTarget.TEACHER.value])
    baseline: Dict[str, object] = field(default_factory=lambda: dict(DEFAULT_BASELINE))

    def __post_init__(self):
        for name in ("sigmas", "alphas", "dropouts", "seeds", "targets"):
            if not getattr(self, name):
                raise ValueError(f"sweep grid '{name}' must not be empty")

    def points(self) -> List[Dict[str, object]]:
        """Grid points in order, baseline first; dropout points run without noise and are deduplicated."""
        points = []
        for s, a, t, d in itertools.product(self.sigmas, self.alphas, self.targets, self.dropouts):
            point = noise_free_if_dropout(
                {'sigma': float(s), 'alpha': float(a), 'target': NoiseTarget(t).value, 'dropout': float(d)})
            if point not in points:
                points.append(point)
        baseline = self.baseline_point()
        if baseline not in points:
            points.insert(0, baseline)
        return points

    def baseline_point(self) -> Dict[str, object]:
        return {
            'sigma': float(self.baseline.get('sigma', 0.0)),
            'alpha': float(self.baseline.get('alpha', 0.0)),
            'target': NoiseTarget(self.baseline.get('target', 'none')).value,
            'dropout': float(self.baseline.get('dropout', 0.0)),
        }


def noise_free_if_dropout(point: Dict[str, object]) -> Dict[str, object]:
    if float(point['dropout']) <= 0:
        return point
    return {**point, 'sigma': 0.0, 'alpha': 0.0, 'target': NoiseTarget.NONE.value}


def read_grid(path: Union[str, Path]) -> Dict[str, object]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Sweep grid not found: {path}")
    with open(path, 'r') as f:
        raw = yaml.safe_load(f) or {}
    unknown = set(raw) - GRID_KEYS
    if unknown:
        raise ValueError(f"unknown sweep grid keys: {sorted(unknown)}")
    return raw


def load_grid(path: Union[str, Path], base: DistillConfig,
              default_seeds: Optional[Sequence[int]] = None) -> SweepGrid:
    """Sweep axes from a YAML file; missing axes keep the base config's value."""
    raw = read_grid(path)

    def axis(key, default):
        value = raw.get(key, default)
        return list(value) if isinstance(value, (list, tuple)) else [value]

    return SweepGrid(
        base=base,
        sigmas=axis('sigma', base.noise.sigma),
        alphas=axis('alpha', base.noise.alpha),
        dropouts=axis('dropout', 0.0),
        seeds=[int(s) for s in axis('seeds', list(default_seeds or [base.seed]))],
        targets=axis('target', base.noise.target.value),
        baseline=raw.get('baseline') or dict(DEFAULT_BASELINE),
    )


def with_dropout(spec: ArchSpec, drop_prob: float) -> ArchSpec:
    """Insert D<r> after the first hidden FullyConnected layer (after the last hidden layer if none)."""
    if drop_prob <= 0:
        return spec
    logit_index = spec.logit_layer_index()
    hidden_fc = [i for i, layer in enumerate(spec.layers[:logit_index])
                 if layer.kind == LayerKind.FULLY_CONNECTED]
    position = hidden_fc[0] + 1 if hidden_fc else logit_index
    return spec.with_layer(position, LayerSpec.dropout(drop_prob))


def point_config(grid: SweepGrid, point: Dict[str, object], seed: int) -> DistillConfig:
    point = noise_free_if_dropout(point)
    noise = replace(grid.base.noise, sigma=point['sigma'], alpha=point['alpha'],
                    target=NoiseTarget(point['target']))
    return replace(grid.base, noise=noise, seed=seed,
                   student_spec=with_dropout(grid.base.student_spec, point['dropout']))


def run_sweep(grid: SweepGrid, logit_set: LogitRecordSet, train: LabeledSet, validation: LabeledSet,
              test: LabeledSet, out_path: Optional[Union[str, Path]] = None,
              progress: bool = True) -> pd.DataFrame:
    """
    One row per (config, seed), then seed-mean and seed-std rows per config.
    A failing run is recorded in its row as ``error:<category>`` and the sweep goes on.
    """
    rows = []
    for point in grid.points():
        for seed in grid.seeds:
            started = time.perf_counter()
            row = {**point, 'sharing': grid.base.noise.sharing.value, 'seed': seed}
            try:
                cfg = point_config(grid, point, seed)
                _, metrics = distill(cfg, logit_set, train, validation, test, progress=progress)
                row.update(test_error=metrics.test_error, epochs=metrics.epochs_run)
            except (ToolkitError, ArithmeticError, ValueError) as exc:
                category = getattr(exc, 'category', 'invalid-value' if isinstance(exc, ValueError) else 'divergence')
                row.update(test_error=f"error:{category}", epochs=None)
                print(f"[sweep] run failed (sigma={point['sigma']}, alpha={point['alpha']}, seed={seed}): {exc}")
            row['wall_s'] = time.perf_counter() - started
            rows.append(row)

    table = pd.DataFrame(rows)
    table['ok'] = table['test_error'].map(lambda v: not isinstance(v, str))
    keys = ['sigma', 'alpha', 'target', 'sharing', 'dropout']
    done = table[table['ok']].astype({'test_error': float})
    if len(done):
        stats = done.groupby(keys, sort=False)['test_error'].agg(['mean', 'std']).reset_index()
    else:
        stats = pd.DataFrame(columns=keys + ['mean', 'std'])

    base = grid.baseline_point()
    match = stats[(stats['sigma'] == base['sigma']) & (stats['alpha'] == base['alpha'])
                  & (stats['target'] == base['target']) & (stats['dropout'] == base['dropout'])]
    baseline_error = float(match['mean'].iloc[0]) if len(match) else None

    def pct(value) -> Optional[float]:
        if baseline_error is None or baseline_error <= 0 or isinstance(value, str) or value is None:
            return None
        return 100.0 * improvement(baseline_error, value)

    lines: List[List[str]] = []
    for _, row in table.iterrows():
        test_error = row['test_error']
        lines.append(_csv_row(row, row['seed'], test_error, pct(test_error), row['epochs'], row['wall_s']))
    for _, stat in stats.iterrows():
        lines.append(_csv_row(stat, "mean", stat['mean'], pct(stat['mean']), None, None))
        std = None if np.isnan(stat['std']) else stat['std']
        lines.append(_csv_row(stat, "std", std, None, None, None))

    output = pd.DataFrame(lines, columns=SWEEP_HEADER)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        output.to_csv(out_path, index=False, lineterminator="\n")
        print(f"Sweep table written to {out_path} ({len(table)} runs, baseline error {baseline_error})")
    return output


def _csv_row(point, seed, test_error, improvement_pct, epochs, wall_s) -> List[str]:
    def cell(value):
        if isinstance(value, str):
            return value
        if value is None or (isinstance(value, float) and np.isnan(value)):
            return ""
        return format_number(value)

    return [cell(float(point['sigma'])), cell(float(point['alpha'])), point['target'], point['sharing'],
            cell(float(point['dropout'])), cell(seed if isinstance(seed, str) else int(seed)),
            cell(test_error), cell(improvement_pct), cell(None if pd.isna(epochs) else int(epochs)), cell(wall_s)]


def sweep_configs(grid: SweepGrid) -> Sequence[DistillConfig]:
    return [point_config(grid, point, seed) for point in grid.points() for seed in grid.seeds]
