"""
Configuration loaders.

``load_config`` reads the toolkit settings (YAML). ``parse_config`` reads an
experiment config in the line-oriented ``key = value`` format:

    # comment
    [section]
    key = value

Unknown sections and keys are rejected; a repeated key keeps its last value and
leaves a warning record on the parsed config.
"""

import hashlib
import json
import os
import re
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

import yaml
from dotenv import load_dotenv

from core.arch_dsl import ArchSpec, KNOWN_ARCHS, parse_arch, render_arch
from core.datasets import SplitConfig
from core.distill import DistillConfig, NoiseConfig, NoiseTarget, Sharing
from core.errors import ConfigError, InvalidValueError, MissingPathError, UnknownKeyError
from core.optim import ADAM, SGD
from core.training import TrainConfig

DATA_DIR_ENV = "NOISY_TEACHER_DATA_DIR"

SETTINGS_DEFAULTS = {
    'log_path': "logs/toolkit_log.json",
    'seed': None,
    'data_dir': None,
    'artifacts_dir': "artifacts",
}


def load_config(config_path: str) -> dict:
    """
    Load toolkit settings from a YAML file.

    Args:
        config_path: Path to config file

    Returns:
        Settings dictionary with defaults filled in
    """
    config_file = Path(config_path)

    if not config_file.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    with open(config_file, 'r') as f:
        config = {**SETTINGS_DEFAULTS, **(yaml.safe_load(f) or {})}

    # Add timestamp-based log path if not absolute
    if config.get('log_path') and not Path(config['log_path']).is_absolute():
        log_path = Path(config['log_path'])
        timestamp = datetime.now().strftime('%Y%m%d_%H%M%S')
        new_name = f"{log_path.stem}_{timestamp}{log_path.suffix}"
        config['log_path'] = str(log_path.parent / new_name)

    return config


def default_data_dir(dataset: Optional[str] = None) -> Optional[Path]:
    """Data directory from the environment (or a ``.env`` file); a per-dataset subdirectory wins if present."""
    load_dotenv()
    root = os.environ.get(DATA_DIR_ENV)
    if not root:
        return None
    root = Path(root)
    if dataset and (root / dataset).is_dir():
        return root / dataset
    return root


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise ValueError("must be >= 1")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise ValueError("must be >= 0")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise ValueError("must be > 0")
    return value


def _non_negative_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise ValueError("must be >= 0")
    return value


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise ValueError("must lie in [0, 1]")
    return value


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return text
    return parse


def _arch(text: str) -> str:
    text = KNOWN_ARCHS.get(text, text)
    parse_arch(text)
    return text


def _seed_list(text: str) -> List[int]:
    seeds = [int(part) for part in text.split(",") if part.strip()]
    if not seeds:
        raise ValueError("needs at least one seed")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")
    return seeds


def _sigma_range(text: str) -> Optional[Tuple[float, float]]:
    if not text:
        return None
    parts = [float(part) for part in text.split(",")]
    if len(parts) != 2 or parts[0] < 0 or parts[0] > parts[1]:
        raise ValueError("expected 'lo,hi' with 0 <= lo <= hi")
    return parts[0], parts[1]


def _text(text: str) -> str:
    return text


_TRAINING_KEYS = {
    'epochs': (_non_negative_int, 15),
    'patience': (_positive_int, 5),
    'optimizer': (_choice(ADAM, SGD), ADAM),
    'learning_rate': (_positive_float, 0.001),
    'weight_decay': (_non_negative_float, 0.0),
}

# section -> key -> (value parser, default)
SCHEMA: Dict[str, Dict[str, Tuple[Callable[[str], Any], Any]]] = {
    'dataset': {
        'name': (_choice("mnist", "cifar10"), "mnist"),
        'dir': (_text, ""),
        'validation_count': (_non_negative_int, 10000),
        'split_seed': (int, 0),
        'train_limit': (_non_negative_int, 0),
        'test_limit': (_non_negative_int, 0),
    },
    'teacher': {
        'arch': (_arch, KNOWN_ARCHS['mnist_teacher']),
        'checkpoint': (_text, ""),
        'seed': (int, 0),
        **_TRAINING_KEYS,
    },
    'student': {
        'arch': (_arch, KNOWN_ARCHS['mnist_student']),
        **_TRAINING_KEYS,
    },
    'noise': {
        'sigma': (_non_negative_float, 0.5),
        'alpha': (_probability, 0.5),
        'target': (_choice(*(t.value for t in NoiseTarget)), NoiseTarget.TEACHER.value),
        'sharing': (_choice(*(s.value for s in Sharing)), Sharing.PER_SAMPLE.value),
        'sigma_random': (_sigma_range, None),
    },
    'run': {
        'batch_size': (_positive_int, 64),
        'seeds': (_seed_list, [0]),
        'output_dir': (_text, "artifacts"),
    },
}

_SECTION = re.compile(r"^\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]$")
_ASSIGNMENT = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


@dataclass
class ExperimentConfig:
    values: Dict[str, Dict[str, Any]]
    source_path: Optional[str] = None
    warnings: List[Dict[str, Any]] = field(default_factory=list)

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    @property
    def dataset_name(self) -> str:
        return self.get('dataset', 'name')

    @property
    def dataset_dir(self) -> Optional[Path]:
        configured = self.get('dataset', 'dir')
        return Path(configured) if configured else default_data_dir(self.dataset_name)

    @property
    def split(self) -> SplitConfig:
        return SplitConfig(self.get('dataset', 'validation_count'), self.get('dataset', 'split_seed'))

    @property
    def teacher_spec(self) -> ArchSpec:
        return parse_arch(self.get('teacher', 'arch'))

    @property
    def student_spec(self) -> ArchSpec:
        return parse_arch(self.get('student', 'arch'))

    @property
    def teacher_checkpoint(self) -> Optional[Path]:
        configured = self.get('teacher', 'checkpoint')
        return Path(configured) if configured else None

    @property
    def batch_size(self) -> int:
        return self.get('run', 'batch_size')

    @property
    def seeds(self) -> List[int]:
        return list(self.get('run', 'seeds'))

    @property
    def output_dir(self) -> Path:
        return Path(self.get('run', 'output_dir'))

    @property
    def noise(self) -> NoiseConfig:
        section = self.values['noise']
        return NoiseConfig(section['sigma'], section['alpha'], NoiseTarget(section['target']),
                           Sharing(section['sharing']), section['sigma_random'])

    def train_config(self, section: str) -> TrainConfig:
        values = self.values[section]
        return TrainConfig(epochs=values['epochs'], patience=values['patience'], batch_size=self.batch_size,
                           optimizer=values['optimizer'], learning_rate=values['learning_rate'],
                           weight_decay=values['weight_decay'])

    def distill_config(self, seed: int) -> DistillConfig:
        return DistillConfig(self.student_spec, self.noise, self.train_config('student'), seed)

    def with_seeds(self, seeds: List[int]) -> "ExperimentConfig":
        values = {section: dict(keys) for section, keys in self.values.items()}
        values['run']['seeds'] = list(seeds)
        return replace(self, values=values)

    def canonical(self) -> Dict[str, Dict[str, Any]]:
        """Resolved values with architectures in canonical notation."""
        values = {section: dict(sorted(keys.items())) for section, keys in sorted(self.values.items())}
        for section in ('teacher', 'student'):
            values[section]['arch'] = render_arch(parse_arch(values[section]['arch']))
        return values

    def fingerprint(self, sections: Optional[List[str]] = None) -> str:
        canonical = self.canonical()
        if sections is not None:
            canonical = {name: canonical[name] for name in sorted(sections)}
        return fingerprint_values(canonical)


def fingerprint_values(values: Any) -> str:
    payload = json.dumps(values, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def parse_config_text(text: str, source_path: Optional[str] = None) -> ExperimentConfig:
    values = {section: {key: default for key, (_, default) in keys.items()} for section, keys in SCHEMA.items()}
    seen: Dict[Tuple[str, str], int] = {}
    warnings: List[Dict[str, Any]] = []
    section: Optional[str] = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        header = _SECTION.match(line)
        if header:
            section = header.group(1).lower()
            if section not in SCHEMA:
                raise UnknownKeyError(f"unknown section [{section}]", line_no)
            continue
        assignment = _ASSIGNMENT.match(line)
        if not assignment:
            raise ConfigError(f"expected 'key = value' or '[section]', got {line!r}", line_no)
        if section is None:
            raise ConfigError("key outside of any [section]", line_no)
        key, value = assignment.group(1).lower(), assignment.group(2).strip()
        if key not in SCHEMA[section]:
            raise UnknownKeyError(f"unknown key '{key}' in [{section}]", line_no)
        parser, _ = SCHEMA[section][key]
        try:
            values[section][key] = parser(value)
        except (ValueError, TypeError) as exc:
            raise InvalidValueError(f"invalid value for {section}.{key} = {value!r}: {exc}", line_no) from None
        if (section, key) in seen:
            warnings.append({
                'timestamp': datetime.now().isoformat(),
                'action': 'duplicate_key',
                'section': section,
                'key': key,
                'line': line_no,
                'previous_line': seen[(section, key)],
            })
        seen[(section, key)] = line_no

    return ExperimentConfig(values, source_path, warnings)


def parse_config(path: str) -> ExperimentConfig:
    """Parse an experiment config file; every key not given keeps its documented default."""
    config_file = Path(path)
    if not config_file.exists():
        raise MissingPathError(f"experiment config not found: {path}")
    return parse_config_text(config_file.read_text(encoding="utf-8"), str(config_file))


def check_paths(cfg: ExperimentConfig) -> None:
    """Paths must exist when a run starts."""
    data_dir = cfg.dataset_dir
    if data_dir is None:
        raise MissingPathError(f"no [dataset] dir given and {DATA_DIR_ENV} is not set")
    if not data_dir.is_dir():
        raise MissingPathError(f"dataset directory does not exist: {data_dir}")
    checkpoint = cfg.teacher_checkpoint
    if checkpoint is not None and not checkpoint.exists():
        raise MissingPathError(f"teacher checkpoint does not exist: {checkpoint}")
