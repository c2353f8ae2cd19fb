import os
import logging
import functools
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

from MrcEntityAudit.errors import ConfigError

logger = logging.getLogger(__name__)

DATA_DIR_ENV = 'MRC_AUDIT_DATA_DIR'
PACKAGED_DATA_DIR = Path(__file__).resolve().parent / 'data'

ENTITY_TYPE_NAMES = ('PER', 'ORG', 'GPE')
SOURCE_NAMES = ('InDistName', 'DBName', 'RandStr')

run_defaults = {
    "perturb": {
        "entity_types": ["PER", "ORG", "GPE"],
        "source": "DBName",
        "name_bank": "us",
        "n_seeds": 5,
        "base_seed": 0,
        "output_dir": "perturbed",
        "failure_budget": 0.01,
        "jobs": 1,
        "dataset_format": "mrqa_jsonl",
        "dedup_pools": True,
        "emit_oracle": False,
    },
    "sweep": {
        "name_bank": "us",
        "sample_names": 1500,
        "base_seed": 0,
        "output_dir": "sweep",
        "failure_budget": 0.01,
        "jobs": 1,
        "dataset_format": "mrqa_jsonl",
    },
    "evaluate": {
        "report_formats": ["json", "tsv"],
        "output_dir": "reports",
        "condition": "perturbed",
        "dataset_format": "plain_jsonl",
        "n_resamples": 10000,
        "significance_seed": 0,
    },
    "audit": {
        "k": 30,
        "entity_types": ["PER", "ORG", "GPE"],
        "audit_seed": 0,
        "output_dir": "audit",
        "dataset_format": "mrqa_jsonl",
    },
    "mask": {
        "policy": "span",
        "seed": 0,
        "mask_ratio": 0.15,
        "geometric_p": 0.2,
        "max_span": 10,
        "entity_prob": 0.5,
        "entity_mode": "event",
    },
    "stats": {
        "name_bank": "us",
        "output_dir": "stats",
        "dataset_format": "mrqa_jsonl",
    },
    "build-lists": {
        "nnp_threshold": 0.9,
        "output_dir": ".",
    },
}


@functools.lru_cache()
def get_run_defaults(command):
    return run_defaults[command]


def get_data_dir(data_dir=None):
    """Finds the directory holding name banks and other shared resources,
        trying first the explicit argument, then the environment variable,
        then the per-user folder and finally the sample data shipped with the package.

    Args:
        data_dir (str, optional): The known location of the data directory. Defaults to None.

    Returns:
        Path: The resolved data directory.
    """
    user_data_dir = Path(os.path.expanduser('~')) / '.mrc-entity-audit'
    if data_dir:
        logger.info('Using data directory from Method 0: Path from argument | %s', data_dir)
        resolved = Path(data_dir)
    elif os.environ.get(DATA_DIR_ENV):
        resolved = Path(os.environ[DATA_DIR_ENV])
        logger.info('Using data directory from Method 1: Environment variable %s | %s', DATA_DIR_ENV, resolved)
    elif user_data_dir.is_dir():
        resolved = user_data_dir
        logger.info('Using data directory from Method 2: Default path ~/.mrc-entity-audit | %s', resolved)
    else:
        resolved = PACKAGED_DATA_DIR
        logger.info('Using data directory from Method 3: Packaged sample data | %s', resolved)

    if not resolved.is_dir():
        raise FileNotFoundError(f'Data directory not found | {resolved}')
    return resolved


def get_name_bank_path(name_bank, data_dir=None):
    """Resolves a name bank given either a directory path or an origin tag.

    Args:
        name_bank (str): A directory with the bank files, or a tag such as `us` or `china`
            looked up under `<data_dir>/namebanks/<tag>`.
        data_dir (str, optional): Passed to get_data_dir when name_bank is a tag.

    Returns:
        Path: The bank directory.
    """
    candidate = Path(name_bank)
    if candidate.is_dir():
        return candidate
    if os.sep in str(name_bank) or candidate.suffix:
        raise FileNotFoundError(f'Name bank directory not found | {candidate}')
    tagged = get_data_dir(data_dir) / 'namebanks' / str(name_bank).lower()
    if not tagged.is_dir():
        raise FileNotFoundError(f'Name bank not found for origin tag `{name_bank}` | {tagged}')
    return tagged


def load_config_file(path):
    """Reads a TOML config file. Tables are named after subcommands and hold
        the long flag names with `-` replaced by `_`.

    Args:
        path (str): Location of the config file.

    Returns:
        dict: The parsed tables.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f'Config file not found | {path}')
    try:
        with open(path, 'rb') as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'Unreadable config file | {path} | {e}') from e


def merge_settings(command, file_values=None, cli_values=None):
    """Defaults, then config-file values, then flags that were actually given."""
    settings = dict(get_run_defaults(command))
    settings.update((file_values or {}).get(command, {}))
    settings.update({key: value for key, value in (cli_values or {}).items() if value is not None})
    return settings


@dataclass
class RunConfig:
    """Settings of a perturbation run."""
    datasets: list
    entity_types: list = field(default_factory=lambda: list(ENTITY_TYPE_NAMES))
    source: str = 'DBName'
    name_bank: str = 'us'
    n_seeds: int = 5
    base_seed: int = 0
    output_dir: str = 'perturbed'
    failure_budget: float = 0.01
    report_formats: list = field(default_factory=lambda: ['json', 'tsv'])
    annotations: str = None
    annotation_bank: str = None
    dataset_format: str = 'mrqa_jsonl'
    data_dir: str = None
    jobs: int = 1
    dedup_pools: bool = True
    emit_oracle: bool = False

    def __post_init__(self):
        if isinstance(self.datasets, (str, os.PathLike)):
            self.datasets = [self.datasets]
        if isinstance(self.entity_types, str):
            self.entity_types = [part.strip() for part in self.entity_types.split(',') if part.strip()]
        self.entity_types = [etype.upper() for etype in self.entity_types]
        self.validate()

    def validate(self):
        if not self.datasets:
            raise ConfigError('At least one dataset path is required')
        if int(self.n_seeds) < 1:
            raise ConfigError(f'n_seeds must be at least 1, got {self.n_seeds}')
        unknown = set(self.entity_types) - set(ENTITY_TYPE_NAMES)
        if not self.entity_types or unknown:
            raise ConfigError(f'Entity types must be a non-empty subset of {ENTITY_TYPE_NAMES}, got {self.entity_types}')
        if self.source not in SOURCE_NAMES:
            raise ConfigError(f'Unknown perturbation source `{self.source}`, expected one of {SOURCE_NAMES}')
        if not 0.0 <= float(self.failure_budget) <= 1.0:
            raise ConfigError(f'failure_budget must lie in [0, 1], got {self.failure_budget}')
        if int(self.jobs) < 1:
            raise ConfigError(f'jobs must be at least 1, got {self.jobs}')

    @classmethod
    def from_settings(cls, settings):
        known = cls.__dataclass_fields__
        return cls(**{key: value for key, value in settings.items() if key in known})
