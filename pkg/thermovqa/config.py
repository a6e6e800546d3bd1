"""
YAML configuration files: the global configuration (colormap, oracle,
prompt, paths, backends) and run plans.

Example global configuration::

    colormap:
      names: [black, blue, cyan, yellow, orange, red, white]
      t_min: 25
      t_max: 60
    oracle:
      temp_threshold: 50
    backends:
      gpt:
        preset: chatgpt-4o
        requests_per_minute: 30

Example plan::

    plan:
      manifest: data/manifest.jsonl
      prompts: [1, 2, 3, 4, 5]
      backends: [oracle]
      concurrency: 4
      log: runs/log.jsonl
    trials:
      oracle: 3
"""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
import logging

import yaml

from thermovqa.oracle_detector import OracleParams
from thermovqa.prompting import PromptParams, DEFAULT_THRESHOLD
from thermovqa.thermal_core import (
    ColormapSpec, ColormapError, default_colormap
)
from thermovqa.trial_runner import RunPlan
from thermovqa.utils import ConfigurationError, parse_int_list
from thermovqa.vqa_backend import (
    BackendConfig, BackendConfigError, PRESETS
)

LOGGER = logging.getLogger(__name__)

SECRET_KEYS = ('api_key', 'key', 'token', 'secret', 'password')

# YAML key -> (BackendConfig field, type)
_BACKEND_KEYS = {
    'kind': ('kind', str),
    'endpoint': ('endpoint', str),
    'model': ('model_name', str),
    'auth_env': ('auth_env_var', str),
    'temperature': ('sampling_temperature', float),
    'timeout': ('timeout', float),
    'max_retries': ('max_retries', int),
    'requests_per_minute': ('requests_per_minute', int),
    'max_in_flight': ('max_in_flight', int),
    'prompt_field': ('prompt_field', str),
    'image_field': ('image_field', str),
    'supports_temperature': ('supports_temperature', bool),
    'version': ('model_version', str),
    'poll_interval': ('poll_interval', float),
    'backoff_factor': ('backoff_factor', float),
    'transcript': ('transcript_path', Path),
    'source': ('source_id', str),
    'trials': ('trials', int),
}
# BackendConfig fields where null means unset
_OPTIONAL_BACKEND_FIELDS = (
    'sampling_temperature', 'requests_per_minute', 'trials'
)
_ORACLE_KEYS = {
    'temp_threshold': float,
    'spot_deviation': float,
    'neighborhood_radius': int,
    'min_blob_area': int,
}


@dataclass
class GlobalConfig:
    colormap: ColormapSpec = field(default_factory=default_colormap)
    oracle: OracleParams = field(default_factory=OracleParams)
    prompt_threshold: float = DEFAULT_THRESHOLD
    paths: Dict[str, Path] = field(default_factory=lambda: {
        'data': Path('data'),
        'runs': Path('runs'),
        'reports': Path('reports'),
    })
    backends: Dict[str, BackendConfig] = field(
        default_factory=lambda: dict(PRESETS))

    @property
    def prompt_params(self) -> PromptParams:
        return PromptParams.from_colormap(self.colormap,
                                          self.prompt_threshold)

    def backend(self, backend_id: str) -> BackendConfig:
        try:
            return self.backends[backend_id]
        except KeyError:
            raise ConfigurationError(
                'backends', f"unknown backend {backend_id!r}, known: "
                f"{', '.join(sorted(self.backends))}")


def _read(path: Path) -> Dict[str, Any]:
    try:
        with open(path, 'r') as fh:
            document = yaml.safe_load(fh)
    except OSError as error:
        raise ConfigurationError(str(path), f"cannot read: {error}")
    except yaml.YAMLError as error:
        raise ConfigurationError(str(path), str(error).splitlines()[0])
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigurationError(str(path), "expected a mapping at the top "
                                 "level")
    return document


def _section(document: Dict, name: str) -> Dict[str, Any]:
    section = document.get(name) or {}
    if not isinstance(section, dict):
        raise ConfigurationError(name, "expected a mapping")
    return section


def _convert(value: Any, kind, where: str, base: Path,
             optional: bool = False):
    """
    Checks and converts a YAML scalar to the type of a setting.

    Optional numbers may be null, meaning unset. Relative paths are
    resolved against `base`.
    """
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(where, f"not a boolean: {value!r}")
        return value
    if kind is Path:
        if not isinstance(value, str):
            raise ConfigurationError(where, f"not a path: {value!r}")
        path = Path(value).expanduser()
        return path if path.is_absolute() else base / path
    if kind in (int, float):
        if value is None and optional:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(where, f"not a number: {value!r}")
        if kind is int and value != int(value):
            raise ConfigurationError(where, f"not an integer: {value!r}")
        return kind(value)
    if isinstance(value, (dict, list)) or value is None:
        raise ConfigurationError(where, f"not a string: {value!r}")
    return str(value)


def _id_list(value: Any, where: str) -> List[str]:
    if isinstance(value, str):
        return [part.strip() for part in value.split(',') if part.strip()]
    if isinstance(value, list):
        return [str(part) for part in value]
    raise ConfigurationError(where, f"expected a list, got {value!r}")


def _int_list(value: Any, where: str) -> List[int]:
    if isinstance(value, str):
        return parse_int_list(value)
    if isinstance(value, int) and not isinstance(value, bool):
        return [value]
    if isinstance(value, list):
        return [_convert(v, int, where, Path('.')) for v in value]
    raise ConfigurationError(where, f"expected a list, got {value!r}")


def parse_backend(backend_id: str, options: Dict[str, Any],
                  base: Path) -> BackendConfig:
    """
    Builds a BackendConfig from the options of a `backends.<id>` entry.

    `preset: <id>` starts from a built-in preset. API keys are never
    read from files, only from the variable named by `auth_env`.
    """
    where = f"backends.{backend_id}"
    if not isinstance(options, dict):
        raise ConfigurationError(where, "expected a mapping")
    options = dict(options)
    for key in options:
        if key in SECRET_KEYS:
            raise ConfigurationError(
                f"{where}.{key}", "secrets cannot be stored in "
                "configuration files, name an environment variable with "
                "auth_env instead")
    preset_id = options.pop('preset', None)
    values = {}
    for key, value in options.items():
        if key not in _BACKEND_KEYS:
            raise ConfigurationError(where, f"unknown option {key!r}")
        name, kind = _BACKEND_KEYS[key]
        values[name] = _convert(
            value, kind, f"{where}.{key}", base,
            optional=name in _OPTIONAL_BACKEND_FIELDS)
    try:
        if preset_id is not None:
            if preset_id not in PRESETS:
                raise BackendConfigError(
                    backend_id, f"unknown preset {preset_id!r}, available: "
                    f"{', '.join(PRESETS)}")
            return replace(PRESETS[preset_id], id=backend_id, **values)
        if 'kind' not in values:
            raise BackendConfigError(backend_id, "either kind or preset is "
                                     "required")
        return BackendConfig(id=backend_id, **values)
    except ValueError as error:
        raise BackendConfigError(backend_id, str(error))


def _backend_sections(document: Dict, base: Path
                      ) -> Dict[str, BackendConfig]:
    return {str(backend_id): parse_backend(str(backend_id), options, base)
            for backend_id, options in _section(document,
                                                'backends').items()}


def load_config(path: Optional[Union[str, Path]] = None) -> GlobalConfig:
    """
    Reads the global configuration.

    Parameters
    ----------
    path : Optional[Union[str, Path]]
        YAML file, None for the built-in defaults

    Returns
    -------
    GlobalConfig
        Configuration with the presets plus the configured backends
    """
    config = GlobalConfig()
    if path is None:
        return config
    path = Path(path)
    document = _read(path)
    base = path.parent

    unknown = set(document) - {'colormap', 'oracle', 'prompt', 'paths',
                               'backends'}
    if unknown:
        raise ConfigurationError(str(path), f"unknown sections "
                                 f"{sorted(unknown)}")

    colormap = _section(document, 'colormap')
    if colormap:
        names = _id_list(colormap.get('names', list(
            config.colormap.anchor_names)), 'colormap.names')
        try:
            config.colormap = ColormapSpec.from_names(
                names,
                _convert(colormap.get('t_min', 25.), float, 'colormap.t_min',
                         base),
                _convert(colormap.get('t_max', 60.), float, 'colormap.t_max',
                         base))
        except ColormapError as error:
            raise ConfigurationError('colormap', error.reason)

    oracle = _section(document, 'oracle')
    if oracle:
        values = {}
        for key, value in oracle.items():
            if key not in _ORACLE_KEYS:
                raise ConfigurationError('oracle', f"unknown option {key!r}")
            values[key] = _convert(value, _ORACLE_KEYS[key], f"oracle.{key}",
                                   base)
        config.oracle = OracleParams(**values)
    config.oracle.validate_for(config.colormap)

    prompt = _section(document, 'prompt')
    if 'threshold' in prompt:
        config.prompt_threshold = _convert(prompt['threshold'], float,
                                           'prompt.threshold', base)

    for key, value in _section(document, 'paths').items():
        config.paths[key] = _convert(value, Path, f"paths.{key}", base)

    config.backends.update(_backend_sections(document, base))
    LOGGER.debug(f"Loaded {path}: backends {', '.join(config.backends)}")
    return config


def load_plan(path: Union[str, Path],
              config: Optional[GlobalConfig] = None) -> RunPlan:
    """
    Reads a run plan.

    Relative paths are resolved against the plan's directory. Backends
    defined in the plan extend or override the global ones.

    Parameters
    ----------
    path : Union[str, Path]
        YAML file with a `plan` mapping and optional `trials` and
        `backends` mappings
    config : Optional[GlobalConfig]
        Global configuration providing backends and prompt values

    Returns
    -------
    RunPlan
        Validated plan
    """
    config = config or GlobalConfig()
    path = Path(path)
    document = _read(path)
    base = path.parent
    if 'plan' not in document:
        raise ConfigurationError(str(path), "missing plan section")
    unknown = set(document) - {'plan', 'trials', 'backends'}
    if unknown:
        raise ConfigurationError(str(path), f"unknown sections "
                                 f"{sorted(unknown)}")
    plan = _section(document, 'plan')
    unknown = set(plan) - {'manifest', 'backends', 'prompts', 'log',
                           'concurrency'}
    if unknown:
        raise ConfigurationError(f"{path} plan", f"unknown options "
                                 f"{sorted(unknown)}")
    for key in ('manifest', 'backends'):
        if key not in plan:
            raise ConfigurationError(f"{path} plan", f"missing {key!r}")

    backends = dict(config.backends)
    backends.update(_backend_sections(document, base))
    selected = []
    for backend_id in _id_list(plan['backends'], 'plan.backends'):
        if backend_id not in backends:
            raise ConfigurationError(
                f"{path} plan", f"unknown backend {backend_id!r}")
        selected.append(backends[backend_id])

    trials = {str(backend_id): _convert(value, int, f"trials.{backend_id}",
                                        base)
              for backend_id, value in _section(document, 'trials').items()}

    return RunPlan(
        manifest_path=_convert(plan['manifest'], Path, 'plan.manifest', base),
        prompt_ids=tuple(_int_list(plan.get('prompts', [1, 2, 3, 4, 5]),
                                   'plan.prompts')),
        backends=tuple(selected),
        output_log_path=_convert(plan.get('log', 'runs/log.jsonl'), Path,
                                 'plan.log', base),
        trials_per_backend=trials,
        concurrency_cap=_convert(plan.get('concurrency', 4), int,
                                 'plan.concurrency', base),
        prompt_params=config.prompt_params,
    )
