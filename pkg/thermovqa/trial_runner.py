"""
Runs every (image, prompt, backend, trial) query of a plan and appends the
outcomes to a JSON-lines log that can be resumed after a crash.
"""

from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple
import json
import logging
import os

from thermovqa.answer_parser import (
    Verdict, BinaryLabel, parse_verdict, score_verdict
)
from thermovqa.oracle_detector import OracleParams
from thermovqa.prompting import PromptParams, PROMPT_IDS, render
from thermovqa.thermal_core import ColormapSpec
from thermovqa.utils import ConfigurationError
from thermovqa.vqa_backend import (
    Backend, BackendConfig, ImageInput, TransportError, create_backend
)

LOGGER = logging.getLogger(__name__)

STATUS_OK = 'ok'
STATUS_FAILED = 'failed'
VOLATILE_FIELDS = ('latency', 'timestamp')

TrialKey = Tuple[str, int, str, int]


@dataclass(frozen=True)
class RunPlan:
    """
    Grid of queries to run.

    Attributes
    ----------
    manifest_path : Path
        Dataset manifest
    prompt_ids : Tuple[int, ...]
        Prompts to use
    backends : Tuple[BackendConfig, ...]
        Backends to query
    output_log_path : Path
        JSON-lines log, appended to
    trials_per_backend : Mapping[str, int]
        Trials per (image, prompt) for each backend id, backends missing
        here use their default (5 for chat backends, 3 otherwise)
    concurrency_cap : int
        Number of queries running at once
    prompt_params : PromptParams
        Values substituted into the prompts
    """
    manifest_path: Path
    prompt_ids: Tuple[int, ...]
    backends: Tuple[BackendConfig, ...]
    output_log_path: Path
    trials_per_backend: Mapping[str, int] = field(default_factory=dict)
    concurrency_cap: int = 4
    prompt_params: PromptParams = field(default_factory=PromptParams)

    def __post_init__(self):
        object.__setattr__(self, 'manifest_path', Path(self.manifest_path))
        object.__setattr__(self, 'output_log_path',
                           Path(self.output_log_path))
        object.__setattr__(self, 'prompt_ids', tuple(self.prompt_ids))
        object.__setattr__(self, 'backends', tuple(self.backends))
        if not self.prompt_ids:
            raise ConfigurationError('run plan', "no prompts selected")
        unknown = [p for p in self.prompt_ids if p not in PROMPT_IDS]
        if unknown:
            raise ConfigurationError('run plan', f"unknown prompts {unknown}")
        if not self.backends:
            raise ConfigurationError('run plan', "no backends selected")
        ids = [b.id for b in self.backends]
        if len(set(ids)) != len(ids):
            raise ConfigurationError('run plan', f"duplicate backends {ids}")
        for backend_id, trials in self.trials_per_backend.items():
            if backend_id not in ids:
                raise ConfigurationError(
                    'run plan', f"trials given for unused backend "
                    f"{backend_id!r}")
            if trials < 1:
                raise ConfigurationError(
                    'run plan', f"{backend_id}: trials has to be >= 1")
        if self.concurrency_cap < 1:
            raise ConfigurationError('run plan', "concurrency has to be >= 1")

    def trials_for(self, backend: BackendConfig) -> int:
        return self.trials_per_backend.get(backend.id, backend.default_trials)


@dataclass(frozen=True)
class TrialRecord:
    image_id: str
    ground_truth_label: str
    prompt_id: int
    backend_id: str
    trial_index: int
    raw_text: Optional[str]
    verdict: Optional[Verdict]
    binary_prediction: Optional[BinaryLabel]
    latency: float
    timestamp: str
    image_class: Optional[str] = None
    attempt_count: int = 1
    status: str = STATUS_OK
    error: Optional[str] = None

    @property
    def key(self) -> TrialKey:
        return (self.image_id, self.prompt_id, self.backend_id,
                self.trial_index)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def to_json(self) -> dict:
        record = asdict(self)
        for name in ('verdict', 'binary_prediction'):
            if record[name] is not None:
                record[name] = record[name].value
        return record

    @classmethod
    def from_json(cls, record: dict) -> 'TrialRecord':
        record = dict(record)
        if record.get('verdict') is not None:
            record['verdict'] = Verdict(record['verdict'])
        if record.get('binary_prediction') is not None:
            record['binary_prediction'] = BinaryLabel(
                record['binary_prediction'])
        record['prompt_id'] = int(record['prompt_id'])
        record['trial_index'] = int(record['trial_index'])
        return cls(**record)


@dataclass
class RunSummary:
    log_path: Path
    written: int = 0
    resumed: int = 0
    failed: List[TrialRecord] = field(default_factory=list)


def now() -> str:
    return datetime.now(timezone.utc).isoformat()


def repair_log(path: Path) -> int:
    """
    Truncates a log back to its last complete line.

    Returns
    -------
    int
        Number of bytes removed
    """
    path = Path(path)
    if not path.exists():
        return 0
    with open(path, 'rb+') as fh:
        content = fh.read()
        if not content or content.endswith(b'\n'):
            return 0
        keep = content.rfind(b'\n') + 1
        fh.truncate(keep)
    removed = len(content) - keep
    LOGGER.warning(f"{path}: dropped a partial last line ({removed} bytes)")
    return removed


def read_log(path: Path) -> List[TrialRecord]:
    """
    Reads every well-formed record of a log; malformed lines are skipped
    with a warning.
    """
    records = []
    with open(path, 'r') as fh:
        for number, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(TrialRecord.from_json(json.loads(line)))
            except (ValueError, TypeError, KeyError) as error:
                LOGGER.warning(f"{path}:{number}: skipping malformed record "
                               f"({error})")
    return records


def canonical_records(records: Iterable[TrialRecord]) -> List[dict]:
    """
    Sorts records by (image, prompt, backend, trial) and drops the fields
    that differ between otherwise identical runs.
    """
    result = []
    for record in sorted(records, key=lambda r: r.key):
        entry = record.to_json()
        for name in VOLATILE_FIELDS:
            entry.pop(name, None)
        result.append(entry)
    return result


def _compact_log(path: Path, records: List[TrialRecord]):
    tmp = path.with_name(path.name + '.tmp')
    with open(tmp, 'w') as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(), sort_keys=True) + '\n')
    os.replace(tmp, path)


def _prepare_log(path: Path) -> Set[TrialKey]:
    """
    Rebuilds the completion index of an existing log.

    Failed entries and duplicates are removed from the file so that
    their keys are retried and every key occurs once.
    """
    if not path.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
        return set()
    repair_log(path)
    records = read_log(path)
    done: Dict[TrialKey, TrialRecord] = {}
    for record in records:
        if record.ok and record.key not in done:
            done[record.key] = record
    if len(done) != len(records):
        LOGGER.info(f"{path}: removing {len(records) - len(done)} failed or "
                    f"duplicate entries before resuming")
        _compact_log(path, list(done.values()))
    return set(done)


def run_trial(backend: Backend, prompt_text: str, image: ImageInput,
              label: str, image_class: Optional[str],
              prompt_id: int, trial_index: int) -> TrialRecord:
    """
    Queries the backend once and parses the answer.

    Transport failures become a failed record; configuration errors
    propagate.
    """
    backend_id = backend.config.id
    try:
        response = backend.query(prompt_text, image, prompt_id, trial_index)
    except TransportError as error:
        return TrialRecord(
            image_id=image.image_id, ground_truth_label=label,
            prompt_id=prompt_id, backend_id=backend_id,
            trial_index=trial_index, raw_text=None, verdict=None,
            binary_prediction=None, latency=0., timestamp=now(),
            image_class=image_class, attempt_count=error.attempts,
            status=STATUS_FAILED, error=str(error))
    verdict = parse_verdict(response.text)
    LOGGER.debug(f"{backend_id} p{prompt_id} {image.image_id} "
                 f"t{trial_index}: {verdict.value}")
    return TrialRecord(
        image_id=image.image_id, ground_truth_label=label,
        prompt_id=prompt_id, backend_id=backend_id, trial_index=trial_index,
        raw_text=response.text, verdict=verdict,
        binary_prediction=score_verdict(verdict), latency=response.latency,
        timestamp=now(), image_class=image_class,
        attempt_count=response.attempt_count)


def execute(
        plan: RunPlan,
        backends: Optional[Mapping[str, Backend]] = None,
        cmap: Optional[ColormapSpec] = None,
        oracle_params: OracleParams = OracleParams()) -> RunSummary:
    """
    Runs all missing trials of a plan.

    Parameters
    ----------
    plan : RunPlan
        Plan to execute
    backends : Optional[Mapping[str, Backend]]
        Ready backend instances by id, created from the plan's configs
        when missing
    cmap : Optional[ColormapSpec]
        Colormap used by the oracle backend
    oracle_params : OracleParams
        Thresholds used by the oracle backend

    Returns
    -------
    RunSummary
        Counts of written and resumed records, failed records

    Raises
    ------
    ConfigurationError
        If a backend is misconfigured, the run stops
    """
    from thermovqa.synth import read_manifest

    entries = read_manifest(plan.manifest_path)
    instances = dict(backends or {})
    for config in plan.backends:
        if config.id not in instances:
            instances[config.id] = create_backend(config, cmap,
                                                  oracle_params)
    prompts = {p: render(p, plan.prompt_params) for p in plan.prompt_ids}
    log_path = plan.output_log_path
    done = _prepare_log(log_path)

    tasks = []
    for entry in entries:
        image = ImageInput.from_path(entry.image_id, entry.image_path)
        label = 'anomaly' if entry.is_anomaly else 'normal'
        for prompt_id in plan.prompt_ids:
            for config in plan.backends:
                for trial in range(plan.trials_for(config)):
                    key = (entry.image_id, prompt_id, config.id, trial)
                    if key in done:
                        continue
                    tasks.append((instances[config.id], prompts[prompt_id],
                                  image, label, entry.scene_class.value,
                                  prompt_id, trial))

    summary = RunSummary(log_path, resumed=len(done))
    LOGGER.info(f"Plan: {len(entries)} images x {len(plan.prompt_ids)} "
                f"prompts x {len(plan.backends)} backends, {len(done)} "
                f"trials already logged, {len(tasks)} to run")
    if not tasks:
        return summary

    executor = ThreadPoolExecutor(max_workers=plan.concurrency_cap)
    try:
        futures = [executor.submit(run_trial, *task) for task in tasks]
        with open(log_path, 'a') as log:
            for future in as_completed(futures):
                record = future.result()
                log.write(json.dumps(record.to_json(), sort_keys=True) + '\n')
                log.flush()
                summary.written += 1
                if not record.ok:
                    summary.failed.append(record)
                    LOGGER.warning(f"Trial {record.key} failed: "
                                   f"{record.error}")
    finally:
        executor.shutdown(wait=True, cancel_futures=True)

    if summary.failed:
        LOGGER.error(f"{len(summary.failed)} of {len(tasks)} trials failed, "
                     f"run again to retry them")
    LOGGER.info(f"Wrote {summary.written} records to {log_path}")
    return summary
