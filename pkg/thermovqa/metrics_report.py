"""
Accuracy, stability, unsure-rate and AUC metrics over trial logs, and
their CSV / plain-text reports.
"""

from dataclasses import dataclass, fields, asdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
import pandas as pd
from sklearn.metrics import auc as area_under_curve, roc_curve

from thermovqa.answer_parser import BinaryLabel, Verdict
from thermovqa.trial_runner import TrialRecord, read_log
from thermovqa.utils import ThermoVQAError, ConfigurationError

LOGGER = logging.getLogger(__name__)

SUBSETS = ('all', 'normal', 'anomaly', 'overheating', 'reflection',
           'spatial_tape')
ANOMALY_CLASSES = ('overheating', 'reflection', 'spatial_tape')
AUC_METHODS = ('fraction_score', 'per_trial_binary')
# Images per class of the battery test set: normal, overheating,
# reflection, spatial tape
DEFAULT_CLASS_SIZES = (27, 13, 12, 8)
DECOMPOSITION_TOLERANCE = 0.1

METRIC_LABELS = {
    'avg_acc_all': 'Avg. Acc. (all)',
    'avg_acc_normal': 'Avg. Acc. (normal)',
    'avg_acc_anomaly': 'Avg. Acc. (anomaly)',
    'avg_acc_overheating': 'Avg. Acc. (overheating)',
    'avg_acc_reflection': 'Avg. Acc. (reflection)',
    'avg_acc_spatial_tape': 'Avg. Acc. (spatial tape)',
    'range_acc_all': 'Range Acc. (all)',
    'pct_unsure': '%Unsure (all)',
    'auc': 'AUC',
}


class MetricsError(ThermoVQAError):
    def __init__(self, reason: str):
        super().__init__()
        self.reason = reason

    def __str__(self):
        return f"Cannot compute metrics: {self.reason}"


def _frame(records: Iterable[TrialRecord]) -> pd.DataFrame:
    rows = [{
        'image_id': r.image_id,
        'label': r.ground_truth_label,
        'class': r.image_class or r.ground_truth_label,
        'prompt_id': r.prompt_id,
        'backend_id': r.backend_id,
        'trial': r.trial_index,
        'unsure': r.verdict is Verdict.UNSURE,
        'predicts_anomaly': r.binary_prediction is BinaryLabel.ANOMALY,
        'correct': r.binary_prediction is not None and
        r.binary_prediction.value == r.ground_truth_label,
    } for r in records if r.ok]
    return pd.DataFrame(rows, columns=[
        'image_id', 'label', 'class', 'prompt_id', 'backend_id', 'trial',
        'unsure', 'predicts_anomaly', 'correct'])


def _single_group(frame: pd.DataFrame):
    groups = frame[['backend_id', 'prompt_id']].drop_duplicates()
    if len(groups) > 1:
        raise MetricsError(
            f"records mix {len(groups)} (backend, prompt) pairs")


def _select(frame: pd.DataFrame, subset: str) -> pd.DataFrame:
    if subset == 'all':
        return frame
    if subset in ('normal', 'anomaly'):
        return frame[frame['label'] == subset]
    if subset in ANOMALY_CLASSES:
        return frame[frame['class'] == subset]
    raise ConfigurationError('metrics subset', f"unknown subset {subset!r}, "
                             f"use one of {', '.join(SUBSETS)}")


def accuracy(records: Sequence[TrialRecord],
             subset: str = 'all') -> Tuple[List[float], Optional[float]]:
    """
    Accuracy of binary predictions, per trial and averaged over trials.

    A prediction is correct when it matches the binary ground truth, so
    any anomaly subclass predicted as an anomaly counts as correct.

    Parameters
    ----------
    records : Sequence[TrialRecord]
        Successful records of one (backend, prompt) pair
    subset : str
        One of all, normal, anomaly, overheating, reflection, spatial_tape

    Returns
    -------
    List[float]
        Accuracy (%) of every trial, ordered by trial index
    Optional[float]
        Mean of the per-trial accuracies, None for an empty subset
    """
    frame = _frame(records)
    _single_group(frame)
    selected = _select(frame, subset)
    if selected.empty:
        return [], None
    per_trial = selected.groupby('trial')['correct'].mean() * 100.
    values = [float(v) for v in per_trial.sort_index()]
    return values, float(np.mean(values))


def range_across_trials(records: Sequence[TrialRecord],
                        subset: str = 'all') -> Optional[float]:
    """
    Difference between the best and the worst per-trial accuracy.
    """
    per_trial, _ = accuracy(records, subset)
    if not per_trial:
        return None
    return max(per_trial) - min(per_trial)


def pct_unsure(records: Sequence[TrialRecord]) -> Optional[float]:
    """
    Percentage of Unsure verdicts among the records.
    """
    frame = _frame(records)
    if frame.empty:
        return None
    return 100. * float(frame['unsure'].mean())


def _binary_roc_auc(labels: np.ndarray, scores: np.ndarray) -> float:
    if len(np.unique(labels)) < 2:
        raise MetricsError("AUC needs both normal and anomalous images")
    fpr, tpr, _ = roc_curve(labels, scores)
    return 100. * float(area_under_curve(fpr, tpr))


def auc(records: Sequence[TrialRecord],
        method: str = 'fraction_score') -> float:
    """
    Area under the ROC curve (%).

    `fraction_score` scores every image with the fraction of its trials
    predicting an anomaly and computes a single ROC over those scores.
    `per_trial_binary` computes the ROC of each trial's binary predictions
    and averages the areas.

    Parameters
    ----------
    records : Sequence[TrialRecord]
        Successful records of one (backend, prompt) pair
    method : str
        fraction_score or per_trial_binary

    Returns
    -------
    float
        AUC in percent

    Raises
    ------
    MetricsError
        If the records do not cover both classes
    """
    frame = _frame(records)
    _single_group(frame)
    if frame.empty:
        raise MetricsError("no records")
    frame = frame.assign(y=(frame['label'] == 'anomaly').astype(int),
                         score=frame['predicts_anomaly'].astype(float))
    if method == 'fraction_score':
        images = frame.groupby('image_id').agg(y=('y', 'first'),
                                                score=('score', 'mean'))
        return _binary_roc_auc(images['y'].to_numpy(),
                               images['score'].to_numpy())
    if method == 'per_trial_binary':
        areas = [_binary_roc_auc(trial['y'].to_numpy(),
                                 trial['score'].to_numpy())
                 for _, trial in frame.groupby('trial')]
        return float(np.mean(areas))
    raise ConfigurationError('AUC method', f"unknown method {method!r}, use "
                             f"one of {', '.join(AUC_METHODS)}")


@dataclass
class MetricsRow:
    """
    Metrics of one (backend, prompt) pair; percentages, None when the
    subset is empty.
    """
    backend_id: str
    prompt_id: int
    avg_acc_all: Optional[float] = None
    avg_acc_normal: Optional[float] = None
    avg_acc_anomaly: Optional[float] = None
    avg_acc_overheating: Optional[float] = None
    avg_acc_reflection: Optional[float] = None
    avg_acc_spatial_tape: Optional[float] = None
    range_acc_all: Optional[float] = None
    pct_unsure: Optional[float] = None
    auc: Optional[float] = None
    trials: int = 0
    records: int = 0
    failed: int = 0


@dataclass
class MetricsTable:
    rows: List[MetricsRow]

    def row(self, backend_id: str, prompt_id: int) -> MetricsRow:
        for row in self.rows:
            if row.backend_id == backend_id and row.prompt_id == prompt_id:
                return row
        raise KeyError((backend_id, prompt_id))

    def to_frame(self) -> pd.DataFrame:
        columns = [f.name for f in fields(MetricsRow)]
        frame = pd.DataFrame([asdict(r) for r in self.rows], columns=columns)
        metrics = list(METRIC_LABELS)
        frame[metrics] = frame[metrics].astype(float)
        return frame


def compute_row(records: Sequence[TrialRecord],
                auc_method: str = 'fraction_score',
                failed: int = 0) -> MetricsRow:
    frame = _frame(records)
    _single_group(frame)
    if frame.empty:
        raise MetricsError("no successful records")
    row = MetricsRow(str(frame['backend_id'].iloc[0]),
                     int(frame['prompt_id'].iloc[0]))
    for subset in SUBSETS:
        _, average = accuracy(records, subset)
        setattr(row, f"avg_acc_{subset}", average)
    row.range_acc_all = range_across_trials(records)
    row.pct_unsure = pct_unsure(records)
    try:
        row.auc = auc(records, auc_method)
    except MetricsError as error:
        LOGGER.warning(f"{row.backend_id} prompt {row.prompt_id}: {error}")
    row.trials = int(frame['trial'].nunique())
    row.records = len(frame)
    row.failed = failed
    return row


def compute_table(records: Sequence[TrialRecord],
                  auc_method: str = 'fraction_score') -> MetricsTable:
    """
    Computes one MetricsRow per (backend, prompt) pair.

    Failed records are left out of every metric and only counted.
    """
    groups: Dict[Tuple[str, int], List[TrialRecord]] = {}
    failures: Dict[Tuple[str, int], int] = {}
    for record in records:
        key = (record.backend_id, record.prompt_id)
        if record.ok:
            groups.setdefault(key, []).append(record)
        else:
            failures[key] = failures.get(key, 0) + 1
    rows = [compute_row(groups[key], auc_method, failures.get(key, 0))
            for key in sorted(groups)]
    return MetricsTable(rows)


def class_sizes(records: Iterable[TrialRecord]) -> Tuple[int, ...]:
    """
    Number of distinct images per class: normal, overheating, reflection,
    spatial tape.
    """
    frame = _frame(records)
    images = frame.drop_duplicates('image_id')
    counts = images['class'].value_counts()
    return tuple(int(counts.get(c, 0))
                 for c in ('normal',) + ANOMALY_CLASSES)


def decompose_check(
        row: MetricsRow,
        sizes: Sequence[int] = DEFAULT_CLASS_SIZES,
        tolerance: float = DECOMPOSITION_TOLERANCE) -> Dict[str, float]:
    """
    Verifies that the overall and anomaly accuracies are the size-weighted
    means of their parts.

    Parameters
    ----------
    row : MetricsRow
        Row to audit
    sizes : Sequence[int]
        Normal, overheating, reflection and spatial tape image counts
    tolerance : float
        Largest residual accepted

    Returns
    -------
    Dict[str, float]
        Absolute residual of the `all` and `anomaly` identities; an
        identity with missing inputs is left out

    Raises
    ------
    MetricsError
        If a residual exceeds the tolerance
    """
    n_normal, *n_classes = sizes
    n_anomaly = sum(n_classes)
    residuals = {}
    if None not in (row.avg_acc_all, row.avg_acc_normal, row.avg_acc_anomaly):
        expected = (n_normal * row.avg_acc_normal +
                    n_anomaly * row.avg_acc_anomaly) / (n_normal + n_anomaly)
        residuals['all'] = abs(row.avg_acc_all - expected)
    parts = [row.avg_acc_overheating, row.avg_acc_reflection,
             row.avg_acc_spatial_tape]
    if row.avg_acc_anomaly is not None and None not in parts:
        expected = sum(n * acc for n, acc in zip(n_classes, parts)) / \
            n_anomaly
        residuals['anomaly'] = abs(row.avg_acc_anomaly - expected)
    for name, residual in residuals.items():
        if residual > tolerance:
            raise MetricsError(
                f"{row.backend_id} prompt {row.prompt_id}: accuracy "
                f"({name}) differs by {residual:.3f} from its decomposition")
    return residuals


def cross_prompt_summary(table: MetricsTable) -> pd.DataFrame:
    """
    Mean and range (max - min) of the overall accuracy across prompts,
    per backend.
    """
    frame = table.to_frame().dropna(subset=['avg_acc_all'])
    grouped = frame.groupby('backend_id', sort=False)['avg_acc_all']
    summary = pd.DataFrame({
        'prompts': grouped.count(),
        'mean_acc_all': grouped.mean(),
        'range_acc_all': grouped.max() - grouped.min(),
    })
    summary.index.name = 'backend_id'
    return summary


def compare_tables(before: MetricsTable,
                   after: MetricsTable) -> pd.DataFrame:
    """
    Compares overall, normal and anomaly accuracy of the (backend, prompt)
    pairs present in both tables.

    The `better` column names the side with the higher accuracy, or
    `equal`.
    """
    rows = []
    for row_after in after.rows:
        try:
            row_before = before.row(row_after.backend_id,
                                    row_after.prompt_id)
        except KeyError:
            continue
        for metric in ('avg_acc_all', 'avg_acc_normal', 'avg_acc_anomaly'):
            value_before = getattr(row_before, metric)
            value_after = getattr(row_after, metric)
            if value_before is None or value_after is None:
                better = None
            elif round(value_after, 1) > round(value_before, 1):
                better = 'after'
            elif round(value_after, 1) < round(value_before, 1):
                better = 'before'
            else:
                better = 'equal'
            rows.append({
                'backend_id': row_after.backend_id,
                'prompt_id': row_after.prompt_id,
                'metric': metric,
                'before': value_before,
                'after': value_after,
                'better': better,
            })
    comparison = pd.DataFrame(rows, columns=[
        'backend_id', 'prompt_id', 'metric', 'before', 'after', 'better'])
    comparison[['before', 'after']] = comparison[
        ['before', 'after']].astype(float)
    return comparison


def load_log(path: Union[str, Path],
             include_failed: bool = False) -> List[TrialRecord]:
    """
    Reads a trial log for reporting.

    Malformed lines are skipped with a warning; a key logged twice keeps
    its first successful record.

    Parameters
    ----------
    path : Union[str, Path]
        Log written by the trial runner
    include_failed : bool
        True if failed records without a later success are returned too

    Returns
    -------
    List[TrialRecord]
        Records, at most one per key
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError('trial log', f"{path} not found")
    best: Dict[tuple, TrialRecord] = {}
    for record in read_log(path):
        current = best.get(record.key)
        if current is None or (record.ok and not current.ok):
            best[record.key] = record
    records = list(best.values())
    if not include_failed:
        records = [r for r in records if r.ok]
    return records


def table_layout(table: MetricsTable) -> pd.DataFrame:
    """
    Metrics as rows, (backend, prompt) pairs as columns.
    """
    frame = table.to_frame().set_index(['backend_id', 'prompt_id'])
    frame = frame[list(METRIC_LABELS)].rename(columns=METRIC_LABELS)
    layout = frame.T
    layout.columns.names = ['Model', 'Prompt']
    return layout


def _format(value) -> str:
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return '-'
    return f"{value:.1f}"


def emit_report(
        table: MetricsTable,
        out_dir: Union[str, Path],
        fmt: str = 'both',
        comparison: Optional[pd.DataFrame] = None) -> List[Path]:
    """
    Writes the metrics tables.

    Produces `metrics.csv` (full precision, one row per backend and
    prompt) and `metrics.txt` (accuracy table rounded to 0.1), plus the
    AUC summary `auc.csv` / `auc.txt`, the cross-prompt summary and the
    before/after comparison when given.

    Parameters
    ----------
    table : MetricsTable
        Computed metrics
    out_dir : Union[str, Path]
        Directory receiving the files
    fmt : str
        csv, text or both
    comparison : Optional[pd.DataFrame]
        Output of compare_tables

    Returns
    -------
    List[Path]
        Written files
    """
    if fmt not in ('csv', 'text', 'both'):
        raise ConfigurationError('report format', f"unknown format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = table.to_frame()
    summary = cross_prompt_summary(table)
    auc_frame = frame[['backend_id', 'prompt_id', 'auc']]
    written = []

    if fmt in ('csv', 'both'):
        outputs = [('metrics.csv', frame), ('auc.csv', auc_frame),
                   ('summary.csv', summary.reset_index())]
        if comparison is not None:
            outputs.append(('comparison.csv', comparison))
        for name, data in outputs:
            data.to_csv(out_dir / name, index=False)
            written.append(out_dir / name)

    if fmt in ('text', 'both'):
        texts = [
            ('metrics.txt', table_layout(table).to_string(
                float_format=_format, na_rep='-')),
            ('auc.txt', auc_frame.rename(columns={'auc': 'AUC (%)'})
             .to_string(index=False, float_format=_format, na_rep='-')),
            ('summary.txt', summary.to_string(float_format=_format)),
        ]
        if comparison is not None:
            texts.append(('comparison.txt', comparison.to_string(
                index=False, float_format=_format, na_rep='-')))
        for name, text in texts:
            (out_dir / name).write_text(text + '\n')
            written.append(out_dir / name)

    LOGGER.info(f"Report written to {out_dir}")
    return written
