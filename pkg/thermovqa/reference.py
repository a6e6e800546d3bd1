"""
Published accuracies of the hosted VQA models on the battery test set and
replay transcripts reproducing them.
"""

from typing import Dict, List, Optional, Sequence, Tuple
import logging

from thermovqa.metrics_report import MetricsRow, MetricsTable
from thermovqa.utils import ConfigurationError

LOGGER = logging.getLogger(__name__)

REFERENCE_TRIALS = {'chatgpt-4o': 5, 'llava-13b': 3, 'blip-2': 3}

# backend -> per prompt 1..5: (all, normal, anomaly, overheating,
# reflection, spatial tape, range, %unsure)
_PUBLISHED: Dict[str, Tuple[Tuple[float, ...], ...]] = {
    'chatgpt-4o': (
        (73.0, 42.2, 98.2, 98.5, 100.0, 95.0, 5.0, 1.0),
        (82.3, 63.0, 98.2, 100.0, 100.0, 92.5, 5.0, 0.0),
        (71.0, 37.8, 98.2, 100.0, 100.0, 92.5, 16.7, 0.7),
        (79.7, 60.0, 95.8, 98.5, 100.0, 85.0, 6.7, 2.7),
        (82.3, 75.6, 87.9, 100.0, 100.0, 50.0, 5.0, 0.0),
    ),
    'llava-13b': (
        (58.3, 11.1, 97.0, 92.3, 100.0, 100.0, 3.3, 9.4),
        (55.6, 2.5, 99.0, 97.4, 100.0, 100.0, 1.7, 1.7),
        (68.9, 93.8, 48.5, 10.3, 100.0, 33.3, 10.0, 0.0),
        (63.3, 29.6, 90.9, 87.2, 100.0, 83.3, 3.3, 41.7),
        (52.2, 6.2, 89.9, 97.4, 86.1, 83.3, 10.0, 0.0),
    ),
    'blip-2': (
        (55.0, 0.0, 100.0, 100.0, 100.0, 100.0, 0.0, 0.0),
        (55.0, 0.0, 100.0, 100.0, 100.0, 100.0, 0.0, 0.0),
        (55.0, 0.0, 100.0, 100.0, 100.0, 100.0, 0.0, 0.0),
        (55.0, 0.0, 100.0, 100.0, 100.0, 100.0, 0.0, 0.0),
        (88.3, 74.1, 100.0, 100.0, 100.0, 100.0, 0.0, 0.0),
    ),
}

# (backend, prompt) -> (all, normal, anomaly) after cropping the background
_PUBLISHED_PREPROCESSED: Dict[Tuple[str, int], Tuple[float, float, float]] = {
    ('chatgpt-4o', 1): (83.0, 65.2, 97.6),
    ('chatgpt-4o', 3): (82.3, 63.7, 97.6),
    ('llava-13b', 1): (63.9, 49.4, 75.8),
    ('llava-13b', 2): (56.7, 7.4, 97.0),
    ('llava-13b', 4): (68.3, 50.6, 82.8),
    ('llava-13b', 5): (51.1, 6.2, 87.9),
}

NORMAL_TEXT = ("a) Yes\n\nThe thermal distribution is even and smooth, and "
               "the temperature stays below the threshold.")
ANOMALY_TEXT = ("b) No\n\nThe image shows an uneven thermal distribution or "
                "a temperature above the threshold.")
UNSURE_TEXT = ("It is not possible to determine from the image alone "
               "whether the battery is normal.")


def reference_row(backend_id: str, prompt_id: int) -> MetricsRow:
    """
    Published metrics of one backend and prompt.

    Raises
    ------
    ConfigurationError
        If the pair was not evaluated
    """
    values = _PUBLISHED.get(backend_id)
    if values is None or not 1 <= int(prompt_id) <= len(values):
        raise ConfigurationError(
            'reference', f"no published results for backend "
            f"{backend_id!r}, prompt {prompt_id}; available backends: "
            f"{', '.join(_PUBLISHED)}")
    (acc_all, normal, anomaly, overheating, reflection, tape, spread,
     unsure) = values[int(prompt_id) - 1]
    return MetricsRow(
        backend_id=backend_id,
        prompt_id=int(prompt_id),
        avg_acc_all=acc_all,
        avg_acc_normal=normal,
        avg_acc_anomaly=anomaly,
        avg_acc_overheating=overheating,
        avg_acc_reflection=reflection,
        avg_acc_spatial_tape=tape,
        range_acc_all=spread,
        pct_unsure=unsure,
        trials=REFERENCE_TRIALS[backend_id],
    )


def reference_table() -> MetricsTable:
    return MetricsTable([reference_row(b, p)
                         for b, rows in _PUBLISHED.items()
                         for p in range(1, len(rows) + 1)])


def preprocessing_reference() -> Tuple[MetricsTable, MetricsTable]:
    """
    Published accuracies before and after background removal, for the
    pairs that were re-evaluated.
    """
    before, after = [], []
    for (backend_id, prompt_id), values in _PUBLISHED_PREPROCESSED.items():
        before.append(reference_row(backend_id, prompt_id))
        acc_all, normal, anomaly = values
        after.append(MetricsRow(backend_id, prompt_id, avg_acc_all=acc_all,
                                avg_acc_normal=normal,
                                avg_acc_anomaly=anomaly,
                                trials=REFERENCE_TRIALS[backend_id]))
    return MetricsTable(before), MetricsTable(after)


def _correct_per_trial(accuracy: float, size: int,
                       trials: int) -> List[int]:
    total = int(round(accuracy / 100. * size * trials))
    base, extra = divmod(total, trials)
    return [base + (1 if t < extra else 0) for t in range(trials)]


def synthesize_transcript(
        row: MetricsRow,
        entries: Sequence,
        trials: Optional[int] = None,
        source_id: Optional[str] = None) -> List[dict]:
    """
    Builds a replay transcript whose answers reproduce a row's per-class
    accuracies.

    For every class, round(accuracy * images * trials) answers are
    correct, spread over trials as evenly as possible. Then
    round(pct_unsure * records / 100) of the answers scored as anomaly are
    phrased as unsure answers, which leaves the binary scoring unchanged.

    Parameters
    ----------
    row : MetricsRow
        Target accuracies; a missing anomaly subclass uses the anomaly
        accuracy
    entries : Sequence[ManifestEntry]
        Images of the dataset
    trials : Optional[int]
        Trials per image, defaults to the row's trials
    source_id : Optional[str]
        Backend id written into the transcript, defaults to the row's

    Returns
    -------
    List[dict]
        Transcript lines {backend_id, prompt_id, image_id, trial, text}
    """
    trials = trials or row.trials or 1
    source_id = source_id or row.backend_id
    by_class: Dict[str, list] = {}
    for entry in entries:
        by_class.setdefault(entry.scene_class.value, []).append(entry)

    answers: Dict[Tuple[str, int], str] = {}
    for scene_class, members in by_class.items():
        accuracy = getattr(row, f"avg_acc_{scene_class}", None)
        if accuracy is None:
            accuracy = row.avg_acc_anomaly if scene_class != 'normal' \
                else None
        if accuracy is None:
            raise ConfigurationError(
                'reference', f"{row.backend_id} prompt {row.prompt_id} has "
                f"no accuracy for {scene_class}")
        is_anomaly = scene_class != 'normal'
        right = ANOMALY_TEXT if is_anomaly else NORMAL_TEXT
        wrong = NORMAL_TEXT if is_anomaly else ANOMALY_TEXT
        offset = 0
        for trial, correct in enumerate(
                _correct_per_trial(accuracy, len(members), trials)):
            chosen = {(offset + k) % len(members) for k in range(correct)}
            offset += correct
            for index, entry in enumerate(members):
                answers[(entry.image_id, trial)] = \
                    right if index in chosen else wrong

    keys = sorted(answers, key=lambda k: (k[1], k[0]))
    unsure = int(round((row.pct_unsure or 0.) * len(keys) / 100.))
    candidates = [k for k in keys if answers[k] == ANOMALY_TEXT]
    if unsure > len(candidates):
        LOGGER.warning(f"{row.backend_id} prompt {row.prompt_id}: only "
                       f"{len(candidates)} anomaly answers can be phrased "
                       f"as unsure, {unsure} requested")
    for key in candidates[:unsure]:
        answers[key] = UNSURE_TEXT

    return [{
        'backend_id': source_id,
        'prompt_id': row.prompt_id,
        'image_id': image_id,
        'trial': trial,
        'text': answers[(image_id, trial)],
    } for image_id, trial in sorted(answers)]
