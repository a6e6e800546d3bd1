from pathlib import Path
from types import SimpleNamespace
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from thermovqa.answer_parser import parse_verdict, score_verdict
from thermovqa.synth import (
    ManifestEntry, SceneClass, SCENE_CLASSES, generate_dataset, write_dataset
)
from thermovqa.trial_runner import TrialRecord
from thermovqa.vqa_backend import Backend, BackendConfig, BackendKind

DATA_SEED = 7
SMALL_COUNTS = (3, 2, 2, 2)
TIMESTAMP = '2024-01-01T00:00:00+00:00'


def make_dataset(out_dir: Path, counts: Sequence[int] = SMALL_COUNTS,
                 seed: int = DATA_SEED, **kwargs) -> Path:
    """
    Generates and writes a dataset.

    Parameters
    ----------
    out_dir : Path
        Output directory
    counts : Sequence[int]
        Scene count of every class
    seed : int
        Master seed
    kwargs : Dict
        Passed to write_dataset

    Returns
    -------
    Path
        Manifest path
    """
    return write_dataset(generate_dataset(seed, counts), out_dir, **kwargs)


def make_entries(counts: Sequence[int]) -> List[ManifestEntry]:
    """
    Builds manifest entries without image files.
    """
    entries = []
    for scene_class, count in zip(SCENE_CLASSES, counts):
        for index in range(count):
            image_id = f"{scene_class.value}_{index:03d}"
            entries.append(ManifestEntry(
                image_id, Path(f"{image_id}.png"), scene_class))
    return entries


def build_record(
        image_id: str,
        label: str,
        text: str,
        trial: int = 0,
        prompt_id: int = 1,
        backend_id: str = 'model',
        image_class: Optional[str] = None) -> TrialRecord:
    verdict = parse_verdict(text)
    return TrialRecord(
        image_id=image_id,
        ground_truth_label=label,
        prompt_id=prompt_id,
        backend_id=backend_id,
        trial_index=trial,
        raw_text=text,
        verdict=verdict,
        binary_prediction=score_verdict(verdict),
        latency=0.,
        timestamp=TIMESTAMP,
        image_class=image_class or label,
    )


def records_from_transcript(transcript: Iterable[dict],
                            entries: Sequence[ManifestEntry]
                            ) -> List[TrialRecord]:
    """
    Scores transcript answers as if a replay backend returned them.
    """
    by_id = {e.image_id: e for e in entries}
    records = []
    for line in transcript:
        entry = by_id[line['image_id']]
        records.append(build_record(
            entry.image_id,
            'anomaly' if entry.is_anomaly else 'normal',
            line['text'],
            trial=line['trial'],
            prompt_id=line['prompt_id'],
            backend_id=line['backend_id'],
            image_class=entry.scene_class.value,
        ))
    return records


def records_from_predictions(labels: Sequence[int],
                             predictions: np.ndarray) -> List[TrialRecord]:
    """
    Builds records from 0/1 labels and a (trials, images) array of 0/1
    predictions, 1 meaning anomaly.
    """
    records = []
    for trial, row in enumerate(predictions):
        for index, (label, predicted) in enumerate(zip(labels, row)):
            records.append(build_record(
                f"img_{index}",
                'anomaly' if label else 'normal',
                'b) No' if predicted else 'a) Yes',
                trial=trial,
            ))
    return records


class ScriptedBackend(Backend):
    """
    Backend answering with a function of (image_id, prompt_id, trial).
    """
    def __init__(self, backend_id: str,
                 answer: Callable[[str, int, int], str]):
        super().__init__(BackendConfig(id=backend_id,
                                       kind=BackendKind.ORACLE))
        self.answer = answer
        self.calls = 0

    def _answer(self, prompt_text, image, prompt_id, trial_index):
        self.calls += 1
        return self.answer(image.image_id, prompt_id, trial_index), 1


class FakeResponse:
    def __init__(self, status_code: int = 200, payload: Optional[Dict] = None,
                 text: str = ''):
        self.status_code = status_code
        self.payload = payload or {}
        self.text = text

    def json(self) -> Dict:
        return self.payload


class FakeSession:
    """
    Stand-in for requests.Session returning scripted responses.

    Items of `responses` are FakeResponse objects or exceptions, which
    are raised. With a `clock`, the time of every request is kept in
    `calls[i].at`.
    """
    def __init__(self, responses: Iterable,
                 clock: Optional[Callable[[], float]] = None):
        self.responses = list(responses)
        self.clock = clock
        self.calls = []

    def request(self, method: str, url: str, **kwargs):
        at = self.clock() if self.clock else None
        self.calls.append(SimpleNamespace(method=method, url=url, at=at,
                                          **kwargs))
        response = self.responses.pop(0)
        if isinstance(response, Exception):
            raise response
        return response


class FakeChatClient:
    """
    Stand-in for openai.OpenAI; `chat.completions.create` returns the
    scripted answers in turn.
    """
    def __init__(self, answers: Iterable):
        self.answers = list(answers)
        self.requests = []
        self.chat = SimpleNamespace(
            completions=SimpleNamespace(create=self._create))

    def _create(self, **body):
        self.requests.append(body)
        answer = self.answers.pop(0)
        if isinstance(answer, Exception):
            raise answer
        message = SimpleNamespace(content=answer)
        return SimpleNamespace(choices=[SimpleNamespace(message=message)])


class FakeClock:
    def __init__(self, start: float = 0.):
        self.now = start
        self.slept = []

    def __call__(self) -> float:
        return self.now

    def sleep(self, seconds: float):
        self.slept.append(seconds)
        self.now += seconds


def scene_class_of(image_id: str) -> SceneClass:
    return SceneClass(image_id.rsplit('_', 1)[0])
