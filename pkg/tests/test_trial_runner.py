"""
Tests of the trial runner: completeness, determinism and resuming
"""
import json

import pytest

from thermovqa.metrics_report import compute_table, load_log
from thermovqa.prompting import PROMPT_IDS
from thermovqa.trial_runner import (
    RunPlan, TrialRecord, canonical_records, execute, read_log, repair_log
)
from thermovqa.utils import ConfigurationError
from thermovqa.vqa_backend import (
    PRESETS, BackendConfig, BackendConfigError, TransportError
)

from utils import ScriptedBackend, build_record, scene_class_of


def oracle_plan(manifest, log, **kwargs) -> RunPlan:
    return RunPlan(
        manifest_path=manifest,
        prompt_ids=kwargs.pop('prompt_ids', PROMPT_IDS),
        backends=(PRESETS['oracle'],),
        output_log_path=log,
        **kwargs,
    )


def truthful(image_id, prompt_id, trial):
    if scene_class_of(image_id).is_anomaly:
        return 'b) No'
    return 'a) Yes'


def test_oracle_run_is_complete_and_deterministic(default_manifest,
                                                   tmp_path):
    first = execute(oracle_plan(default_manifest, tmp_path / 'first.jsonl'))
    second = execute(oracle_plan(default_manifest, tmp_path / 'second.jsonl'))
    assert first.written == second.written == 900
    assert not first.failed

    records = read_log(tmp_path / 'first.jsonl')
    assert len(records) == 900
    assert len({r.key for r in records}) == 900
    assert canonical_records(records) == \
        canonical_records(read_log(tmp_path / 'second.jsonl'))

    table = compute_table(records)
    assert len(table.rows) == 5
    for row in table.rows:
        assert row.avg_acc_all == 100.
        assert row.range_acc_all == 0.
        assert row.pct_unsure == 0.
        assert row.trials == 3


def test_resume_after_crash(default_manifest, tmp_path):
    plan = oracle_plan(default_manifest, tmp_path / 'full.jsonl',
                       prompt_ids=(1, 2))
    execute(plan)
    full = (tmp_path / 'full.jsonl').read_text().splitlines()

    crashed = tmp_path / 'crashed.jsonl'
    crashed.write_text('\n'.join(full[:150]) + '\n' + full[150][:40])
    summary = execute(oracle_plan(default_manifest, crashed,
                                  prompt_ids=(1, 2)))
    assert summary.resumed == 150
    assert summary.written == 210
    assert canonical_records(read_log(crashed)) == \
        canonical_records(read_log(tmp_path / 'full.jsonl'))

    again = execute(oracle_plan(default_manifest, crashed,
                                prompt_ids=(1, 2)))
    assert again.written == 0
    assert again.resumed == 360


def test_failed_trials_are_retried(default_manifest, tmp_path):
    log = tmp_path / 'log.jsonl'

    def flaky(image_id, prompt_id, trial):
        if image_id == 'reflection_000' and trial == 1:
            raise TransportError('scripted', 6, 'HTTP 503')
        return truthful(image_id, prompt_id, trial)

    config = BackendConfig(id='scripted', kind='oracle')
    plan = RunPlan(default_manifest, (1,), (config,), log,
                   trials_per_backend={'scripted': 2})
    summary = execute(plan, backends={'scripted': ScriptedBackend(
        'scripted', flaky)})
    assert len(summary.failed) == 1
    failed = summary.failed[0]
    assert failed.key == ('reflection_000', 1, 'scripted', 1)
    assert failed.attempt_count == 6
    assert failed.raw_text is None
    assert len(load_log(log)) == 119
    assert len(load_log(log, include_failed=True)) == 120

    healthy = ScriptedBackend('scripted', truthful)
    summary = execute(plan, backends={'scripted': healthy})
    assert healthy.calls == 1
    assert not summary.failed
    records = read_log(log)
    assert len(records) == 120
    assert all(r.ok for r in records)


def test_configuration_error_stops_the_run(default_manifest, tmp_path):
    def rejected(image_id, prompt_id, trial):
        raise BackendConfigError('scripted', 'HTTP 401')

    config = BackendConfig(id='scripted', kind='oracle')
    plan = RunPlan(default_manifest, (1,), (config,), tmp_path / 'log.jsonl',
                   concurrency_cap=1)
    with pytest.raises(BackendConfigError):
        execute(plan, backends={'scripted': ScriptedBackend('scripted',
                                                            rejected)})


def test_records_carry_verdicts(default_manifest, tmp_path):
    config = BackendConfig(id='scripted', kind='oracle', trials=1)

    def unsure(image_id, prompt_id, trial):
        return 'It is not possible to determine.'

    plan = RunPlan(default_manifest, (3,), (config,), tmp_path / 'log.jsonl')
    execute(plan, backends={'scripted': ScriptedBackend('scripted', unsure)})
    line = json.loads((tmp_path / 'log.jsonl').read_text().splitlines()[0])
    assert line['verdict'] == 'unsure'
    assert line['binary_prediction'] == 'anomaly'
    assert line['status'] == 'ok'
    assert line['prompt_id'] == 3
    assert set(line) >= {'image_id', 'ground_truth_label', 'backend_id',
                         'trial_index', 'raw_text', 'latency', 'timestamp'}


@pytest.mark.parametrize('kwargs', [
    {'prompt_ids': ()},
    {'prompt_ids': (1, 6)},
    {'backends': ()},
    {'backends': (PRESETS['oracle'], PRESETS['oracle'])},
    {'trials_per_backend': {'llava-13b': 3}},
    {'trials_per_backend': {'oracle': 0}},
    {'concurrency_cap': 0},
])
def test_invalid_plan(kwargs, tmp_path):
    values = {
        'manifest_path': tmp_path / 'manifest.jsonl',
        'prompt_ids': (1,),
        'backends': (PRESETS['oracle'],),
        'output_log_path': tmp_path / 'log.jsonl',
    }
    values.update(kwargs)
    with pytest.raises(ConfigurationError):
        RunPlan(**values)


def test_trials_per_backend():
    plan = RunPlan('m.jsonl', (1,), (PRESETS['oracle'], PRESETS['chatgpt-4o']),
                   'log.jsonl', trials_per_backend={'oracle': 1})
    assert plan.trials_for(PRESETS['oracle']) == 1
    assert plan.trials_for(PRESETS['chatgpt-4o']) == 5


def test_repair_log(tmp_path):
    path = tmp_path / 'log.jsonl'
    path.write_text('{"a": 1}\n{"b"')
    assert repair_log(path) == 4
    assert path.read_text() == '{"a": 1}\n'
    assert repair_log(path) == 0


def test_malformed_lines_are_skipped(tmp_path):
    path = tmp_path / 'log.jsonl'
    record = build_record('normal_000', 'normal', 'a) Yes')
    path.write_text(json.dumps(record.to_json()) + '\nnot json\n{}\n')
    records = read_log(path)
    assert records == [TrialRecord.from_json(record.to_json())]


def test_canonical_records_drop_volatile_fields():
    records = [build_record('b', 'normal', 'yes'),
               build_record('a', 'normal', 'no')]
    canonical = canonical_records(records)
    assert [entry['image_id'] for entry in canonical] == ['a', 'b']
    assert 'latency' not in canonical[0]
    assert 'timestamp' not in canonical[0]
