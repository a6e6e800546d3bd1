"""
Tests of accuracy, stability, AUC and the report files
"""
from dataclasses import replace
import json

import numpy as np
import pandas as pd
import pytest

from thermovqa.metrics_report import (
    MetricsError, MetricsRow, accuracy, auc, class_sizes, compare_tables,
    compute_row, compute_table, cross_prompt_summary, decompose_check,
    emit_report, load_log, pct_unsure, range_across_trials
)
from thermovqa.reference import (
    preprocessing_reference, reference_row, reference_table,
    synthesize_transcript
)
from thermovqa.synth import DEFAULT_COUNTS
from thermovqa.utils import ConfigurationError

from utils import (
    build_record, make_entries, records_from_predictions,
    records_from_transcript
)


def small_records():
    """
    Two normal and two anomalous images, two trials; trial 1 gets one
    normal image wrong and answers one anomaly with a hedge.
    """
    answers = {
        0: ['a) Yes', 'a) Yes', 'b) No', 'b) No'],
        1: ['b) No', 'a) Yes', 'I cannot determine it.', 'b) No'],
    }
    labels = ['normal', 'normal', 'anomaly', 'anomaly']
    classes = ['normal', 'normal', 'overheating', 'spatial_tape']
    return [build_record(f"img_{i}", labels[i], text, trial=trial,
                         image_class=classes[i])
            for trial, texts in answers.items()
            for i, text in enumerate(texts)]


def test_accuracy_per_trial():
    records = small_records()
    assert accuracy(records) == ([100., 75.], 87.5)
    assert accuracy(records, 'normal') == ([100., 50.], 75.)
    assert accuracy(records, 'anomaly') == ([100., 100.], 100.)
    assert accuracy(records, 'reflection') == ([], None)
    assert range_across_trials(records) == 25.
    assert pct_unsure(records) == 12.5


def test_unknown_subset():
    with pytest.raises(ConfigurationError):
        accuracy(small_records(), 'cold')


def test_mixed_pairs_are_rejected():
    records = small_records() + [build_record('img_0', 'normal', 'yes',
                                              prompt_id=2)]
    with pytest.raises(MetricsError):
        accuracy(records)


def test_failed_records_are_ignored():
    records = small_records()
    failed = replace(records[0], image_id='img_9', status='failed',
                     verdict=None, binary_prediction=None, raw_text=None)
    assert accuracy(records + [failed]) == accuracy(records)
    table = compute_table(records + [failed])
    assert table.rows[0].failed == 1
    assert table.rows[0].records == 8


def brute_force_auc(labels, scores) -> float:
    positives = [s for y, s in zip(labels, scores) if y]
    negatives = [s for y, s in zip(labels, scores) if not y]
    wins = sum(1. if p > n else .5 if p == n else 0.
               for p in positives for n in negatives)
    return 100. * wins / (len(positives) * len(negatives))


def test_auc_matches_pairwise_comparison():
    rng = np.random.default_rng(0)
    for _ in range(120):
        images = int(rng.integers(2, 9))
        trials = int(rng.integers(1, 4))
        labels = rng.integers(0, 2, size=images)
        labels[:2] = [0, 1]
        predictions = rng.integers(0, 2, size=(trials, images))
        records = records_from_predictions(labels, predictions)

        scores = predictions.mean(axis=0)
        assert auc(records, 'fraction_score') == \
            pytest.approx(brute_force_auc(labels, scores), abs=1e-9)

        balanced = []
        for row in predictions:
            tpr = row[labels == 1].mean()
            tnr = 1. - row[labels == 0].mean()
            balanced.append(100. * (tpr + tnr) / 2)
        assert auc(records, 'per_trial_binary') == \
            pytest.approx(np.mean(balanced), abs=1e-9)


def test_auc_needs_both_classes():
    records = [build_record(f"img_{i}", 'normal', 'yes') for i in range(3)]
    with pytest.raises(MetricsError):
        auc(records)
    with pytest.raises(ConfigurationError):
        auc(small_records(), 'roc_convex_hull')


def replayed_row(backend_id: str, prompt_id: int) -> MetricsRow:
    entries = make_entries(DEFAULT_COUNTS)
    transcript = synthesize_transcript(reference_row(backend_id, prompt_id),
                                       entries)
    return compute_row(records_from_transcript(transcript, entries))


def test_published_rows_are_reproduced():
    blip = replayed_row('blip-2', 5)
    assert blip.avg_acc_all == pytest.approx(88.3, abs=0.1)
    assert blip.avg_acc_normal == pytest.approx(74.1, abs=0.1)
    assert blip.trials == 3

    chatgpt = replayed_row('chatgpt-4o', 2)
    assert chatgpt.avg_acc_all == pytest.approx(82.3, abs=0.1)
    assert chatgpt.avg_acc_normal == pytest.approx(63.0, abs=0.1)
    assert chatgpt.avg_acc_anomaly == pytest.approx(98.2, abs=0.1)
    assert chatgpt.trials == 5

    chatgpt = replayed_row('chatgpt-4o', 5)
    assert chatgpt.avg_acc_spatial_tape == pytest.approx(50., abs=0.1)
    assert chatgpt.avg_acc_anomaly == pytest.approx(87.9, abs=0.1)
    decompose_check(chatgpt, DEFAULT_COUNTS, tolerance=1e-6)


def test_unsure_share_is_reproduced():
    row = replayed_row('llava-13b', 4)
    assert row.pct_unsure == pytest.approx(41.7, abs=0.1)
    assert row.avg_acc_all == pytest.approx(63.3, abs=0.1)


def test_decomposition():
    residuals = decompose_check(reference_row('chatgpt-4o', 5))
    assert residuals['anomaly'] < 0.1
    broken = MetricsRow('model', 1, avg_acc_all=90., avg_acc_normal=50.,
                        avg_acc_anomaly=50.)
    with pytest.raises(MetricsError):
        decompose_check(broken)


def test_class_sizes():
    entries = make_entries((2, 1, 0, 3))
    transcript = [{'backend_id': 'm', 'prompt_id': 1, 'image_id': e.image_id,
                   'trial': 0, 'text': 'yes'} for e in entries]
    records = records_from_transcript(transcript, entries)
    assert class_sizes(records) == (2, 1, 0, 3)


def test_cross_prompt_summary():
    summary = cross_prompt_summary(reference_table())
    assert summary.loc['chatgpt-4o', 'mean_acc_all'] == \
        pytest.approx(77.66, abs=0.02)
    assert summary.loc['llava-13b', 'mean_acc_all'] == \
        pytest.approx(59.66, abs=0.02)
    assert summary.loc['blip-2', 'mean_acc_all'] == \
        pytest.approx(61.66, abs=0.02)
    assert summary['range_acc_all'].round(1).tolist() == [11.3, 16.7, 33.3]
    assert summary['prompts'].tolist() == [5, 5, 5]


def test_compare_tables():
    comparison = compare_tables(*preprocessing_reference())
    assert len(comparison) == 18
    indexed = comparison.set_index(['backend_id', 'prompt_id', 'metric'])
    assert indexed.loc[('llava-13b', 2, 'avg_acc_normal'), 'better'] == \
        'after'
    assert indexed.loc[('chatgpt-4o', 1, 'avg_acc_anomaly'), 'better'] == \
        'before'
    assert indexed.loc[('llava-13b', 5, 'avg_acc_normal'), 'better'] == \
        'equal'


def test_emit_report(tmp_path):
    table = compute_table(small_records())
    comparison = compare_tables(table, table)
    written = emit_report(table, tmp_path, 'both', comparison)
    names = sorted(path.name for path in written)
    assert names == ['auc.csv', 'auc.txt', 'comparison.csv',
                     'comparison.txt', 'metrics.csv', 'metrics.txt',
                     'summary.csv', 'summary.txt']
    metrics = pd.read_csv(tmp_path / 'metrics.csv')
    assert metrics.loc[0, 'avg_acc_all'] == 87.5
    assert pd.isna(metrics.loc[0, 'avg_acc_reflection'])
    text = (tmp_path / 'metrics.txt').read_text()
    assert 'Avg. Acc. (all)' in text
    assert '87.5' in text
    assert '%Unsure (all)' in text


def test_emit_report_format(tmp_path):
    table = compute_table(small_records())
    written = emit_report(table, tmp_path, 'text')
    assert all(path.suffix == '.txt' for path in written)
    with pytest.raises(ConfigurationError):
        emit_report(table, tmp_path, 'xlsx')


def test_load_log(tmp_path):
    path = tmp_path / 'log.jsonl'
    records = small_records()
    failed = replace(records[0], status='failed', verdict=None,
                     binary_prediction=None)
    lines = [failed] + records + [records[1]]
    path.write_text(''.join(
        json.dumps(r.to_json()) + '\n' for r in lines))
    loaded = load_log(path)
    assert len(loaded) == 8
    assert loaded[0] == records[0]
    with pytest.raises(ConfigurationError):
        load_log(tmp_path / 'missing.jsonl')
