#!/usr/bin/env python3

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import pandas as pd
from dotenv import find_dotenv, load_dotenv

from thermovqa.config import GlobalConfig, load_config, load_plan
from thermovqa.metrics_report import (
    AUC_METHODS, compare_tables, compute_table, cross_prompt_summary,
    emit_report, load_log, table_layout
)
from thermovqa.oracle_detector import evaluate_manifest
from thermovqa.preprocess import DEFAULT_INSET, preprocess_dataset
from thermovqa.prompting import PromptParams, render
from thermovqa.reference import reference_row, synthesize_transcript
from thermovqa.synth import (
    Background, DEFAULT_COUNTS, DEFAULT_HEIGHT, DEFAULT_WIDTH,
    generate_dataset, read_manifest, write_dataset
)
from thermovqa.trial_runner import execute
from thermovqa.utils import (
    ConfigurationError, ThermoVQAError, parse_int_list, write_jsonl
)

LOGGER = logging.getLogger('thermovqa')

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


class ArgumentParser(argparse.ArgumentParser):
    """
    Argument parser exiting with the configuration error code on misuse.
    """
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def cmd_synth(args, config: GlobalConfig) -> int:
    counts = parse_int_list(args.counts)
    background = Background(kind=args.background)
    scenes = generate_dataset(args.seed, counts, background,
                              config.colormap, args.width, args.height)
    manifest = write_dataset(scenes, args.out, args.save_fields,
                             config.colormap)
    print(manifest)
    return EXIT_OK


def cmd_preprocess(args, config: GlobalConfig) -> int:
    manifest = preprocess_dataset(args.manifest, args.out, config.colormap,
                                  args.inset)
    print(manifest)
    return EXIT_OK


def cmd_render_prompt(args, config: GlobalConfig) -> int:
    params = config.prompt_params
    if args.threshold is not None:
        params = PromptParams(params.colormap_names, params.t_min,
                              params.t_max, args.threshold)
    print(render(args.id, params))
    return EXIT_OK


def cmd_run(args, config: GlobalConfig) -> int:
    plan = load_plan(args.plan, config)
    summary = execute(plan, cmap=config.colormap,
                      oracle_params=config.oracle)
    print(f"{summary.log_path}: {summary.written} new records, "
          f"{summary.resumed} resumed, {len(summary.failed)} failed")
    return EXIT_RUNTIME if summary.failed else EXIT_OK


def cmd_report(args, config: GlobalConfig) -> int:
    records = load_log(args.log, include_failed=True)
    table = compute_table(records, args.auc_method)
    comparison = None
    if args.baseline is not None:
        baseline = compute_table(load_log(args.baseline), args.auc_method)
        comparison = compare_tables(baseline, table)
    out_dir = args.out or config.paths['reports']
    emit_report(table, out_dir, args.format, comparison)
    with pd.option_context('display.width', 200,
                           'display.max_columns', None):
        print(table_layout(table).round(1).to_string(na_rep='-'))
        print()
        print(cross_prompt_summary(table).round(2).to_string())
        if comparison is not None:
            print()
            print(comparison.round(1).to_string(index=False, na_rep='-'))
    return EXIT_OK


def cmd_oracle_eval(args, config: GlobalConfig) -> int:
    evaluation = evaluate_manifest(args.manifest, config.colormap,
                                   config.oracle)
    with pd.option_context('display.width', 200,
                           'display.max_rows', None):
        print(evaluation.scenes.round(2).to_string(index=False))
        print()
        print(evaluation.confusion.to_string())
    print(f"\nAgreement with labels: {evaluation.agreement:.1f}%")
    if args.out is not None:
        evaluation.scenes.to_csv(args.out, index=False)
    return EXIT_OK


def cmd_reference_transcript(args, config: GlobalConfig) -> int:
    row = reference_row(args.backend, args.prompt)
    entries = read_manifest(args.manifest)
    transcript = synthesize_transcript(row, entries, args.trials,
                                       args.source)
    write_jsonl(args.out, transcript)
    print(f"{args.out}: {len(transcript)} answers")
    return EXIT_OK


def create_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog='thermovqa',
        description='Zero-shot anomaly detection benchmark for battery '
                    'thermal images with VQA models',
    )
    parser.add_argument(
        '--config',
        type=Path,
        help='YAML file with colormap, oracle, prompt, paths and backends '
             'sections',
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument('-v', '--verbose', action='store_true',
                           help='Print debug messages')
    verbosity.add_argument('-q', '--quiet', action='store_true',
                           help='Print only warnings and errors')
    subparsers = parser.add_subparsers(dest='command', metavar='command',
                                       parser_class=ArgumentParser)
    subparsers.required = True

    synth = subparsers.add_parser(
        'synth', help='Generate a labeled synthetic dataset')
    synth.add_argument('--seed', type=int, required=True,
                       help='Master seed')
    synth.add_argument('--out', type=Path, required=True,
                       help='Output directory')
    synth.add_argument(
        '--counts',
        default=','.join(str(c) for c in DEFAULT_COUNTS),
        help='Normal, overheating, reflection and spatial tape scene counts')
    synth.add_argument('--background', choices=('noisy', 'solid'),
                       default='noisy')
    synth.add_argument('--width', type=int, default=DEFAULT_WIDTH)
    synth.add_argument('--height', type=int, default=DEFAULT_HEIGHT)
    synth.add_argument('--save-fields', action='store_true',
                       help='Also write ground-truth temperature CSVs')
    synth.set_defaults(func=cmd_synth)

    preprocess = subparsers.add_parser(
        'preprocess', help='Crop and rotate batteries out of the images')
    preprocess.add_argument('--manifest', type=Path, required=True)
    preprocess.add_argument('--out', type=Path, required=True)
    preprocess.add_argument('--inset', type=float, default=DEFAULT_INSET,
                            help='Fraction removed on every side')
    preprocess.set_defaults(func=cmd_preprocess)

    prompt = subparsers.add_parser('render-prompt',
                                   help='Print a rendered prompt')
    prompt.add_argument('--id', type=int, required=True,
                        help='Prompt number, 1 to 5')
    prompt.add_argument('--threshold', type=float,
                        help='Temperature threshold stated in the prompt')
    prompt.set_defaults(func=cmd_render_prompt)

    run = subparsers.add_parser('run', help='Execute or resume a run plan')
    run.add_argument('--plan', type=Path, required=True,
                     help='YAML file with plan, trials and backends '
                          'sections')
    run.set_defaults(func=cmd_run)

    report = subparsers.add_parser('report',
                                   help='Compute metrics of a trial log')
    report.add_argument('--log', type=Path, required=True)
    report.add_argument('--auc-method', choices=AUC_METHODS,
                        default='fraction_score')
    report.add_argument('--baseline', type=Path,
                        help='Log to compare against, e.g. a run on '
                             'images before preprocessing')
    report.add_argument('--out', type=Path,
                        help='Report directory, paths.reports of the '
                             'configuration by default')
    report.add_argument('--format', choices=('csv', 'text', 'both'),
                        default='both')
    report.set_defaults(func=cmd_report)

    oracle = subparsers.add_parser(
        'oracle-eval', help='Compare oracle verdicts with dataset labels')
    oracle.add_argument('--manifest', type=Path, required=True)
    oracle.add_argument('--out', type=Path,
                        help='CSV file receiving the per-scene reports')
    oracle.set_defaults(func=cmd_oracle_eval)

    transcript = subparsers.add_parser(
        'reference-transcript',
        help='Write a replay transcript reproducing published accuracies')
    transcript.add_argument('--backend', required=True,
                            help='chatgpt-4o, llava-13b or blip-2')
    transcript.add_argument('--prompt', type=int, required=True)
    transcript.add_argument('--manifest', type=Path, required=True)
    transcript.add_argument('--out', type=Path, required=True)
    transcript.add_argument('--trials', type=int,
                            help='Trials per image, published count by '
                                 'default')
    transcript.add_argument('--source',
                            help='Backend id written into the transcript')
    transcript.set_defaults(func=cmd_reference_transcript)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = create_parser().parse_args(argv)
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level,
                        format='%(levelname)s %(name)s: %(message)s')
    # API keys may come from a .env file, the environment takes precedence
    load_dotenv(find_dotenv(usecwd=True), override=False)
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except ConfigurationError as error:
        LOGGER.error(str(error))
        return EXIT_CONFIG
    except ThermoVQAError as error:
        LOGGER.error(str(error))
        return EXIT_RUNTIME


if __name__ == '__main__':
    sys.exit(main())
