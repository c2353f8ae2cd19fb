"""Command line entry point.

Subcommands:

    perturb      perturbed test sets, plans and a manifest
    sweep        one test set per first name, for the name-bias analysis
    evaluate     exact match of prediction files, average-case and mean±std
    audit        audit sheets to fill in, and scores of filled ones
    mask         mask plans for continual pretraining
    stats        domain-shift and name-bias reports
    build-lists  NNP and vocabulary lists from PTB tag counts

Settings come from the run defaults, then the `--config` TOML file, then the flags.
Exit codes: 0 success, 1 data error (I/O errors included), 2 usage error.
"""
import sys
import json
import logging
import argparse
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd

from MrcEntityAudit import __version__
from MrcEntityAudit.annotate import EntityType, annotate_dataset, load_annotations, subset_counts, \
    answer_entity_tokens, passage_entity_tokens
from MrcEntityAudit.config import RunConfig, get_name_bank_path, load_config_file, merge_settings
from MrcEntityAudit.corpus import Dataset, load_dataset, write_dataset
from MrcEntityAudit.errors import AuditError, ConfigError, DatasetFormatError
from MrcEntityAudit import evaluator
from MrcEntityAudit.masker import MaskingPolicy, emit_masked_corpus
from MrcEntityAudit.namebank import PerturbationSource, build_indist_pool, build_ptb_lists, load_name_bank, \
    sample_first_names, write_word_list
from MrcEntityAudit.perturber import perturb_dataset, sweep_first_names, write_perturbed_dataset, \
    perturbed_file_stem, entity_types_label, oracle_predictions, load_perturbed_dataset, sample_audit, \
    write_audit_sheet, score_audit_sheet, read_plans
from MrcEntityAudit.seeding import keyed_rng

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s | %(levelname)s | %(name)s | %(message)s'


def _dataset_stem(path):
    return Path(path).name.split('.')[0]


def _plans_path(dataset_path):
    dataset_path = Path(dataset_path)
    name = dataset_path.name
    for suffix in ('.jsonl.gz', '.jsonl'):
        if name.endswith(suffix):
            return dataset_path.with_name(name[:-len(suffix)] + '.plans' + suffix)
    raise ConfigError(f'Perturbed dataset must be a .jsonl or .jsonl.gz file | {dataset_path}')


def _write_json(payload, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write('\n')
    return path


def _write_tsv(frame, path, index=False):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, sep='\t', index=index, lineterminator='\n')
    return path


def _library_versions():
    return {'mrc-entity-audit': __version__, 'numpy': np.__version__, 'pandas': pd.__version__}


def _load_bank(settings):
    return load_name_bank(get_name_bank_path(settings['name_bank'], settings.get('data_dir')))


def _perturbation_source(cfg, d, meta, bank):
    if cfg.source == 'InDistName':
        return PerturbationSource.indist(build_indist_pool(d, meta, dedup=cfg.dedup_pools))
    if cfg.source == 'DBName':
        return PerturbationSource.dbname(bank)
    return PerturbationSource.randstr()


# Commands

def cmd_perturb(cfg, progress=False):
    """Annotates each dataset, perturbs its perturbable subset under N seeds and writes
        the sets, their plans, the matching original subset and a manifest."""
    bank = _load_bank({'name_bank': cfg.name_bank, 'data_dir': cfg.data_dir})
    annotation_bank = _load_bank({'name_bank': cfg.annotation_bank, 'data_dir': cfg.data_dir}) \
        if cfg.annotation_bank else bank
    annotations = load_annotations(cfg.annotations) if cfg.annotations else None
    types = frozenset(EntityType(etype) for etype in cfg.entity_types)
    out_dir = Path(cfg.output_dir)

    manifest = {
        'command': 'perturb',
        'versions': _library_versions(),
        'source': cfg.source,
        'name_bank': bank.origin_tag,
        'annotation_bank': annotation_bank.origin_tag,
        'entity_types': sorted(etype.value for etype in types),
        'n_seeds': cfg.n_seeds,
        'base_seed': cfg.base_seed,
        'failure_budget': cfg.failure_budget,
        'datasets': [],
    }
    for dataset_path in cfg.datasets:
        d = load_dataset(dataset_path, format=cfg.dataset_format, progress=progress)
        meta = annotate_dataset(d, annotation_bank, annotations)
        src = _perturbation_source(cfg, d, meta, bank)
        stem = _dataset_stem(dataset_path)
        perturbed_sets = perturb_dataset(d, meta, src, types, n_seeds=cfg.n_seeds, base_seed=cfg.base_seed,
                                         failure_budget=cfg.failure_budget, jobs=cfg.jobs, progress=progress)

        kept_qids = {plan.qid for plan in perturbed_sets[0].plans}
        original_subset = Dataset(tuple(inst for inst in d if inst.qid in kept_qids), d.source_name)
        original_path = out_dir / f'{stem}.{entity_types_label(types)}.original.jsonl'
        write_dataset(original_subset, original_path)

        seeds = []
        for perturbed_set in perturbed_sets:
            dataset_file, plans_file = write_perturbed_dataset(perturbed_set, out_dir, stem)
            entry = {'index': perturbed_set.index, 'seed': perturbed_set.seed,
                     'dataset': dataset_file.name, 'plans': plans_file.name,
                     'question_replacements': perturbed_set.question_replacements}
            if cfg.emit_oracle:
                oracle_file = out_dir / f'{perturbed_file_stem(stem, perturbed_set)}.oracle.json'
                evaluator.write_predictions(oracle_predictions(perturbed_set), oracle_file)
                entry['oracle'] = oracle_file.name
            seeds.append(entry)

        failures = perturbed_sets[0].failures
        manifest['datasets'].append({
            'dataset': d.source_name,
            'path': str(dataset_path),
            'n_instances': len(d),
            'counts': subset_counts(meta),
            'n_perturbed': len(original_subset),
            'original_subset': original_path.name,
            'seeds': seeds,
            'failures': [failure._asdict() for failure in failures],
        })

    manifest_path = _write_json(manifest, out_dir / f'manifest.{cfg.source}.{entity_types_label(types)}.json')
    logger.info('Wrote manifest | %s', manifest_path)
    return 0


def cmd_sweep(settings):
    """Writes one PER-perturbed test set per first name, every answer first name replaced by that name."""
    if not settings.get('dataset'):
        raise ConfigError('sweep needs --dataset')
    bank = _load_bank(settings)
    annotations = load_annotations(settings['annotations']) if settings.get('annotations') else None
    d = load_dataset(settings['dataset'], format=settings['dataset_format'], progress=settings.get('progress', False))
    meta = annotate_dataset(d, bank, annotations)
    if settings.get('names'):
        names = list(settings['names'])
    else:
        names = sample_first_names(bank, int(settings['sample_names']), keyed_rng(settings['base_seed'], 'sweep'))

    out_dir = Path(settings['output_dir'])
    stem = _dataset_stem(settings['dataset'])
    files = {}
    for perturbed_set in sweep_first_names(d, meta, names, base_seed=settings['base_seed'],
                                           failure_budget=settings['failure_budget'], jobs=settings['jobs'],
                                           progress=settings.get('progress', False)):
        dataset_file, _ = write_perturbed_dataset(perturbed_set, out_dir, stem)
        files[perturbed_set.source.name] = dataset_file.name
    manifest = {'command': 'sweep', 'versions': _library_versions(), 'dataset': d.source_name,
                'name_bank': bank.origin_tag, 'base_seed': settings['base_seed'],
                'counts': subset_counts(meta), 'names': names, 'files': files}
    _write_json(manifest, out_dir / f'manifest.sweep.{stem}.json')
    logger.info('Wrote name sweep | %s | %d names', out_dir, len(names))
    return 0


def _entity_types_of(path, d, settings):
    """qid to entity types of a dataset: from its plans sidecar, else from annotating it when a bank is given."""
    try:
        plans_path = _plans_path(path)
    except ConfigError:
        plans_path = None
    if plans_path is not None and plans_path.is_file():
        _, plans = read_plans(plans_path)
        return {plan.qid: plan.entity_types() for plan in plans}
    if settings.get('name_bank'):
        annotations = load_annotations(settings['annotations']) if settings.get('annotations') else None
        return {item.qid: item.perturbable_types() for item in annotate_dataset(d, _load_bank(settings), annotations)}
    logger.warning('No plans sidecar and no --name-bank, per entity type EM skipped | %s', path)
    return None


def _evaluate_group(datasets, prediction_files, label, types_per_dataset):
    if len(prediction_files) != len(datasets):
        raise ConfigError(f'{label}: {len(prediction_files)} prediction files for {len(datasets)} datasets')
    reports, vectors = [], []
    for d, types, predictions_path in zip(datasets, types_per_dataset, prediction_files):
        predictions = evaluator.load_predictions(predictions_path)
        reports.append(evaluator.evaluate(d, predictions, entity_types=types))
        vectors.append(evaluator.correctness_vector(d, predictions))
    return reports, vectors


def _lexical_predictions(d):
    return {inst.qid: evaluator.lexical_baseline_predict(inst) for inst in d}


def _per_type_summary(groups):
    summary = {}
    for etype in EntityType:
        averages = []
        for reports in groups:
            scores = [report.per_type_em[etype.value] for report in reports if etype.value in report.per_type_em]
            if len(scores) == len(reports):
                averages.append(float(np.mean(scores)))
        if averages and len(averages) == len(groups):
            mean, std = evaluator.mean_std(averages)
            summary[etype.value] = {'mean': mean, 'std': std, 'formatted': evaluator.format_mean_std(mean, std)}
    return summary


def _condition_summary(condition, groups):
    average_case = []
    per_seed = []
    error_counts = evaluator.ErrorCounts()
    missing = 0
    for reports in groups:
        mean, scores = evaluator.average_case_em(reports)
        average_case.append(mean)
        per_seed.append(scores)
        for report in reports:
            error_counts = error_counts + report.error_counts
            missing += report.missing
    mean, std = evaluator.mean_std(average_case)
    return {'condition': condition, 'mean': mean, 'std': std, 'formatted': evaluator.format_mean_std(mean, std),
            'average_case_em': average_case, 'seed_em': per_seed, 'error_counts': asdict(error_counts),
            'missing': missing, 'per_type_em': _per_type_summary(groups)}


def cmd_evaluate(settings):
    """Scores prediction files against one or more (perturbed) test sets.

    Each `--predictions` occurrence is one trained model and lists one file per `--dataset`, in order.
    """
    if not settings.get('dataset'):
        raise ConfigError('evaluate needs at least one --dataset')
    groups = [list(files) for files in settings.get('predictions') or []]
    if bool(groups) == bool(settings.get('lexical_baseline')):
        raise ConfigError('evaluate needs either --predictions or --lexical-baseline')
    fmt = settings['dataset_format']
    datasets = [load_dataset(path, format=fmt) for path in settings['dataset']]
    types_per_dataset = [_entity_types_of(path, d, settings) for path, d in zip(settings['dataset'], datasets)]
    groups_predictions = [[_lexical_predictions(d) for d in datasets]] if settings.get('lexical_baseline') else []

    all_reports, all_vectors = [], []
    for number, files in enumerate(groups):
        reports, vectors = _evaluate_group(datasets, files, f'--predictions #{number + 1}', types_per_dataset)
        all_reports.append(reports)
        all_vectors.extend(vectors)
    for predictions_per_dataset in groups_predictions:
        all_reports.append([evaluator.evaluate(d, p, entity_types=types)
                            for d, p, types in zip(datasets, predictions_per_dataset, types_per_dataset)])
        all_vectors.extend(evaluator.correctness_vector(d, p) for d, p in zip(datasets, predictions_per_dataset))

    condition = settings['condition']
    dataset_name = datasets[0].source_name
    summary = _condition_summary(condition, all_reports) | {'dataset': dataset_name, 'n': all_reports[0][0].n}
    rows = [{'condition': condition, 'dataset': dataset_name, 'mean': summary['mean'], 'std': summary['std']}]

    baseline = settings.get('baseline_predictions')
    if baseline:
        baseline_reports, baseline_vectors = [], []
        for number, files in enumerate(baseline):
            reports, vectors = _evaluate_group(datasets, list(files), f'--baseline-predictions #{number + 1}',
                                               types_per_dataset)
            baseline_reports.append(reports)
            baseline_vectors.extend(vectors)
        baseline_summary = _condition_summary(settings.get('baseline_condition') or 'baseline', baseline_reports)
        summary['baseline'] = baseline_summary
        summary['p_value'] = evaluator.paired_significance(
            all_vectors, baseline_vectors, n_resamples=int(settings['n_resamples']),
            seed=int(settings['significance_seed']))
        rows.append({'condition': baseline_summary['condition'], 'dataset': dataset_name,
                     'mean': baseline_summary['mean'], 'std': baseline_summary['std']})
        logger.info('Paired bootstrap | %s vs %s | p=%.4f', condition, baseline_summary['condition'], summary['p_value'])

    out_dir = Path(settings['output_dir'])
    formats = settings['report_formats']
    if isinstance(formats, str):
        formats = [part.strip() for part in formats.split(',')]
    unknown = set(formats) - {'json', 'tsv'}
    if unknown:
        raise ConfigError(f'Unknown report formats {sorted(unknown)}, expected json and/or tsv')
    if 'json' in formats:
        evaluator.write_report(summary, out_dir / f'{dataset_name}.{condition}.report.json')
    if 'tsv' in formats:
        _write_tsv(evaluator.results_table(rows), out_dir / f'{dataset_name}.{condition}.results.tsv', index=True)
    logger.info('Evaluated | %s | %s | EM %s | wrong entity %d | wrong boundary %d', dataset_name, condition,
                summary['formatted'], summary['error_counts']['wrong_entity'], summary['error_counts']['wrong_boundary'])
    return 0


def cmd_audit(settings):
    """Writes one audit sheet of k instances per entity type, or scores filled sheets given with --score."""
    out_dir = Path(settings['output_dir'])
    if settings.get('score'):
        summaries = [score_audit_sheet(path) for path in settings['score']]
        table = pd.DataFrame(summaries, columns=['sheet', 'entity_type', 'n', 'span_identification',
                                                 'name_substitution'])
        _write_tsv(table, out_dir / 'audit_summary.tsv')
        for summary in summaries:
            logger.info('Audit score | %s | span identification %.1f%% | name substitution %.1f%%',
                        summary['sheet'], summary['span_identification'], summary['name_substitution'])
        return 0

    if not settings.get('original') or not settings.get('perturbed'):
        raise ConfigError('audit needs --original and --perturbed, or --score')
    base = load_dataset(settings['original'], format=settings['dataset_format'])
    perturbed_set = load_perturbed_dataset(settings['perturbed'], _plans_path(settings['perturbed']), base)
    stem = Path(settings['perturbed']).name.split('.jsonl')[0]
    k = int(settings['k'])
    for etype in settings['entity_types']:
        etype = EntityType(etype.upper())
        if etype not in perturbed_set.entity_types:
            continue
        sample = sample_audit(perturbed_set, k, etype, keyed_rng(settings['audit_seed'], etype.value))
        path = write_audit_sheet(sample, out_dir / f'{stem}.audit.{etype.value}.tsv')
        logger.info('Wrote audit sheet | %s | %s | %d rows', path, etype.value, k)
    return 0


def cmd_mask(settings):
    """Writes mask plans for a corpus of sequences."""
    if not settings.get('input') or not settings.get('output'):
        raise ConfigError('mask needs --input and --output')
    policy = MaskingPolicy.from_name(settings['policy'], mask_ratio=float(settings['mask_ratio']),
                                     geometric_p=float(settings['geometric_p']), max_span=int(settings['max_span']),
                                     entity_prob=float(settings['entity_prob']), entity_mode=settings['entity_mode'])
    emit_masked_corpus(settings['input'], policy, int(settings['seed']), settings['output'],
                       progress=settings.get('progress', False))
    return 0


def cmd_stats(settings):
    """Domain-shift statistics (--train and --test) and name-bias tables (--name-em)."""
    if not settings.get('test') and not settings.get('name_em'):
        raise ConfigError('stats needs --train/--test for domain shift or --name-em for name bias')
    bank = _load_bank(settings)
    out_dir = Path(settings['output_dir'])
    report = {'command': 'stats', 'versions': _library_versions()}

    if settings.get('test'):
        if not settings.get('train'):
            raise ConfigError('Domain-shift statistics need --train as well as --test')
        annotations = load_annotations(settings['annotations']) if settings.get('annotations') else None
        fmt = settings['dataset_format']
        train = load_dataset(settings['train'], format=fmt)
        test = load_dataset(settings['test'], format=fmt)
        train_answer_tokens = answer_entity_tokens(annotate_dataset(train, bank, annotations))
        train_passage_tokens = set(train_answer_tokens)
        if annotations is not None:
            train_passage_tokens |= passage_entity_tokens(train, annotations)
        else:
            logger.warning('No annotations given, passage entities limited to training answers | %s', settings['train'])
        test_meta = annotate_dataset(test, bank, annotations)
        plans = None
        if settings.get('perturbed'):
            perturbed_set = load_perturbed_dataset(settings['perturbed'], _plans_path(settings['perturbed']), test)
            plans = {plan.qid: plan for plan in perturbed_set.plans}
        shift = evaluator.unseen_token_pct(test_meta, train_answer_tokens, train_passage_tokens, plans=plans)
        report['domain_shift'] = {'test': test.source_name, 'perturbed': settings.get('perturbed'),
                                  'unseen_vs_train_answers': shift.unseen_vs_train_answers,
                                  'unseen_vs_train_passages': shift.unseen_vs_train_passages,
                                  'n_tokens': shift.n_tokens}
        logger.info('Domain shift | %s | unseen in train answers %.1f%% | unseen in train passages %.1f%%',
                    test.source_name, shift.unseen_vs_train_answers, shift.unseen_vs_train_passages)

    if settings.get('name_em'):
        try:
            with open(settings['name_em'], encoding='utf-8') as fh:
                per_name_em = json.load(fh)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f'Malformed name EM file | {e}', path=settings['name_em'],
                                     line_number=e.lineno) from e
        if not isinstance(per_name_em, dict):
            raise DatasetFormatError('Name EM file must hold an object of first name to EM',
                                     path=settings['name_em'])
        table, summary = evaluator.bias_report(per_name_em, bank)
        _write_tsv(table, out_dir / 'name_bias.tsv')
        report['name_bias'] = summary

    _write_json(report, out_dir / 'stats.json')
    return 0


def cmd_build_lists(settings):
    """Writes nnp.txt and ptb_vocab.txt from a PTB tag-count table."""
    if not settings.get('counts'):
        raise ConfigError('build-lists needs --counts')
    nnp, vocab = build_ptb_lists(settings['counts'], nnp_threshold=float(settings['nnp_threshold']))
    out_dir = Path(settings['output_dir'])
    write_word_list(nnp, out_dir / 'nnp.txt')
    write_word_list(vocab, out_dir / 'ptb_vocab.txt')
    return 0


# Parser

def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='TOML file with one table per subcommand')
    common.add_argument('--log-level', default='INFO', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    common.add_argument('--jobs', type=int, help='Worker processes')
    common.add_argument('--data-dir', help='Data directory, overrides the environment variable')
    common.add_argument('--progress', action='store_true', default=None, help='Show progress bars')
    return common


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(prog='mrc-entity-audit',
                                     description='Entity renaming robustness audits for reading comprehension')
    parser.add_argument('--version', action='version', version=f'%(prog)s {__version__}')
    sub = parser.add_subparsers(dest='command', required=True)

    perturb = sub.add_parser('perturb', parents=[common], help='Generate perturbed test sets')
    perturb.add_argument('--dataset', dest='datasets', nargs='+', help='Test set files')
    perturb.add_argument('--entity-types', help='Comma separated subset of PER,ORG,GPE')
    perturb.add_argument('--source', help='InDistName, DBName or RandStr')
    perturb.add_argument('--name-bank', help='Bank directory or origin tag')
    perturb.add_argument('--annotation-bank', help='Bank that recognises names in the test set, defaults to --name-bank')
    perturb.add_argument('--n-seeds', type=int)
    perturb.add_argument('--base-seed', type=int)
    perturb.add_argument('--output-dir')
    perturb.add_argument('--failure-budget', type=float)
    perturb.add_argument('--annotations', help='Answer entity annotations (JSONL)')
    perturb.add_argument('--dataset-format', choices=['mrqa_jsonl', 'plain_jsonl'])
    perturb.add_argument('--dedup-pools', action=argparse.BooleanOptionalAction, default=None)
    perturb.add_argument('--emit-oracle', action=argparse.BooleanOptionalAction, default=None)
    perturb.set_defaults(func=cmd_perturb)

    sweep = sub.add_parser('sweep', parents=[common], help='One PER test set per first name')
    sweep.add_argument('--dataset')
    sweep.add_argument('--name-bank')
    sweep.add_argument('--names', nargs='+', help='Names to use instead of a sample from the bank')
    sweep.add_argument('--sample-names', type=int)
    sweep.add_argument('--base-seed', type=int)
    sweep.add_argument('--output-dir')
    sweep.add_argument('--failure-budget', type=float)
    sweep.add_argument('--annotations')
    sweep.add_argument('--dataset-format', choices=['mrqa_jsonl', 'plain_jsonl'])
    sweep.set_defaults(func=cmd_sweep)

    evaluate = sub.add_parser('evaluate', parents=[common], help='Score prediction files')
    evaluate.add_argument('--dataset', nargs='+', help='One test set per perturbation seed')
    evaluate.add_argument('--predictions', action='append', nargs='+',
                          help='One file per --dataset; repeat once per trained model')
    evaluate.add_argument('--baseline-predictions', action='append', nargs='+')
    evaluate.add_argument('--lexical-baseline', action='store_true', default=None,
                          help='Score the word-overlap baseline instead of prediction files')
    evaluate.add_argument('--name-bank', help='Annotate datasets without a plans sidecar for per entity type EM')
    evaluate.add_argument('--annotations', help='Answer entity annotations (JSONL), with --name-bank')
    evaluate.add_argument('--condition')
    evaluate.add_argument('--baseline-condition')
    evaluate.add_argument('--output-dir')
    evaluate.add_argument('--report-formats')
    evaluate.add_argument('--dataset-format', choices=['mrqa_jsonl', 'plain_jsonl'])
    evaluate.add_argument('--n-resamples', type=int)
    evaluate.add_argument('--significance-seed', type=int)
    evaluate.set_defaults(func=cmd_evaluate)

    audit = sub.add_parser('audit', parents=[common], help='Write or score audit sheets')
    audit.add_argument('--original', help='Original test set')
    audit.add_argument('--perturbed', help='Perturbed test set, its .plans file next to it')
    audit.add_argument('--k', type=int)
    audit.add_argument('--entity-types')
    audit.add_argument('--audit-seed', type=int)
    audit.add_argument('--output-dir')
    audit.add_argument('--dataset-format', choices=['mrqa_jsonl', 'plain_jsonl'])
    audit.add_argument('--score', nargs='+', help='Filled sheets to score')
    audit.set_defaults(func=cmd_audit)

    mask = sub.add_parser('mask', parents=[common], help='Mask plans for continual pretraining')
    mask.add_argument('--input')
    mask.add_argument('--output')
    mask.add_argument('--policy', help='vanilla, whole_word, span or entity')
    mask.add_argument('--seed', type=int)
    mask.add_argument('--mask-ratio', type=float)
    mask.add_argument('--geometric-p', type=float)
    mask.add_argument('--max-span', type=int)
    mask.add_argument('--entity-prob', type=float)
    mask.add_argument('--entity-mode', help='event or sequence')
    mask.set_defaults(func=cmd_mask)

    stats = sub.add_parser('stats', parents=[common], help='Domain-shift and name-bias reports')
    stats.add_argument('--train')
    stats.add_argument('--test')
    stats.add_argument('--perturbed', help='Perturbed test set, its .plans file next to it')
    stats.add_argument('--annotations')
    stats.add_argument('--name-em', help='JSON object of first name to EM')
    stats.add_argument('--name-bank')
    stats.add_argument('--output-dir')
    stats.add_argument('--dataset-format', choices=['mrqa_jsonl', 'plain_jsonl'])
    stats.set_defaults(func=cmd_stats)

    build_lists = sub.add_parser('build-lists', parents=[common], help='NNP and vocabulary lists from PTB counts')
    build_lists.add_argument('--counts', help='word<TAB>tag<TAB>count file')
    build_lists.add_argument('--nnp-threshold', type=float)
    build_lists.add_argument('--output-dir')
    build_lists.set_defaults(func=cmd_build_lists)
    return parser


def _settings(args):
    file_values = load_config_file(args.config) if args.config else {}
    cli_values = {key: value for key, value in vars(args).items()
                  if key not in ('command', 'func', 'config', 'log_level')}
    settings = merge_settings(args.command, file_values, cli_values)
    for key in ('entity_types',):
        if isinstance(settings.get(key), str):
            settings[key] = [part.strip() for part in settings[key].split(',') if part.strip()]
    return settings


def run(args):
    settings = _settings(args)
    if args.command == 'perturb':
        return cmd_perturb(RunConfig.from_settings(settings), progress=bool(settings.get('progress')))
    return args.func(settings)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT, force=True)
    try:
        return run(args)
    except (ConfigError, FileNotFoundError) as e:
        logger.error('Fatal | %s | %s', type(e).__name__, e)
        return 2
    except (AuditError, OSError) as e:
        logger.error('Fatal | %s | %s', type(e).__name__, e)
        return 1


if __name__ == '__main__':
    sys.exit(main())
