"""Name substitution and perturbed test set generation.

A perturbation plan maps each distinct perturbable surface of an instance to its
substitute. Plans are applied to the passage, the question and the gold answers
at once, matching whole words only (no letter, digit or underscore on either side)
and trying longer originals first, so `Jack` never rewrites `Jackson` and a full
place name wins over a name it contains.
"""
import re
import bisect
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace, field
from pathlib import Path
from typing import NamedTuple

import pandas as pd
from tqdm import tqdm

from MrcEntityAudit.annotate import EntityType, SpanType, FIRST_NAME_TYPES, filter_perturbable_subset
from MrcEntityAudit.corpus import (AnswerSpan, Dataset, load_dataset, write_dataset,
                                   read_jsonl_records, write_jsonl_records)
from MrcEntityAudit.errors import (AuditSheetError, DatasetFormatError, PerturbationBudgetError,
                                   PlanApplicationError, UnsatisfiableSampleError, ValidationError)
from MrcEntityAudit.namebank import PerturbationSource, SourceKind, sample_candidate
from MrcEntityAudit.seeding import derive_seed, keyed_rng

logger = logging.getLogger(__name__)

AUDIT_COLUMNS = ('span_correct', 'substitution_correct')
TRUE_MARKS = frozenset({'y', 'yes', '1', 'true', 't', 'correct', 'ok', 'x'})
FALSE_MARKS = frozenset({'n', 'no', '0', 'false', 'f', 'wrong', 'incorrect'})


class MappingEntry(NamedTuple):
    original: str
    replacement: str
    stype: SpanType
    etype: EntityType
    skipped: bool = False


@dataclass(frozen=True)
class PerturbationPlan:
    qid: str
    mapping: tuple
    seed: int

    def active_entries(self):
        return [entry for entry in self.mapping if not entry.skipped]

    def entity_types(self):
        return frozenset(entry.etype for entry in self.mapping)

    def to_record(self):
        return {
            'qid': self.qid,
            'seed': self.seed,
            'mapping': [{'original': entry.original, 'replacement': entry.replacement,
                         'stype': entry.stype.value, 'etype': entry.etype.value, 'skipped': entry.skipped}
                        for entry in self.mapping],
        }

    @classmethod
    def from_record(cls, record):
        mapping = tuple(MappingEntry(item['original'], item['replacement'], SpanType(item['stype']),
                                     EntityType(item['etype']), bool(item.get('skipped', False)))
                        for item in record['mapping'])
        return cls(record['qid'], mapping, int(record['seed']))


class Failure(NamedTuple):
    qid: str
    seed: int
    error: str
    message: str


@dataclass(frozen=True)
class PerturbedDataset:
    base: Dataset
    seed: int
    source: PerturbationSource
    instances: Dataset
    plans: tuple
    entity_types: frozenset
    index: int = 0
    failures: tuple = ()
    question_replacements: int = 0


@dataclass(frozen=True)
class AuditSample:
    etype: EntityType
    k: int
    sheet: pd.DataFrame = field(compare=False)


class OffsetMap:
    """Monotone map from offsets in an original string to offsets in its rewritten form.

    Offsets strictly inside a replaced original land inside its replacement, clamped to its length.
    """

    def __init__(self, edits=(), question_edits=0):
        self.edits = []
        delta = 0
        for start, end, replacement in sorted(edits):
            self.edits.append((start, end, start + delta, start + delta + len(replacement)))
            delta += len(replacement) - (end - start)
        self._starts = [edit[0] for edit in self.edits]
        self.question_edits = question_edits

    def __len__(self):
        return len(self.edits)

    def __call__(self, position):
        index = bisect.bisect_right(self._starts, position) - 1
        if index < 0:
            return position
        start, end, new_start, new_end = self.edits[index]
        if position >= end:
            return new_end + (position - end)
        return new_start + min(position - start, new_end - new_start)


# Boundaries are word characters, not corpus.tokenize tokens: `Jack` matches inside `Jack's` and `Jack-based`.
def _mapping_pattern(originals):
    return re.compile('|'.join(rf'(?<!\w){re.escape(original)}(?!\w)' for original in originals))


def _substitute(text, pattern, table):
    edits = []

    def swap(match):
        edits.append((match.start(), match.end(), table[match.group(0)]))
        return table[match.group(0)]

    return pattern.sub(swap, text), edits


def plan_perturbation(inst, meta, src, rng, types=frozenset(EntityType), seed=0):
    """Draws one substitute per distinct perturbable surface of an instance.

    Args:
        inst (MrcInstance): The instance.
        meta (InstanceMetadata): Its entity metadata.
        src (PerturbationSource): Where substitutes come from.
        rng (numpy.random.Generator): Random state of this instance.
        types (set, optional): Entity types to perturb. Defaults to all three.
        seed (int, optional): Seed recorded in the plan. Defaults to 0.

    Returns:
        PerturbationPlan: Entries ordered longest original first.
    """
    spans = sorted(((mention.etype, span) for mention, spans in meta.mentions_of(types) for span in spans),
                   key=lambda item: (item[1].char_start, item[1].char_end))
    entries = {}
    for etype, span in spans:
        if span.surface in entries:
            continue
        if src.kind == SourceKind.FixedName and span.stype not in FIRST_NAME_TYPES:
            continue
        try:
            candidate = sample_candidate(span.stype, src, span.surface, rng)
        except UnsatisfiableSampleError as e:
            raise UnsatisfiableSampleError(f'qid={inst.qid} | {e}', stype=e.stype) from e
        entries[span.surface] = MappingEntry(span.surface, candidate.text, span.stype, etype, candidate.skipped)
    mapping = tuple(sorted(entries.values(), key=lambda entry: (-len(entry.original), entry.original)))
    return PerturbationPlan(inst.qid, mapping, seed)


def apply_plan(inst, plan):
    """Rewrites every whole-word occurrence of the planned originals in the passage,
        the question and the gold answers.

    Args:
        inst (MrcInstance): The original instance.
        plan (PerturbationPlan): Its plan.

    Returns:
        tuple: (perturbed MrcInstance, OffsetMap from original to perturbed passage offsets).
    """
    entries = plan.active_entries()
    if not entries:
        return inst, OffsetMap()
    table = {entry.original: entry.replacement for entry in entries}
    pattern = _mapping_pattern(entry.original for entry in entries)

    passage, edits = _substitute(inst.passage, pattern, table)
    found = {inst.passage[start:end] for start, end, _ in edits}
    absent = [entry.original for entry in entries if entry.original not in found]
    if absent:
        raise PlanApplicationError(f'Planned names not found in the passage: {absent}', qid=inst.qid)

    question, question_edits = _substitute(inst.question, pattern, table)
    offset_map = OffsetMap(edits, question_edits=len(question_edits))

    gold_answers = []
    for span in inst.gold_answers:
        text, _ = _substitute(span.text, pattern, table)
        start = offset_map(span.char_start)
        if passage[start:start + len(text)] != text:
            raise PlanApplicationError(f'Answer `{span.text}` is not rewritten consistently with the passage',
                                       qid=inst.qid)
        gold_answers.append(AnswerSpan(text, start, start + len(text)))
    aliases = tuple(_substitute(alias, pattern, table)[0] for alias in inst.aliases)

    perturbed = replace(inst, question=question, passage=passage, gold_answers=tuple(gold_answers), aliases=aliases)
    return perturbed.validate(), offset_map


def transfer_span(original, perturbed, offset_map):
    """Span-transfer oracle: the first gold span of `original` carried through the offset map."""
    span = original.gold_answers[0]
    return perturbed.passage[offset_map(span.char_start):offset_map(span.char_end)]


def perturb_instance(inst, meta, src, types, seed):
    rng = keyed_rng(seed, inst.qid)
    plan = plan_perturbation(inst, meta, src, rng, types=types, seed=seed)
    perturbed, offset_map = apply_plan(inst, plan)
    return perturbed, plan, offset_map.question_edits


_worker_context = {}


def _init_worker(src, types):
    _worker_context['src'] = src
    _worker_context['types'] = types


def _perturb_task(task):
    inst, meta, seed = task
    try:
        return perturb_instance(inst, meta, _worker_context['src'], _worker_context['types'], seed)
    except (UnsatisfiableSampleError, PlanApplicationError, ValidationError) as e:
        return Failure(inst.qid, seed, type(e).__name__, str(e))


def _run_tasks(tasks, src, types, jobs, progress, description):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(src, types)) as executor:
            results = executor.map(_perturb_task, tasks, chunksize=256)
            return list(tqdm(results, total=len(tasks), desc=description, disable=not progress))
    _init_worker(src, types)
    return [_perturb_task(task) for task in tqdm(tasks, desc=description, disable=not progress)]


def perturb_dataset(d, meta, src, types, n_seeds=5, base_seed=0, failure_budget=0.01, jobs=1, progress=False):
    """Builds N perturbed test sets from the perturbable subset of a dataset.

    Instances failing under any seed are left out of every seed, so all sets hold the same qids.

    Args:
        d (Dataset): The original test set.
        meta (list): InstanceMetadata of d.
        src (PerturbationSource): Where substitutes come from.
        types (set): Entity types to perturb.
        n_seeds (int, optional): Number of perturbed sets. Defaults to 5.
        base_seed (int, optional): Seed the set seeds derive from. Defaults to 0.
        failure_budget (float, optional): Largest tolerated share of failed instances. Defaults to 0.01.
        jobs (int, optional): Worker processes. Output does not depend on it. Defaults to 1.
        progress (bool, optional): Show progress bars. Defaults to False.

    Returns:
        list: n_seeds PerturbedDataset objects, in seed order.
    """
    if n_seeds < 1:
        raise ValueError(f'n_seeds must be at least 1, got {n_seeds}')
    types = frozenset(EntityType(etype) for etype in types)
    subset = filter_perturbable_subset(d, meta, types)
    meta_by_qid = {item.qid: item for item in meta}
    seeds = [derive_seed(base_seed, index) for index in range(n_seeds)]

    outcomes = []
    for index, seed in enumerate(seeds):
        tasks = [(inst, meta_by_qid[inst.qid], seed) for inst in subset]
        outcomes.append(_run_tasks(tasks, src, types, jobs, progress, f'{src.label} seed {index}'))

    failures = [outcome for results in outcomes for outcome in results if isinstance(outcome, Failure)]
    failed_qids = {failure.qid for failure in failures}
    for failure in failures:
        logger.warning('Instance failed | %s | seed=%d | %s | %s', failure.qid, failure.seed, failure.error, failure.message)
    if subset and len(failed_qids) / len(subset) > failure_budget:
        raise PerturbationBudgetError(
            f'{len(failed_qids)} of {len(subset)} instances failed, above the budget of {failure_budget:.1%}',
            failures=failures)

    perturbed_sets = []
    for index, (seed, results) in enumerate(zip(seeds, outcomes)):
        kept = [result for inst, result in zip(subset, results) if inst.qid not in failed_qids]
        perturbed_sets.append(PerturbedDataset(
            base=d, seed=seed, source=src,
            instances=Dataset(tuple(result[0] for result in kept), d.source_name),
            plans=tuple(result[1] for result in kept),
            entity_types=types, index=index, failures=tuple(failures),
            question_replacements=sum(result[2] for result in kept)))
    logger.info('Perturbed dataset | %s | %s | %s | %d seeds | %d instances | %d failed',
                d.source_name, src.label, entity_types_label(types), n_seeds, len(subset) - len(failed_qids),
                len(failed_qids))
    return perturbed_sets


def sweep_first_names(d, meta, names, base_seed=0, failure_budget=0.01, jobs=1, progress=False):
    """One PER test set per name, with every answer first name replaced by that name."""
    return [perturb_dataset(d, meta, PerturbationSource.fixed_name(name), {EntityType.PER}, n_seeds=1,
                            base_seed=base_seed, failure_budget=failure_budget, jobs=jobs, progress=progress)[0]
            for name in names]


def oracle_predictions(perturbed_set):
    """Predictions of the span-transfer oracle on a perturbed set, keyed by qid."""
    base = perturbed_set.base.by_qid()
    predictions = {}
    for plan in perturbed_set.plans:
        original = base[plan.qid]
        perturbed, offset_map = apply_plan(original, plan)
        predictions[plan.qid] = transfer_span(original, perturbed, offset_map)
    return predictions


# Files

def entity_types_label(types):
    names = sorted(EntityType(etype).value for etype in types)
    return 'MIX' if len(names) == len(EntityType) else '+'.join(names)


def perturbed_file_stem(stem, perturbed_set):
    return f'{stem}.{perturbed_set.source.label}.{entity_types_label(perturbed_set.entity_types)}.seed{perturbed_set.index}'


def write_perturbed_dataset(perturbed_set, out_dir, stem):
    """Writes the perturbed instances and the plans sidecar.

    Returns:
        tuple: (dataset path, plans path).
    """
    out_dir = Path(out_dir)
    base_name = perturbed_file_stem(stem, perturbed_set)
    dataset_path = out_dir / f'{base_name}.jsonl'
    plans_path = out_dir / f'{base_name}.plans.jsonl'
    write_dataset(perturbed_set.instances, dataset_path)
    header = {'header': {'dataset': perturbed_set.base.source_name, 'source': perturbed_set.source.label,
                         'entity_types': sorted(etype.value for etype in perturbed_set.entity_types),
                         'seed': perturbed_set.seed, 'index': perturbed_set.index}}
    write_jsonl_records([header] + [plan.to_record() for plan in perturbed_set.plans], plans_path)
    return dataset_path, plans_path


def _source_from_label(label):
    if label.startswith('FixedName-'):
        return PerturbationSource.fixed_name(label[len('FixedName-'):])
    return PerturbationSource(SourceKind(label))


def read_plans(plans_path):
    """Reads a plans sidecar.

    Returns:
        tuple: (header dict, list of PerturbationPlan in file order).
    """
    header, plans = None, []
    for line_number, record in read_jsonl_records(plans_path):
        if header is None and not plans and 'header' in record:
            header = record['header']
            continue
        try:
            plans.append(PerturbationPlan.from_record(record))
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f'Malformed plan line | {e!r}', path=plans_path, line_number=line_number) from e
    if header is None:
        raise DatasetFormatError('Plans file lacks its header line', path=plans_path, line_number=1)
    return header, plans


def load_perturbed_dataset(dataset_path, plans_path, base):
    """Reads back a perturbed set written by write_perturbed_dataset, given its original dataset."""
    instances = load_dataset(dataset_path, format='plain_jsonl')
    header, plans = read_plans(plans_path)
    if [plan.qid for plan in plans] != [inst.qid for inst in instances]:
        raise DatasetFormatError('Plans and perturbed instances are not aligned', path=plans_path)
    return PerturbedDataset(base=base, seed=int(header['seed']), source=_source_from_label(header['source']),
                            instances=instances, plans=tuple(plans),
                            entity_types=frozenset(EntityType(etype) for etype in header['entity_types']),
                            index=int(header.get('index', 0)))


# Quality audit

def _highlight(text, surfaces):
    surfaces = sorted(set(surfaces), key=lambda surface: (-len(surface), surface))
    if not surfaces:
        return text
    return _mapping_pattern(surfaces).sub(lambda match: f'[[{match.group(0)}]]', text)


def sample_audit(perturbed_set, k, etype, rng):
    """Samples k perturbed instances with spans of one entity type for manual checking.

    Args:
        perturbed_set (PerturbedDataset): A perturbed set.
        k (int): Sample size.
        etype (EntityType): Entity type under audit.
        rng (numpy.random.Generator): Random state.

    Returns:
        AuditSample: The sheet has one row per instance with the original and perturbed text,
            names wrapped in [[ ]], and two empty columns for the annotator.
    """
    etype = EntityType(etype)
    eligible = [index for index, plan in enumerate(perturbed_set.plans) if any(entry.etype == etype for entry in plan.mapping)]
    if k > len(eligible):
        raise AuditSheetError(f'Cannot sample {k} {etype.value} instances, only {len(eligible)} available')
    base = perturbed_set.base.by_qid()
    rows = []
    for position in rng.choice(len(eligible), size=k, replace=False):
        plan = perturbed_set.plans[eligible[position]]
        perturbed = perturbed_set.instances.instances[eligible[position]]
        original = base[plan.qid]
        entries = [entry for entry in plan.mapping if entry.etype == etype]
        rows.append({
            'qid': plan.qid,
            'entity_type': etype.value,
            'spans': '; '.join(f'{entry.original} <{entry.stype.value}>' for entry in entries),
            'mapping': '; '.join(f'{entry.original} -> {entry.replacement}' + (' (skipped)' if entry.skipped else '')
                                 for entry in entries),
            'question': _highlight(original.question, [entry.original for entry in plan.mapping]),
            'perturbed_question': _highlight(perturbed.question, [entry.replacement for entry in plan.mapping]),
            'passage': _highlight(original.passage, [entry.original for entry in plan.mapping]),
            'perturbed_passage': _highlight(perturbed.passage, [entry.replacement for entry in plan.mapping]),
            'span_correct': '',
            'substitution_correct': '',
        })
    sheet = pd.DataFrame(rows, columns=['qid', 'entity_type', 'spans', 'mapping', 'question', 'perturbed_question',
                                        'passage', 'perturbed_passage', *AUDIT_COLUMNS])
    return AuditSample(etype=etype, k=k, sheet=sheet)


def write_audit_sheet(sample, path):
    """Writes the sheet as TSV (to be filled in) and a Markdown copy next to it for reading."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sample.sheet.to_csv(path, sep='\t', index=False, lineterminator='\n')
    lines = [f'# Audit sheet | {sample.etype.value} | {sample.k} instances', '',
             'For each row answer: are all perturbable spans and their types correct (span_correct)? '
             'Were all mentions in the passage substituted (substitution_correct)?', '']
    for number, row in enumerate(sample.sheet.itertuples(index=False), start=1):
        lines += [f'## {number}. {row.qid}', '', f'- spans: {row.spans}', f'- mapping: {row.mapping}',
                  f'- question: {row.question}', f'- perturbed question: {row.perturbed_question}', '',
                  f'> {row.passage}', '', f'> {row.perturbed_passage}', '']
    with open(path.with_suffix('.md'), 'w', encoding='utf-8', newline='\n') as fh:
        fh.write('\n'.join(lines))
    return path


def _judgements(values, column, path):
    marks = []
    for value in values:
        value = str(value).strip().lower()
        if not value:
            continue
        if value in TRUE_MARKS:
            marks.append(True)
        elif value in FALSE_MARKS:
            marks.append(False)
        else:
            raise AuditSheetError(f'Unreadable mark `{value}` in column {column} | {path}')
    return marks


def score_audit_sheet(path):
    """Accuracy of the two audited steps on a filled sheet.

    Args:
        path (str): A TSV sheet written by write_audit_sheet with both judgement columns filled.

    Returns:
        dict: `n` judged rows, and `span_identification` / `name_substitution` accuracies
            in percent rounded to one decimal.
    """
    sheet = pd.read_csv(path, sep='\t', dtype=str, keep_default_na=False)
    missing = [column for column in AUDIT_COLUMNS if column not in sheet.columns]
    if missing:
        raise AuditSheetError(f'Sheet lacks columns {missing} | {path}')
    summary = {'sheet': str(path), 'entity_type': sheet['entity_type'].iloc[0] if len(sheet) else None}
    for column, key in zip(AUDIT_COLUMNS, ('span_identification', 'name_substitution')):
        marks = _judgements(sheet[column], column, path)
        if not marks:
            raise AuditSheetError(f'No judgement filled in column {column} | {path}')
        summary[key] = round(100.0 * sum(marks) / len(marks), 1)
        summary[f'{key}_n'] = len(marks)
    summary['n'] = len(sheet)
    return summary
