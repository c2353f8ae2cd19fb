"""Scoring of prediction files against (perturbed) test sets.

Exact match uses SQuAD-style answer normalisation. Wrong predictions are split
into wrong-boundary errors, which share at least one normalised word with the
closest gold answer, and wrong-entity errors, which share none.
"""
import re
import math
import json
import string
import logging
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from MrcEntityAudit.annotate import EntityType, entity_tokens
from MrcEntityAudit.corpus import tokenize, word_tokens
from MrcEntityAudit.errors import AlignmentError, EvaluationError, DatasetFormatError
from MrcEntityAudit.namebank import bias_features

logger = logging.getLogger(__name__)

PUNCTUATION = frozenset(string.punctuation)
ARTICLES = re.compile(r'\b(a|an|the)\b')


@dataclass(frozen=True)
class ErrorCounts:
    correct: int = 0
    wrong_entity: int = 0
    wrong_boundary: int = 0

    def __add__(self, other):
        return ErrorCounts(self.correct + other.correct, self.wrong_entity + other.wrong_entity,
                           self.wrong_boundary + other.wrong_boundary)

    @property
    def n(self):
        return self.correct + self.wrong_entity + self.wrong_boundary


@dataclass(frozen=True)
class EvalReport:
    em: float
    n: int
    error_counts: ErrorCounts
    per_type_em: dict = field(default_factory=dict)
    seed_scores: tuple = None
    missing: int = 0
    dataset: str = None

    def to_dict(self):
        report = asdict(self)
        report['per_type_em'] = {str(getattr(key, 'value', key)): value for key, value in self.per_type_em.items()}
        report['seed_scores'] = list(self.seed_scores) if self.seed_scores is not None else None
        return report


@dataclass(frozen=True)
class DomainShiftStats:
    unseen_vs_train_answers: float
    unseen_vs_train_passages: float
    n_tokens: int = 0


def normalize_answer(s):
    """Lowercases, drops punctuation and the articles a/an/the, and collapses whitespace."""
    s = s.lower()
    s = ''.join(char for char in s if char not in PUNCTUATION)
    s = ARTICLES.sub(' ', s)
    return ' '.join(s.split())


def exact_match(pred, golds):
    """1 when the normalised prediction equals any normalised gold answer, else 0."""
    if not golds:
        raise EvaluationError('exact_match needs at least one gold answer')
    normalized = normalize_answer(pred)
    return int(any(normalized == normalize_answer(gold) for gold in golds))


def classify_error(pred, golds):
    """`correct`, `wrong_boundary` (some word shared with the best-overlapping gold) or `wrong_entity`."""
    if exact_match(pred, golds):
        return 'correct'
    pred_tokens = set(normalize_answer(pred).split())
    overlap = max(len(pred_tokens & set(normalize_answer(gold).split())) for gold in golds)
    return 'wrong_boundary' if overlap > 0 else 'wrong_entity'


def load_predictions(path):
    """Reads a JSON object mapping qid to predicted answer string."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f'Predictions file not found | {path}')
    with open(path, encoding='utf-8') as fh:
        try:
            predictions = json.load(fh)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f'Unreadable predictions | {e}', path=path, line_number=e.lineno) from e
    if not isinstance(predictions, dict) or not all(isinstance(value, str) for value in predictions.values()):
        raise DatasetFormatError('Predictions must be a JSON object of qid to answer string', path=path)
    return predictions


def write_predictions(predictions, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        json.dump(predictions, fh, ensure_ascii=False, indent=1)
        fh.write('\n')


def _labels(d, p):
    missing = [inst.qid for inst in d if inst.qid not in p]
    if missing:
        logger.warning('Predictions missing, counted wrong | %s | %d of %d | first: %s',
                       d.source_name, len(missing), len(d), missing[0])
    return [classify_error(p.get(inst.qid, ''), inst.gold_texts()) for inst in d], len(missing)


def correctness_vector(d, p):
    """Per-instance exact match (0/1) in dataset order; missing predictions count as 0."""
    return [int(label == 'correct') for label in _labels(d, p)[0]]


def evaluate(d, p, meta=None, entity_types=None):
    """Exact match and error taxonomy of a prediction set.

    Args:
        d (Dataset): The (perturbed) test set.
        p (dict): qid to predicted answer.
        meta (list, optional): InstanceMetadata keyed by the same qids; enables the per entity type
            breakdown. Defaults to None.
        entity_types (dict, optional): qid to the entity types perturbed in it, as read from a plans
            sidecar. Used for the breakdown when meta is not given. Defaults to None.

    Returns:
        EvalReport: Scores in percent.
    """
    labels, missing = _labels(d, p)
    counts = ErrorCounts(labels.count('correct'), labels.count('wrong_entity'), labels.count('wrong_boundary'))
    em = 100.0 * counts.correct / counts.n if counts.n else 0.0

    if meta is not None:
        entity_types = {item.qid: item.perturbable_types() for item in meta}
    per_type_em = {}
    if entity_types is not None:
        for etype in EntityType:
            hits = [label == 'correct' for inst, label in zip(d, labels) if etype in entity_types.get(inst.qid, ())]
            if hits:
                per_type_em[etype.value] = 100.0 * sum(hits) / len(hits)
    return EvalReport(em=em, n=counts.n, error_counts=counts, per_type_em=per_type_em,
                      missing=missing, dataset=d.source_name)


def average_case_em(reports):
    """Mean EM over the reports of the N perturbed sets of one condition.

    Returns:
        tuple: (mean EM, list of per-seed EM).
    """
    if not reports:
        raise EvaluationError('average_case_em needs at least one report')
    sizes = {report.n for report in reports}
    if len(sizes) > 1:
        raise AlignmentError(f'Reports cover different instance counts: {sorted(sizes)}')
    scores = [report.em for report in reports]
    return float(np.mean(scores)), scores


def mean_std(values):
    """Mean and sample standard deviation (0 for a single value)."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise EvaluationError('mean_std needs at least one value')
    std = float(np.std(values, ddof=1)) if values.size > 1 else 0.0
    return float(np.mean(values)), std


def format_mean_std(mean, std):
    return f'{mean:.1f}±{std:.1f}'


def relative_drop(original_em, perturbed_em):
    """Drop from the original to the perturbed EM, in percent of the original."""
    if original_em == 0:
        return math.nan
    return 100.0 * (original_em - perturbed_em) / original_em


def unseen_token_pct(test_meta, train_answer_tokens, train_passage_tokens, plans=None):
    """Share of test answer entity tokens never seen among training entity tokens.

    Only the perturbable spans of each answer entity are measured.

    Args:
        test_meta (list): InstanceMetadata of the original test set.
        train_answer_tokens (set): Tokens of entities in training answers.
        train_passage_tokens (set): Tokens of entities in training passages.
        plans (dict, optional): qid to PerturbationPlan; each span is replaced by its planned
            substitute to measure a perturbed test set. Defaults to None.

    Returns:
        DomainShiftStats: Two percentages.
    """
    surfaces = []
    for item in test_meta:
        plan = plans.get(item.qid) if plans is not None else None
        if plans is not None and plan is None:
            continue
        table = {entry.original: entry.replacement for entry in plan.active_entries()} if plan is not None else {}
        for _, spans in item.mentions:
            surfaces.extend(table.get(span.surface, span.surface) for span in spans)
    tokens = entity_tokens(surfaces)
    if not tokens:
        raise EvaluationError('No test answer entity tokens to measure')
    unseen_answers = sum(1 for token in tokens if token not in train_answer_tokens)
    unseen_passages = sum(1 for token in tokens if token not in train_passage_tokens)
    return DomainShiftStats(100.0 * unseen_answers / len(tokens), 100.0 * unseen_passages / len(tokens), len(tokens))


def paired_significance(a, b, n_resamples=10000, seed=0, chunk_size=1000):
    """Two-sided paired bootstrap test on the mean EM difference of two systems.

    Args:
        a (array-like): 0/1 correctness, shape (n_seeds, n_instances) or (n_instances,).
        b (array-like): Same shape as a, aligned on seeds and qids.
        n_resamples (int, optional): Bootstrap resamples. Defaults to 10000.
        seed (int, optional): Seed of the resampling. Defaults to 0.

    Returns:
        float: p-value, (count + 1) / (n_resamples + 1) where count is the number of resampled mean
            differences at least as far from the observed one as the observed one is from zero.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape != b.shape:
        raise AlignmentError(f'Correctness arrays are misaligned: {a.shape} vs {b.shape}')
    if a.shape[1] == 0:
        raise AlignmentError('Correctness arrays are empty')
    diffs = a.mean(axis=0) - b.mean(axis=0)
    observed = diffs.mean()
    rng = np.random.default_rng(seed)
    n = diffs.size
    count = 0
    remaining = n_resamples
    while remaining > 0:
        size = min(chunk_size, remaining)
        means = diffs[rng.integers(0, n, size=(size, n))].mean(axis=1)
        count += int(np.sum(np.abs(means - observed) >= abs(observed)))
        remaining -= size
    return (count + 1) / (n_resamples + 1)


def _quantile_means(table, feature):
    ranked = table.sort_values(feature, ascending=False, kind='mergesort')
    n = len(ranked)
    top = max(1, -(-n * 20 // 100))
    bottom = max(1, -(-n * 10 // 100))
    return float(ranked['em'].head(top).mean()), float(ranked['em'].tail(bottom).mean())


def bias_report(per_name_em, bank):
    """Joins per-name EM from a name sweep with gender polarity and popularity.

    Args:
        per_name_em (dict): First name to EM on the test set where all answer first names became that name.
        bank (NameBank): Source of the name frequencies.

    Returns:
        tuple: (DataFrame with one row per name, dict summary). The summary holds, per feature, the
            mean EM of the top 20% and bottom 10% names and the Spearman correlation with EM.
            Names missing from the bank are flagged and left out of the summary.
    """
    if not per_name_em:
        raise EvaluationError('bias_report needs at least one name')
    rows = []
    for name, em in per_name_em.items():
        record = bank.record(name)
        if record is None:
            logger.warning('Name missing from bank | %s | %s', bank.origin_tag, name)
            rows.append({'name': name, 'gender_polarity': math.nan, 'popularity': math.nan, 'em': em, 'in_bank': False})
            continue
        features = bias_features(record)
        rows.append({'name': name, 'gender_polarity': features.gender_polarity, 'popularity': features.popularity,
                     'em': em, 'in_bank': True})
    table = pd.DataFrame(rows, columns=['name', 'gender_polarity', 'popularity', 'em', 'in_bank'])

    known = table[table['in_bank']]
    summary = {'n': int(len(known)), 'flagged': int((~table['in_bank']).sum())}
    for feature in ('gender_polarity', 'popularity'):
        if known.empty:
            summary[feature] = None
            continue
        top_mean, bottom_mean = _quantile_means(known, feature)
        correlation = math.nan
        if len(known) >= 3:
            with warnings.catch_warnings():
                warnings.simplefilter('ignore')
                correlation = float(stats.spearmanr(known[feature], known['em']).statistic)
        summary[feature] = {'top_20pct_em': top_mean, 'bottom_10pct_em': bottom_mean, 'spearman': correlation}
    return table, summary


def lexical_baseline_predict(inst, window=3):
    """Returns the passage window of `window` words sharing the most normalised words with the question,
        the earliest one on ties."""
    tokens = word_tokens(inst.passage)
    if not tokens:
        return ''
    question_words = {normalize_answer(token.text) for token in tokenize(inst.question)} - {''}
    width = min(window, len(tokens))
    best_start, best_score = 0, -1
    for start in range(len(tokens) - width + 1):
        score = sum(1 for token in tokens[start:start + width] if normalize_answer(token.text) in question_words)
        if score > best_score:
            best_start, best_score = start, score
    return inst.passage[tokens[best_start].char_start:tokens[best_start + width - 1].char_end]


def write_report(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict() if hasattr(report, 'to_dict') else report
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write('\n')


def results_table(rows):
    """Table with one row per perturbation and one column per dataset.

    Args:
        rows (list): Dicts with `condition`, `dataset`, `mean` and `std`.

    Returns:
        pd.DataFrame: Cells formatted `mean±std` with one decimal.
    """
    frame = pd.DataFrame(rows, columns=['condition', 'dataset', 'mean', 'std'])
    frame['cell'] = [format_mean_std(mean, std) for mean, std in zip(frame['mean'], frame['std'])]
    table = frame.pivot(index='condition', columns='dataset', values='cell')
    table = table.reindex(index=list(dict.fromkeys(frame['condition'])), columns=list(dict.fromkeys(frame['dataset'])))
    table.columns.name = None
    return table
