"""Mask selection for masked-language-model continual pretraining.

Four policies pick which token positions an MLM objective hides, all aiming at
the same share of tokens (15% by default):

    vanilla    : uniform sample of single tokens
    whole_word : whole words
    span       : runs of whole words with truncated geometric lengths
    entity     : entity spans, mixed with span-policy runs

Only the positions are produced. Replacing them with [MASK], random or kept
tokens is left to the trainer.
"""
import math
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from tqdm import tqdm

from MrcEntityAudit.annotate import EntityType
from MrcEntityAudit.corpus import tokenize, read_jsonl_records, write_jsonl_records
from MrcEntityAudit.errors import ConfigError, MaskingError
from MrcEntityAudit.seeding import keyed_rng

logger = logging.getLogger(__name__)

# Below this length the 15% budget is under one token.
MIN_MASKABLE_LENGTH = 7
ENTITY_MODES = ('event', 'sequence')


class PolicyKind(str, Enum):
    Vanilla = 'vanilla'
    WholeWord = 'whole_word'
    Span = 'span'
    Entity = 'entity'


@dataclass(frozen=True)
class MaskingPolicy:
    kind: PolicyKind
    mask_ratio: float = 0.15
    geometric_p: float = 0.2
    max_span: int = 10
    entity_prob: float = 0.5
    entity_mode: str = 'event'

    def __post_init__(self):
        object.__setattr__(self, 'kind', PolicyKind(self.kind))
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ConfigError(f'mask_ratio must lie in (0, 1], got {self.mask_ratio}')
        if not 0.0 < self.geometric_p <= 1.0:
            raise ConfigError(f'geometric_p must lie in (0, 1], got {self.geometric_p}')
        if int(self.max_span) < 1:
            raise ConfigError(f'max_span must be at least 1, got {self.max_span}')
        if not 0.0 <= self.entity_prob <= 1.0:
            raise ConfigError(f'entity_prob must lie in [0, 1], got {self.entity_prob}')
        if self.entity_mode not in ENTITY_MODES:
            raise ConfigError(f'entity_mode must be one of {ENTITY_MODES}, got `{self.entity_mode}`')

    @classmethod
    def from_name(cls, name, **params):
        try:
            kind = PolicyKind(str(name).lower().replace('-', '_'))
        except ValueError:
            raise ConfigError(f'Unknown masking policy `{name}`, expected one of '
                              f'{[kind.value for kind in PolicyKind]}') from None
        return cls(kind, **params)

    def span_length_probs(self):
        return truncated_geometric_probs(self.geometric_p, self.max_span)


@dataclass(frozen=True)
class MaskableSequence:
    """Tokens grouped into words, with entity mentions given as word ranges.

    `words` holds (first token, last token + 1) pairs partitioning the tokens in
    order. `entities` holds (first word, last word + 1) pairs, pairwise disjoint.
    """
    tokens: tuple
    words: tuple = None
    entities: tuple = ()

    def __post_init__(self):
        tokens = tuple(self.tokens)
        words = tuple((i, i + 1) for i in range(len(tokens))) if self.words is None else \
            tuple((int(start), int(end)) for start, end in self.words)
        entities = tuple(sorted((int(entity[0]), int(entity[1])) for entity in self.entities))
        object.__setattr__(self, 'tokens', tokens)
        object.__setattr__(self, 'words', words)
        object.__setattr__(self, 'entities', entities)
        self.validate()

    def __len__(self):
        return len(self.tokens)

    def validate(self):
        position = 0
        for start, end in self.words:
            if start != position or end <= start:
                raise MaskingError(f'Words must partition the tokens in order, got ({start}, {end}) at token {position}')
            position = end
        if position != len(self.tokens):
            raise MaskingError(f'Words cover {position} of {len(self.tokens)} tokens')
        previous_end = 0
        for start, end in self.entities:
            if not 0 <= start < end <= len(self.words):
                raise MaskingError(f'Entity ({start}, {end}) is empty or outside the {len(self.words)} words')
            if start < previous_end:
                raise MaskingError(f'Entity ({start}, {end}) overlaps the previous entity')
            previous_end = end
        return self


@dataclass(frozen=True)
class MaskPlan:
    masked_token_indices: frozenset
    policy: MaskingPolicy
    seed: int = None
    span_lengths: tuple = field(default=(), compare=False)

    def sorted_indices(self):
        return sorted(self.masked_token_indices)


def truncated_geometric_probs(p, max_span):
    """P(length = l) for l = 1..max_span, proportional to p(1-p)^(l-1)."""
    lengths = np.arange(1, int(max_span) + 1)
    weights = p * (1.0 - p) ** (lengths - 1)
    return weights / weights.sum()


def mask_budget(length, ratio=0.15):
    """Number of tokens to mask: ratio * length rounded half up."""
    return int(math.floor(ratio * length + 0.5))


class _Selection:
    """Masked tokens and words of one sequence, grown word by word."""

    def __init__(self, seq):
        self.seq = seq
        self.tokens = set()
        self.word_masked = np.zeros(len(seq.words), dtype=bool)

    def add_words(self, first_word, end_word):
        for word in range(first_word, end_word):
            if not self.word_masked[word]:
                self.word_masked[word] = True
                self.tokens.update(range(*self.seq.words[word]))

    def unmasked_words(self):
        return np.flatnonzero(~self.word_masked)

    def free_entities(self):
        return [(start, end) for start, end in self.seq.entities if not self.word_masked[start:end].any()]


def _whole_word(seq, budget, rng):
    order = rng.permutation(len(seq.words))
    chosen, total = [], 0
    for word in order:
        if total >= budget:
            break
        chosen.append(int(word))
        total += seq.words[word][1] - seq.words[word][0]
    if len(chosen) > 1:
        last = seq.words[chosen[-1]][1] - seq.words[chosen[-1]][0]
        if abs(total - last - budget) < abs(total - budget):
            chosen.pop()
    return {token for word in chosen for token in range(*seq.words[word])}


def _span_step(selection, probs, rng, span_lengths):
    length = int(rng.choice(len(probs), p=probs)) + 1
    span_lengths.append(length)
    start = int(rng.choice(selection.unmasked_words()))
    selection.add_words(start, min(start + length, len(selection.seq.words)))


def _span_or_entity(seq, policy, budget, rng):
    selection = _Selection(seq)
    probs = policy.span_length_probs()
    span_lengths = []
    entity_sequence = policy.kind == PolicyKind.Entity and policy.entity_mode == 'sequence' \
        and rng.random() < policy.entity_prob
    while len(selection.tokens) < budget:
        use_entity = False
        if policy.kind == PolicyKind.Entity:
            use_entity = entity_sequence if policy.entity_mode == 'sequence' else rng.random() < policy.entity_prob
        free = selection.free_entities() if use_entity else []
        if free:
            start, end = free[int(rng.integers(len(free)))]
            selection.add_words(start, end)
        else:
            _span_step(selection, probs, rng, span_lengths)
    return selection.tokens, tuple(span_lengths)


def mask(seq, policy, rng, seed=None):
    """Selects the positions to mask in one sequence.

    Args:
        seq (MaskableSequence): The sequence.
        policy (MaskingPolicy): How to select.
        rng (np.random.Generator): Source of randomness.
        seed (int, optional): Recorded in the plan. Defaults to None.

    Returns:
        MaskPlan: The masked token indices. Empty, with a warning, for sequences shorter
            than MIN_MASKABLE_LENGTH tokens.
    """
    budget = mask_budget(len(seq), policy.mask_ratio)
    if len(seq) < MIN_MASKABLE_LENGTH or budget == 0:
        logger.warning('Sequence too short to mask, empty plan | %d tokens | policy=%s', len(seq), policy.kind.value)
        return MaskPlan(frozenset(), policy, seed)

    span_lengths = ()
    if policy.kind == PolicyKind.Vanilla:
        masked = {int(index) for index in rng.choice(len(seq), size=budget, replace=False)}
    elif policy.kind == PolicyKind.WholeWord:
        masked = _whole_word(seq, budget, rng)
    else:
        masked, span_lengths = _span_or_entity(seq, policy, budget, rng)
    return MaskPlan(frozenset(masked), policy, seed, span_lengths)


def sequence_from_text(text, mentions=()):
    """Builds a MaskableSequence from raw text and character-offset entity mentions.

    Tokens come from corpus.tokenize; the tokens of one whitespace-separated chunk form one
    word. A mention covers every word it overlaps. Mentions overlapping an earlier one are dropped.

    Args:
        text (str): The raw text.
        mentions (list): Dicts with `char_start` and `char_end` (and optionally `type`), as in an
            annotation file, or (type, char_start, char_end) triples.

    Returns:
        MaskableSequence: Tokens as strings.
    """
    tokens = tokenize(text)
    words, word_spans = [], []
    for index, token in enumerate(tokens):
        if words and tokens[index - 1].char_end == token.char_start:
            words[-1] = (words[-1][0], index + 1)
            word_spans[-1] = (word_spans[-1][0], token.char_end)
        else:
            words.append((index, index + 1))
            word_spans.append((token.char_start, token.char_end))

    ranges = []
    for mention in mentions:
        if isinstance(mention, dict):
            start, end = int(mention['char_start']), int(mention['char_end'])
        else:
            _, start, end = mention
        covered = [i for i, (word_start, word_end) in enumerate(word_spans) if word_start < end and start < word_end]
        if covered:
            ranges.append((covered[0], covered[-1] + 1))

    entities = []
    for start, end in sorted(ranges):
        if entities and start < entities[-1][1]:
            logger.debug('Dropped overlapping mention | words %d-%d', start, end)
            continue
        entities.append((start, end))
    return MaskableSequence(tuple(token.text for token in tokens), tuple(words), tuple(entities))


def _parse_sequence(record):
    if 'tokens' in record:
        return MaskableSequence(record['tokens'], record.get('words'),
                                tuple(entity[:2] for entity in record.get('entities', ())))
    if 'text' in record:
        mentions = record.get('mentions', ())
        for mention in mentions:
            if isinstance(mention, dict) and 'type' in mention:
                EntityType(mention['type'])
        return sequence_from_text(record['text'], mentions)
    raise KeyError('tokens')


def emit_masked_corpus(input_path, policy, seed, out_path, progress=False):
    """Writes one mask plan per input sequence.

    Each input line is {"tokens": [...], "words": [[i, j], ...], "entities": [[w_start, w_end], ...]}
    with exclusive ends (`words` defaults to one word per token, `entities` to none), or
    {"text": ..., "mentions": [...]} with raw text. The output line repeats the input
    and adds "masked", the sorted token indices. The plan of line i depends only on (seed, i).

    Args:
        input_path (str): JSONL input, optionally gzip-compressed.
        policy (MaskingPolicy): The masking policy.
        seed (int): Run seed.
        out_path (str): JSONL output.
        progress (bool, optional): Show a progress bar. Defaults to False.

    Returns:
        int: Number of sequences written.
    """
    counts = {'sequences': 0, 'empty': 0}

    def plans():
        for line_number, record in tqdm(read_jsonl_records(input_path), desc='Masking', disable=not progress):
            try:
                seq = _parse_sequence(record)
            except MaskingError as e:
                raise MaskingError(f'{input_path}:{line_number} | {e}') from e
            except (KeyError, TypeError, ValueError, IndexError) as e:
                raise MaskingError(f'{input_path}:{line_number} | Unparseable sequence | {e!r}') from e
            plan = mask(seq, policy, keyed_rng(seed, line_number - 1), seed=seed)
            counts['sequences'] += 1
            counts['empty'] += not plan.masked_token_indices
            yield {**record, 'masked': plan.sorted_indices()}

    write_jsonl_records(plans(), out_path)
    logger.info('Wrote mask plans | %s | policy=%s | seed=%d | %d sequences | %d empty',
                out_path, policy.kind.value, seed, counts['sequences'], counts['empty'])
    return counts['sequences']
