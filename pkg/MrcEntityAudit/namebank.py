"""Name resources and substitution candidates.

A name bank is a directory with five UTF-8 files:

    first_names.csv : name,male_freq,female_freq
    last_names.txt  : one last name per line
    gpe.csv         : name,level with level one of country, state, city
    nnp.txt         : lowercased words tagged NNP(S) more than 90% of the time in PTB
    ptb_vocab.txt   : lowercased PTB vocabulary

Banks for other national origins have the same layout and are selected by path or
origin tag (see config.get_name_bank_path). Names are matched case-sensitively,
so dictionaries should hold the title-cased forms that appear in text.
"""
import math
import logging
import string
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import pandas as pd

from MrcEntityAudit.annotate import SpanType
from MrcEntityAudit.errors import NameBankError, UnsatisfiableSampleError

logger = logging.getLogger(__name__)

MAX_RESAMPLES = 16

GPE_LEVELS = {
    'country': SpanType.GpeCountry,
    'state': SpanType.GpeState,
    'city': SpanType.GpeCity,
}
# Ties between levels of one gazetteer name: Country > State > City.
GPE_PRECEDENCE = (SpanType.GpeCountry, SpanType.GpeState, SpanType.GpeCity)

BANK_FILES = ('first_names.csv', 'last_names.txt', 'gpe.csv', 'nnp.txt', 'ptb_vocab.txt')


@dataclass(frozen=True)
class NameRecord:
    name: str
    male_freq: int
    female_freq: int


@dataclass(frozen=True)
class NameBiasFeatures:
    gender_polarity: float
    popularity: int


def classify_gender(r):
    """Male or female when that frequency is at least twice the other one, neutral otherwise.

    Args:
        r (NameRecord): A first name with its frequencies.

    Returns:
        SpanType: FirstNameMale, FirstNameFemale or FirstNameNeutral.
    """
    if r.male_freq >= 2 * r.female_freq:
        return SpanType.FirstNameMale
    if r.female_freq >= 2 * r.male_freq:
        return SpanType.FirstNameFemale
    return SpanType.FirstNameNeutral


def bias_features(r):
    """Gender polarity max(f_m/f_f, f_f/f_m) and popularity f_m + f_f.
        Polarity is math.inf when one of the frequencies is zero."""
    if r.male_freq + r.female_freq <= 0:
        raise NameBankError(f'Name `{r.name}` has no frequency for either gender')
    if r.male_freq == 0 or r.female_freq == 0:
        polarity = math.inf
    else:
        polarity = max(r.male_freq / r.female_freq, r.female_freq / r.male_freq)
    return NameBiasFeatures(gender_polarity=polarity, popularity=r.male_freq + r.female_freq)


class NameBank:
    """All candidate-name resources of one origin, immutable after construction."""

    def __init__(self, first_names=(), last_names=(), gpe=None, nnp=(), ptb_vocab=(), origin_tag='US'):
        self.first_names = tuple(first_names)
        self.last_names = frozenset(last_names)
        self.gpe = {name: tuple(sorted(set(levels), key=GPE_PRECEDENCE.index))
                    for name, levels in (gpe or {}).items()}
        self.nnp = frozenset(word.lower() for word in nnp)
        self.ptb_vocab = frozenset(word.lower() for word in ptb_vocab)
        self.origin_tag = origin_tag
        self._records = {record.name: record for record in self.first_names}
        self.max_gpe_words = max((len(name.split()) for name in self.gpe), default=1)
        self._pools = self._build_pools()

    def __repr__(self):
        return (f'NameBank(origin_tag={self.origin_tag!r}, first_names={len(self.first_names)}, '
                f'last_names={len(self.last_names)}, gpe={len(self.gpe)}, nnp={len(self.nnp)}, '
                f'ptb_vocab={len(self.ptb_vocab)})')

    def _build_pools(self):
        pools = {stype: [] for stype in SpanType}
        for record in self.first_names:
            pools[classify_gender(record)].append(record.name)
        pools[SpanType.LastName] = list(self.last_names)
        for name, levels in self.gpe.items():
            for level in levels:
                pools[level].append(name)
        pools[SpanType.Nnp] = list(self.nnp)
        return {stype: tuple(sorted(names)) for stype, names in pools.items()}

    def record(self, name):
        return self._records.get(name)

    def is_first_name(self, word):
        return word in self._records

    def is_last_name(self, word):
        return word in self.last_names

    def is_nnp(self, word):
        return word.lower() in self.nnp

    def in_ptb(self, word):
        return word.lower() in self.ptb_vocab

    def first_name_type(self, word):
        """Gender class of a first name; names missing from the bank are neutral."""
        record = self.record(word)
        return classify_gender(record) if record is not None else SpanType.FirstNameNeutral

    def gpe_level(self, phrase):
        levels = self.gpe.get(phrase)
        return levels[0] if levels else None

    def pool(self, stype):
        """Candidate names of a span type, in a fixed order. Rare words have no pool."""
        return self._pools[SpanType(stype)]

    def empty_pools(self):
        return [stype for stype in SpanType if stype != SpanType.Rare and not self._pools[stype]]

    def validate(self):
        empty = self.empty_pools()
        if empty:
            raise NameBankError(f'Name bank `{self.origin_tag}` has empty pools for '
                                f'{", ".join(stype.value for stype in empty)}')
        return self


def _read_word_list(path):
    with open(path, encoding='utf-8') as fh:
        return [line.strip() for line in fh if line.strip()]


def load_name_bank(directory, origin_tag=None, validate=True):
    """Loads a name bank directory.

    Args:
        directory (str): Folder with the five bank files.
        origin_tag (str, optional): Label of the bank, such as `US` or `China`. Defaults to the folder name.
        validate (bool, optional): Require a non-empty pool for every span type except Rare. Defaults to True.

    Returns:
        NameBank: The loaded bank.
    """
    directory = Path(directory)
    for file_name in BANK_FILES:
        if not (directory / file_name).is_file():
            raise FileNotFoundError(f'Name bank file not found | {directory / file_name}')

    first_names = pd.read_csv(directory / 'first_names.csv', dtype={'name': str}, keep_default_na=False)
    missing_columns = {'name', 'male_freq', 'female_freq'} - set(first_names.columns)
    if missing_columns:
        raise NameBankError(f'first_names.csv lacks columns {sorted(missing_columns)} | {directory}')
    first_names['name'] = first_names['name'].str.strip()
    first_names = first_names.groupby('name', sort=True)[['male_freq', 'female_freq']].sum().reset_index()
    if (first_names[['male_freq', 'female_freq']] < 0).any().any():
        raise NameBankError(f'Negative name frequency in first_names.csv | {directory}')
    empty_names = first_names[first_names['male_freq'] + first_names['female_freq'] <= 0]
    if len(empty_names):
        raise NameBankError(f'First names without frequency: {", ".join(empty_names["name"].head(5))} | {directory}')
    records = [NameRecord(row.name, int(row.male_freq), int(row.female_freq))
               for row in first_names.itertuples(index=False)]

    gpe_table = pd.read_csv(directory / 'gpe.csv', dtype=str, keep_default_na=False)
    gpe = {}
    for row in gpe_table.itertuples(index=False):
        level = GPE_LEVELS.get(row.level.strip().lower())
        if level is None:
            raise NameBankError(f'Unknown GPE level `{row.level}` for `{row.name}` | {directory}')
        gpe.setdefault(row.name.strip(), set()).add(level)

    bank = NameBank(first_names=records,
                    last_names=_read_word_list(directory / 'last_names.txt'),
                    gpe=gpe,
                    nnp=_read_word_list(directory / 'nnp.txt'),
                    ptb_vocab=_read_word_list(directory / 'ptb_vocab.txt'),
                    origin_tag=origin_tag or directory.name)
    logger.info('Loaded name bank | %s | %r', directory, bank)
    return bank.validate() if validate else bank


def build_ptb_lists(counts_path, nnp_threshold=0.9):
    """Builds the NNP list and the PTB vocabulary from tag counts.

    Args:
        counts_path (str): Tab-separated `word<TAB>tag<TAB>count` rows, without header.
        nnp_threshold (float, optional): A word is NNP when NNP and NNPS make up more than
            this share of its occurrences. Defaults to 0.9.

    Returns:
        tuple: (nnp words, vocabulary), both sorted lists of lowercased words.
    """
    counts = pd.read_csv(counts_path, sep='\t', header=None, names=['word', 'tag', 'count'],
                         dtype={'word': str, 'tag': str}, keep_default_na=False, quoting=3)
    counts['word'] = counts['word'].str.lower()
    counts['is_nnp'] = counts['tag'].isin(['NNP', 'NNPS'])
    totals = counts.groupby('word')['count'].sum()
    nnp_counts = counts[counts['is_nnp']].groupby('word')['count'].sum().reindex(totals.index, fill_value=0)
    nnp = sorted(totals.index[((nnp_counts / totals) > nnp_threshold).to_numpy()])
    vocab = sorted(totals.index)
    logger.info('Built PTB lists | %s | %d NNP words | %d vocabulary words', counts_path, len(nnp), len(vocab))
    return nnp, vocab


def write_word_list(words, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        for word in words:
            fh.write(word + '\n')


def sample_first_names(bank, k, rng):
    """Uniform sample of k distinct first names, for the name-bias sweep."""
    names = sorted(record.name for record in bank.first_names)
    if k > len(names):
        raise NameBankError(f'Cannot sample {k} names from a bank with {len(names)} first names')
    return [names[index] for index in rng.choice(len(names), size=k, replace=False)]


# Substitution sources

class SourceKind(str, Enum):
    InDistName = 'InDistName'
    DBName = 'DBName'
    RandStr = 'RandStr'
    FixedName = 'FixedName'


class Candidate(NamedTuple):
    text: str
    skipped: bool = False


@dataclass(frozen=True)
class PerturbationSource:
    kind: SourceKind
    pools: dict = None
    bank: NameBank = None
    name: str = None

    @classmethod
    def indist(cls, pools):
        return cls(SourceKind.InDistName, pools=dict(pools))

    @classmethod
    def dbname(cls, bank):
        return cls(SourceKind.DBName, bank=bank)

    @classmethod
    def randstr(cls):
        return cls(SourceKind.RandStr)

    @classmethod
    def fixed_name(cls, name):
        return cls(SourceKind.FixedName, name=name)

    @property
    def label(self):
        if self.kind == SourceKind.FixedName:
            return f'FixedName-{self.name}'
        return self.kind.value

    def pool(self, stype):
        stype = SpanType(stype)
        if self.kind == SourceKind.InDistName:
            return tuple(self.pools.get(stype, ()))
        if self.kind == SourceKind.DBName:
            return self.bank.pool(stype)
        return ()


def build_indist_pool(d, meta, dedup=True):
    """Pools of in-distribution names: the perturbable spans found in the gold answers of d.

    Args:
        d (Dataset): The test set.
        meta (list): InstanceMetadata of d.
        dedup (bool, optional): Draw uniformly over distinct names (True) or over
            occurrences (False). Defaults to True.

    Returns:
        dict: SpanType to tuple of surfaces, every span type present.
    """
    qids = {inst.qid for inst in d}
    pools = {stype: [] for stype in SpanType}
    for item in meta:
        if item.qid not in qids:
            continue
        for _, spans in item.mentions:
            for span in spans:
                pools[span.stype].append(span.surface)
    if dedup:
        return {stype: tuple(sorted(set(surfaces))) for stype, surfaces in pools.items()}
    return {stype: tuple(surfaces) for stype, surfaces in pools.items()}


def rand_str(original, rng):
    """Random letters in the shape of `original`: same length, same case per position,
        non-alphabetic characters kept in place. Letters with no case become lowercase."""
    draws = rng.integers(0, 26, size=len(original))
    chars = []
    for char, draw in zip(original, draws):
        if char.isalpha():
            alphabet = string.ascii_uppercase if char.isupper() else string.ascii_lowercase
            chars.append(alphabet[draw])
        else:
            chars.append(char)
    return ''.join(chars)


def _match_casing(candidate, original):
    if len(original) > 1 and original.isupper():
        return candidate.upper()
    if original[:1].isupper():
        return candidate[:1].upper() + candidate[1:]
    return candidate


def sample_candidate(stype, src, original, rng):
    """Draws the substitute of one perturbable span.

    Args:
        stype (SpanType): Type of the span.
        src (PerturbationSource): Where substitutes come from.
        original (str): The span surface, never returned as its own substitute.
        rng (numpy.random.Generator): Random state.

    Returns:
        Candidate: The substitute. `skipped` is True (and the text is the original) for rare words
            under DBName, and for a fixed name equal to the original.
    """
    stype = SpanType(stype)
    if src.kind == SourceKind.FixedName:
        return Candidate(src.name, skipped=src.name == original)
    if src.kind == SourceKind.DBName and stype == SpanType.Rare:
        return Candidate(original, skipped=True)

    if src.kind == SourceKind.RandStr:
        draw = lambda: rand_str(original, rng)
    else:
        pool = src.pool(stype)
        if not any(name != original for name in pool):
            raise UnsatisfiableSampleError(
                f'No {src.label} candidate of type {stype.value} other than `{original}` (pool size {len(pool)})',
                stype=stype)
        recase = src.kind == SourceKind.DBName and stype == SpanType.Nnp
        draw = lambda: _match_casing(pool[rng.integers(len(pool))], original) if recase else pool[rng.integers(len(pool))]

    for _ in range(MAX_RESAMPLES):
        candidate = draw()
        if candidate != original:
            return Candidate(candidate)
    raise UnsatisfiableSampleError(
        f'No {src.label} candidate of type {stype.value} differing from `{original}` after {MAX_RESAMPLES} draws',
        stype=stype)
