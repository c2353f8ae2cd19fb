"""Answer entity recognition and perturbable span identification.

Answer entities come either from an annotation file produced by an external
NER system or from a small gazetteer tagger built on a NameBank. Each entity
mention is then split into perturbable spans whose types depend on the
entity type:

    PER : FirstNameMale, FirstNameFemale, FirstNameNeutral, LastName
    ORG : Nnp, Rare, GpeCountry, GpeState, GpeCity
    GPE : GpeCountry, GpeState, GpeCity
"""
import logging
from collections.abc import Mapping
from dataclasses import dataclass
from enum import Enum

from MrcEntityAudit.corpus import Dataset, read_jsonl_records, word_tokens, tokenize
from MrcEntityAudit.errors import DatasetFormatError, ValidationError

logger = logging.getLogger(__name__)


class EntityType(str, Enum):
    PER = 'PER'
    ORG = 'ORG'
    GPE = 'GPE'


class SpanType(str, Enum):
    FirstNameMale = 'FirstNameMale'
    FirstNameFemale = 'FirstNameFemale'
    FirstNameNeutral = 'FirstNameNeutral'
    LastName = 'LastName'
    Nnp = 'Nnp'
    Rare = 'Rare'
    GpeCountry = 'GpeCountry'
    GpeState = 'GpeState'
    GpeCity = 'GpeCity'


FIRST_NAME_TYPES = (SpanType.FirstNameMale, SpanType.FirstNameFemale, SpanType.FirstNameNeutral)
GPE_TYPES = (SpanType.GpeCountry, SpanType.GpeState, SpanType.GpeCity)

APPLICABLE_SPAN_TYPES = {
    EntityType.PER: frozenset(FIRST_NAME_TYPES + (SpanType.LastName,)),
    EntityType.ORG: frozenset((SpanType.Nnp, SpanType.Rare) + GPE_TYPES),
    EntityType.GPE: frozenset(GPE_TYPES),
}

# Words that mark an organisation name in the builtin tagger.
ORG_CUES = frozenset({
    'Academy', 'Agency', 'Airlines', 'Army', 'Association', 'Band', 'Bank', 'Church', 'Club', 'Co',
    'College', 'Committee', 'Company', 'Corp', 'Corporation', 'Council', 'Department', 'FC',
    'Foundation', 'Group', 'Hospital', 'Inc', 'Institute', 'League', 'Ltd', 'Museum', 'Navy',
    'Orchestra', 'Party', 'Press', 'Records', 'School', 'Society', 'Studios', 'Union', 'University',
})


@dataclass(frozen=True)
class EntityMention:
    etype: EntityType
    char_start: int
    char_end: int
    surface: str


@dataclass(frozen=True)
class PerturbableSpan:
    stype: SpanType
    char_start: int
    char_end: int
    surface: str


@dataclass(frozen=True)
class InstanceMetadata:
    qid: str
    mentions: tuple = ()

    def mentions_of(self, types):
        types = {EntityType(etype) for etype in types}
        return [(mention, spans) for mention, spans in self.mentions if mention.etype in types]

    def is_perturbable(self, types):
        return any(spans for _, spans in self.mentions_of(types))

    def perturbable_types(self):
        return {mention.etype for mention, spans in self.mentions if spans}


class AnnotationIndex(Mapping):
    """Mentions from an annotation file, indexed by qid.

    Each value is a tuple of (EntityType, char_start, char_end) triples.
    """

    def __init__(self, mentions_by_qid, path=None):
        self._mentions = dict(mentions_by_qid)
        self.path = path

    def __getitem__(self, qid):
        return self._mentions[qid]

    def __iter__(self):
        return iter(self._mentions)

    def __len__(self):
        return len(self._mentions)


def load_annotations(path):
    """Reads an annotation file: one {"qid", "mentions": [{"type", "char_start", "char_end"}]} per line.

    Args:
        path (str): The JSONL file (optionally gzip-compressed).

    Returns:
        AnnotationIndex: The mentions, keyed by qid.
    """
    mentions_by_qid = {}
    for line_number, record in read_jsonl_records(path):
        try:
            mentions = tuple((EntityType(mention['type']), int(mention['char_start']), int(mention['char_end']))
                             for mention in record['mentions'])
            mentions_by_qid.setdefault(record['qid'], ())
            mentions_by_qid[record['qid']] += mentions
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f'Malformed annotation line | {e!r}', path=path, line_number=line_number) from e
    logger.info('Loaded annotations | %s | %d qids', path, len(mentions_by_qid))
    return AnnotationIndex(mentions_by_qid, path=path)


def _trimmed(text, start, end):
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def _answer_ranges(inst):
    ranges = []
    for span in inst.gold_answers:
        start, end = _trimmed(inst.passage, span.char_start, span.char_end)
        if start < end and (start, end) not in ranges:
            ranges.append((start, end))
    return ranges


def _is_capitalized(token):
    return token.text[:1].isupper()


def tag_surface(surface, bank):
    """Labels an answer string by gazetteer vote, GPE before PER before ORG.

    Args:
        surface (str): The answer text.
        bank (NameBank): Provides the gazetteer and the name dictionaries.

    Returns:
        EntityType: The label, or None when the answer does not look like a named entity.
    """
    words = word_tokens(surface)
    if not words:
        return None
    if bank.gpe_level(surface) is not None:
        return EntityType.GPE
    if all(_is_capitalized(word) for word in words) and len(words) == len(tokenize(surface)):
        if len(words) == 1 and bank.is_first_name(words[0].text):
            return EntityType.PER
        if len(words) == 2 and bank.is_first_name(words[0].text) and bank.is_last_name(words[1].text):
            return EntityType.PER
    if _is_capitalized(words[0]):
        return EntityType.ORG
    has_cue = any(word.text in ORG_CUES for word in words)
    has_name_word = any(_is_capitalized(word) and (bank.is_nnp(word.text) or not bank.in_ptb(word.text))
                        for word in words)
    if has_cue and (has_name_word or _gpe_matches(surface, words, bank)):
        return EntityType.ORG
    return None


def recognize_answer_entities(inst, source):
    """Finds the named entities that are gold answers of an instance.

    Args:
        inst (MrcInstance): The instance.
        source (AnnotationIndex or NameBank): An annotation file index, whose mentions are kept
            when their range equals a gold answer range after trimming whitespace, or a name
            bank driving the builtin tagger.

    Returns:
        list: EntityMention objects in gold answer order. Empty when nothing was found.
    """
    ranges = _answer_ranges(inst)
    mentions = []
    if isinstance(source, AnnotationIndex):
        for etype, start, end in source.get(inst.qid, ()):
            start, end = _trimmed(inst.passage, max(start, 0), min(end, len(inst.passage)))
            if (start, end) in ranges:
                mention = EntityMention(etype, start, end, inst.passage[start:end])
                if mention not in mentions:
                    mentions.append(mention)
    else:
        for start, end in ranges:
            etype = tag_surface(inst.passage[start:end], source)
            if etype is not None:
                mentions.append(EntityMention(etype, start, end, inst.passage[start:end]))
    mentions.sort(key=lambda mention: (mention.char_start, mention.char_end))
    return mentions


def _gpe_matches(surface, words, bank):
    """Greedy longest-first gazetteer matching over word tokens.
        Returns (level SpanType, first word index, last word index + 1) triples."""
    matches = []
    i = 0
    while i < len(words):
        for j in range(min(len(words), i + bank.max_gpe_words), i, -1):
            phrase = surface[words[i].char_start:words[j - 1].char_end]
            stype = bank.gpe_level(phrase)
            if stype is not None:
                matches.append((stype, i, j))
                i = j
                break
        else:
            i += 1
    return matches


def identify_perturbable_spans(m, bank):
    """Splits an entity mention into typed perturbable spans.

    Person names count only with one word (a first name) or two words (first and last name).
    Places are matched against the gazetteer, longest match first. Organisations take
    gazetteer matches plus NNP and rare words.

    Args:
        m (EntityMention): The mention.
        bank (NameBank): Name dictionaries, gazetteer and PTB-derived word lists.

    Returns:
        list: PerturbableSpan objects ordered by offset, pairwise disjoint. Empty when nothing applies.
    """
    words = word_tokens(m.surface)

    def make_span(stype, first, last):
        start, end = words[first].char_start, words[last].char_end
        return PerturbableSpan(SpanType(stype), m.char_start + start, m.char_start + end, m.surface[start:end])

    if m.etype == EntityType.PER:
        if len(words) == 1:
            return [make_span(bank.first_name_type(words[0].text), 0, 0)]
        if len(words) == 2:
            return [make_span(bank.first_name_type(words[0].text), 0, 0), make_span(SpanType.LastName, 1, 1)]
        return []

    spans = []
    covered = set()
    for stype, first, end in _gpe_matches(m.surface, words, bank):
        spans.append(make_span(stype, first, end - 1))
        covered.update(range(first, end))

    if m.etype == EntityType.ORG:
        for index, word in enumerate(words):
            if index in covered or not any(char.isalpha() for char in word.text):
                continue
            if bank.is_nnp(word.text):
                spans.append(make_span(SpanType.Nnp, index, index))
            elif not bank.in_ptb(word.text):
                spans.append(make_span(SpanType.Rare, index, index))

    spans.sort(key=lambda span: span.char_start)
    return spans


def annotate_instance(inst, source, bank):
    mentions = recognize_answer_entities(inst, source)
    return InstanceMetadata(inst.qid, tuple((mention, tuple(identify_perturbable_spans(mention, bank)))
                                            for mention in mentions))


def annotate_dataset(d, bank, annotations=None):
    """Finds the answer entities and their perturbable spans for every instance.

    Args:
        d (Dataset): The dataset.
        bank (NameBank): Used for span identification, and for tagging when no annotations are given.
        annotations (AnnotationIndex, optional): External answer entity annotations. Defaults to None.

    Returns:
        list: One InstanceMetadata per instance, in dataset order.
    """
    source = annotations if annotations is not None else bank
    if annotations is not None:
        missing = sum(1 for inst in d if inst.qid not in annotations)
        if missing:
            logger.warning('Instances without annotations were skipped | %s | %d of %d', d.source_name, missing, len(d))
    meta = [annotate_instance(inst, source, bank) for inst in d]
    counts = subset_counts(meta)
    logger.info('Annotated dataset | %s | PER=%d ORG=%d GPE=%d MIX=%d', d.source_name,
                counts['PER'], counts['ORG'], counts['GPE'], counts['MIX'])
    return meta


def filter_perturbable_subset(d, meta, types):
    """Keeps the instances that are perturbable for at least one of the requested entity types.

    Args:
        d (Dataset): The dataset.
        meta (list): InstanceMetadata covering every instance of d.
        types (set): Entity types of interest. All three gives the MIX subset.

    Returns:
        Dataset: The subset, in the original order.
    """
    meta_by_qid = {item.qid: item for item in meta}
    kept = []
    for inst in d:
        if inst.qid not in meta_by_qid:
            raise ValidationError('No metadata for instance', qid=inst.qid)
        if meta_by_qid[inst.qid].is_perturbable(types):
            kept.append(inst)
    return Dataset(tuple(kept), d.source_name)


def subset_counts(meta):
    """Sizes of the perturbable subsets per entity type and of their union (MIX)."""
    counts = {etype.value: sum(1 for item in meta if item.is_perturbable({etype})) for etype in EntityType}
    counts['MIX'] = sum(1 for item in meta if item.is_perturbable(set(EntityType)))
    return counts


def entity_tokens(surfaces):
    """Word tokens of entity surfaces, case-sensitive, as a list (repeats kept)."""
    return [token.text for surface in surfaces for token in word_tokens(surface)]


def answer_entity_tokens(meta):
    return set(entity_tokens(mention.surface for item in meta for mention, _ in item.mentions))


def passage_entity_tokens(d, annotations):
    """Tokens of every annotated entity in the passages of d, answers or not."""
    surfaces = []
    for inst in d:
        for _, start, end in annotations.get(inst.qid, ()):
            surfaces.append(inst.passage[max(start, 0):min(end, len(inst.passage))])
    return set(entity_tokens(surfaces))
