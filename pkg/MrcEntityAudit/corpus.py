"""Datasets of extractive reading-comprehension instances.

Offsets count Unicode code points (Python str indices) and ends are exclusive,
everywhere in the package. MRQA files store inclusive ends; they are converted
on load.

Naming convention:
    `instance` : one (question, passage, gold answers) record, identified by its `qid`.
    `answer span` : a gold answer located in the passage by character offsets.
    `aliases` : gold answer strings without offsets. They count for exact match
        but are never perturbed.
"""
import io
import gzip
import logging
import unicodedata
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import jsonlines
from tqdm import tqdm

from MrcEntityAudit.errors import DatasetFormatError, ValidationError

logger = logging.getLogger(__name__)

FORMATS = ('mrqa_jsonl', 'plain_jsonl')


@dataclass(frozen=True)
class AnswerSpan:
    text: str
    char_start: int
    char_end: int

    def __post_init__(self):
        if not 0 <= self.char_start < self.char_end:
            raise ValidationError(f'Answer span [{self.char_start}, {self.char_end}) is empty or negative')
        if len(self.text) != self.char_end - self.char_start:
            raise ValidationError(f'Answer text `{self.text}` does not fit span [{self.char_start}, {self.char_end})')


@dataclass(frozen=True)
class MrcInstance:
    qid: str
    question: str
    passage: str
    gold_answers: tuple
    aliases: tuple = ()
    split_tag: str = None

    def validate(self):
        """Checks answer offsets and texts, raising ValidationError naming the qid."""
        if not self.qid:
            raise ValidationError('Empty qid')
        if not self.gold_answers:
            raise ValidationError('No gold answer with passage offsets', qid=self.qid)
        for span in self.gold_answers:
            if span.char_end > len(self.passage):
                raise ValidationError(f'Answer span [{span.char_start}, {span.char_end}) exceeds the passage', qid=self.qid)
            if self.passage[span.char_start:span.char_end] != span.text:
                raise ValidationError(
                    f'Passage text `{self.passage[span.char_start:span.char_end]}` differs from answer `{span.text}`',
                    qid=self.qid)
        return self

    def gold_texts(self):
        """All gold answer strings, located spans first then aliases, without repeats."""
        texts = [span.text for span in self.gold_answers] + list(self.aliases)
        return list(dict.fromkeys(texts))


@dataclass(frozen=True)
class Dataset:
    instances: tuple
    source_name: str

    def __post_init__(self):
        object.__setattr__(self, 'instances', tuple(self.instances))

    def __len__(self):
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    def by_qid(self):
        return {instance.qid: instance for instance in self.instances}

    def validate(self):
        seen = set()
        for instance in self.instances:
            instance.validate()
            if instance.qid in seen:
                raise ValidationError('Duplicate qid in dataset', qid=instance.qid)
            seen.add(instance.qid)
        return self


@dataclass(frozen=True)
class TokenSpan:
    text: str
    char_start: int
    char_end: int


def _is_punctuation(char):
    return unicodedata.category(char).startswith('P')


def tokenize(s):
    """Splits on whitespace, then peels leading and trailing punctuation characters
        off each chunk, one token per punctuation character.

    Args:
        s (str): Any string.

    Returns:
        list: TokenSpan objects in order; `s[t.char_start:t.char_end] == t.text` for each.
    """
    tokens = []
    position, length = 0, len(s)
    while position < length:
        if s[position].isspace():
            position += 1
            continue
        start = position
        while position < length and not s[position].isspace():
            position += 1
        end = position

        head = start
        while head < end and _is_punctuation(s[head]):
            tokens.append(TokenSpan(s[head], head, head + 1))
            head += 1
        tail = end
        while tail > head and _is_punctuation(s[tail - 1]):
            tail -= 1
        if head < tail:
            tokens.append(TokenSpan(s[head:tail], head, tail))
        for index in range(tail, end):
            tokens.append(TokenSpan(s[index], index, index + 1))
    return tokens


def word_tokens(s):
    """Tokens of `s` that hold at least one letter or digit."""
    return [token for token in tokenize(s) if any(char.isalnum() for char in token.text)]


# JSONL plumbing

@contextmanager
def open_text(path, mode='r'):
    """Opens a UTF-8 text file, gzip-compressed when the name ends in `.gz`.
        Compressed output gets a fixed header timestamp so equal content gives equal bytes."""
    path = Path(path)
    if path.suffix == '.gz':
        if mode == 'r':
            with gzip.open(path, 'rt', encoding='utf-8') as fh:
                yield fh
        else:
            with open(path, 'wb') as raw, \
                    gzip.GzipFile(filename='', mode='wb', fileobj=raw, mtime=0) as compressed, \
                    io.TextIOWrapper(compressed, encoding='utf-8', newline='\n') as fh:
                yield fh
    else:
        with open(path, mode, encoding='utf-8', newline='\n' if mode != 'r' else None) as fh:
            yield fh


def read_jsonl_records(path):
    """Yields (line_number, record) for every non-empty line, raising
        DatasetFormatError with the line number on malformed JSON."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f'File not found | {path}')
    with open_text(path) as fh:
        position = [0]

        def numbered_lines():
            for position[0], line in enumerate(fh, start=1):
                yield line

        reader = jsonlines.Reader(numbered_lines())
        try:
            for record in reader.iter(type=dict, skip_empty=True):
                yield position[0], record
        except jsonlines.InvalidLineError as e:
            raise DatasetFormatError(f'Malformed JSON line | {e}', path=path, line_number=e.lineno) from e


def write_jsonl_records(records, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open_text(path, 'w') as fh:
        writer = jsonlines.Writer(fh, compact=True, sort_keys=False)
        for record in records:
            writer.write(record)


# Datasets

def _header_of(record):
    header = record.get('header')
    return header if isinstance(header, dict) else None


def _parse_mrqa_context(record, path, line_number, split_tag):
    try:
        context = record['context']
        qas = record['qas']
    except KeyError as e:
        raise DatasetFormatError(f'MRQA context line lacks key {e}', path=path, line_number=line_number) from e

    instances = []
    for qa in qas:
        try:
            qid = qa['qid'] if 'qid' in qa else qa['id']
            question = qa['question']
            spans = []
            for detected in qa.get('detected_answers', []):
                for start, end_inclusive in detected['char_spans']:
                    spans.append(AnswerSpan(detected['text'], int(start), int(end_inclusive) + 1))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise ValidationError(str(e), qid=qa.get('qid', qa.get('id'))) from e
            raise DatasetFormatError(f'Malformed question entry | {e!r}', path=path, line_number=line_number) from e
        aliases = tuple(answer for answer in qa.get('answers', []) if answer not in {span.text for span in spans})
        instance = MrcInstance(qid=qid, question=question, passage=context, gold_answers=tuple(spans),
                               aliases=aliases, split_tag=split_tag)
        instances.append(instance.validate())
    return instances


def _parse_plain(record, path, line_number):
    try:
        spans = tuple(AnswerSpan(answer['text'], int(answer['char_start']), int(answer['char_end']))
                      for answer in record['answers'])
        instance = MrcInstance(qid=record['qid'], question=record['question'], passage=record['passage'],
                               gold_answers=spans, aliases=tuple(record.get('aliases', ())),
                               split_tag=record.get('split_tag'))
    except ValidationError as e:
        raise ValidationError(str(e), qid=record.get('qid')) from e
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(f'Malformed instance line | {e!r}', path=path, line_number=line_number) from e
    return instance.validate()


def load_dataset(path, format='mrqa_jsonl', progress=False):
    """Loads a dataset, one instance per (context, question) pair, in file order.

    Args:
        path (str): A `.jsonl` or `.jsonl.gz` file.
        format (str, optional): `mrqa_jsonl` (header line then one context per line) or
            `plain_jsonl` (one instance per line, as written by write_dataset). Defaults to 'mrqa_jsonl'.
        progress (bool, optional): Show a progress bar. Defaults to False.

    Returns:
        Dataset: The validated instances.
    """
    if format not in FORMATS:
        raise DatasetFormatError(f'Unknown dataset format `{format}`, expected one of {FORMATS}')
    path = Path(path)
    source_name = path.name.split('.')[0]
    split_tag = None
    instances = []
    records = read_jsonl_records(path)
    for line_number, record in tqdm(records, desc=f'Reading {path.name}', disable=not progress):
        header = _header_of(record)
        if header is not None:
            if line_number != 1:
                raise DatasetFormatError('Header object found after the first line', path=path, line_number=line_number)
            source_name = header.get('dataset', source_name)
            split_tag = header.get('split')
            continue
        if format == 'mrqa_jsonl':
            if line_number == 1:
                raise DatasetFormatError('MRQA file must start with a header object', path=path, line_number=1)
            instances.extend(_parse_mrqa_context(record, path, line_number, split_tag))
        else:
            instances.append(_parse_plain(record, path, line_number))

    dataset = Dataset(tuple(instances), source_name).validate()
    logger.info('Loaded dataset | %s | %s | %d instances', source_name, path, len(dataset))
    return dataset


def instance_to_record(instance):
    record = {
        'qid': instance.qid,
        'question': instance.question,
        'passage': instance.passage,
        'answers': [{'text': span.text, 'char_start': span.char_start, 'char_end': span.char_end}
                    for span in instance.gold_answers],
    }
    if instance.aliases:
        record['aliases'] = list(instance.aliases)
    if instance.split_tag is not None:
        record['split_tag'] = instance.split_tag
    return record


def write_dataset(d, path):
    """Writes a dataset in the plain_jsonl format: a header line, then one instance per line.

    Args:
        d (Dataset): The dataset to write.
        path (str): Target file, gzip-compressed when it ends in `.gz`.
    """
    header = {'header': {'dataset': d.source_name, 'format': 'plain_jsonl'}}
    write_jsonl_records([header] + [instance_to_record(instance) for instance in d.instances], path)
    logger.info('Wrote dataset | %s | %s | %d instances', d.source_name, path, len(d))
