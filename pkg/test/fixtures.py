"""Name bank and datasets built in code for the test suite."""
from pathlib import Path

from MrcEntityAudit.corpus import AnswerSpan, Dataset, MrcInstance, write_jsonl_records
from MrcEntityAudit.namebank import GPE_LEVELS, NameBank, NameRecord, load_name_bank

FIRST_NAMES = [
    ('James', 4818, 23), ('John', 5168, 21), ('Robert', 4834, 20), ('Michael', 4388, 21), ('David', 3624, 13),
    ('Jack', 900, 5), ('Morton', 120, 0),
    ('Mary', 14, 4130), ('Linda', 5, 1452), ('Susan', 3, 1121), ('Sarah', 2, 1078), ('Karen', 4, 985),
    ('Oprah', 0, 30), ('Ada', 2, 300),
    ('Casey', 117, 79), ('Riley', 97, 95), ('Quinn', 32, 34), ('Charlie', 81, 64), ('Rowan', 30, 24),
]
LAST_NAMES = ['Smith', 'Johnson', 'Brown', 'Miller', 'Davis', 'Wilson', 'Clark', 'Lewis',
              'Winfrey', 'Lovelace', 'Higgins', 'Tolkien']
GPE = [
    ('Iceland', 'country'), ('Algeria', 'country'), ('Canada', 'country'), ('Mexico', 'country'),
    ('France', 'country'), ('Georgia', 'country'),
    ('New Brunswick', 'state'), ('Ohio', 'state'), ('Texas', 'state'), ('Georgia', 'state'), ('New York', 'state'),
    ('Boston', 'city'), ('Chicago', 'city'), ('Denver', 'city'), ('Paris', 'city'), ('Lagos', 'city'),
    ('New York', 'city'),
]
NNP = ['acme', 'summit', 'vanguard', 'zenith', 'orion', 'falcon']
PTB_VOCAB = NNP + [
    'a', 'an', 'and', 'at', 'by', 'for', 'from', 'in', 'of', 'on', 'the', 'to', 'with',
    'bank', 'company', 'corporation', 'group', 'records', 'university', 'ltd', 'inc', 'press', 'union',
]

PER_FIRST = ['James', 'John', 'Michael', 'David', 'Jack', 'Mary', 'Linda', 'Susan', 'Sarah', 'Karen',
             'Casey', 'Riley', 'Quinn', 'Charlie', 'Rowan']
PER_LAST = ['Smith', 'Johnson', 'Brown', 'Miller', 'Davis', 'Wilson', 'Clark', 'Lewis']
PLACES = ['Boston', 'Chicago', 'Denver', 'Paris', 'Lagos', 'Ohio', 'Texas', 'New Brunswick', 'New York',
          'Iceland', 'Algeria', 'Canada', 'Georgia']
COUNTRIES = ['Iceland', 'Algeria', 'Canada', 'Mexico', 'France']
CUES = ['Corporation', 'Group', 'Press', 'Union']
RARE = ['Zentrix', 'Velmora', 'Korvath', 'Drellin', 'Quillon']


def make_bank(origin_tag='Test'):
    return NameBank(first_names=[NameRecord(*row) for row in FIRST_NAMES], last_names=LAST_NAMES,
                    gpe=_gpe_levels(), nnp=NNP, ptb_vocab=PTB_VOCAB, origin_tag=origin_tag)


def _gpe_levels():
    levels = {}
    for name, level in GPE:
        levels.setdefault(name, set()).add(GPE_LEVELS[level])
    return levels


def write_bank(directory):
    """Writes the fixture bank as bank files and returns the directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ['name,male_freq,female_freq'] + [f'{name},{male},{female}' for name, male, female in FIRST_NAMES]
    (directory / 'first_names.csv').write_text('\n'.join(lines) + '\n', encoding='utf-8')
    (directory / 'last_names.txt').write_text('\n'.join(LAST_NAMES) + '\n', encoding='utf-8')
    lines = ['name,level'] + [f'{name},{level}' for name, level in GPE]
    (directory / 'gpe.csv').write_text('\n'.join(lines) + '\n', encoding='utf-8')
    (directory / 'nnp.txt').write_text('\n'.join(NNP) + '\n', encoding='utf-8')
    (directory / 'ptb_vocab.txt').write_text('\n'.join(PTB_VOCAB) + '\n', encoding='utf-8')
    return directory


def load_fixture_bank(directory):
    return load_name_bank(write_bank(directory), origin_tag='Test')


def make_instance(qid, question, passage, answer, occurrence=0, aliases=()):
    """Instance whose gold answer is the occurrence-th match of `answer` in the passage."""
    start = -1
    for _ in range(occurrence + 1):
        start = passage.index(answer, start + 1)
    return MrcInstance(qid=qid, question=question, passage=passage,
                       gold_answers=(AnswerSpan(answer, start, start + len(answer)),), aliases=tuple(aliases))


def synthetic_dataset(n=240, name='synth'):
    """Instances cycling over PER, GPE and ORG answers and answers that are not entities.

    Of every four instances, one each has a two-word person name, a place, an organisation
    and a number as the answer.
    """
    instances = []
    for i in range(n):
        kind, j = i % 4, i // 4
        year = 1800 + i
        qid = f'{name}-{i:04d}'
        if kind == 0:
            first = PER_FIRST[j % len(PER_FIRST)]
            last = PER_LAST[(j + j // len(PER_FIRST)) % len(PER_LAST)]
            answer = f'{first} {last}'
            passage = f'{answer} opened a bakery in {year}. Years later, {first} sold it to a rival.'
            question = f'Who opened a bakery in {year}?'
        elif kind == 1:
            answer = PLACES[j % len(PLACES)]
            passage = f'The fair of {year} was held in {answer}, drawing large crowds.'
            question = f'Where was the fair of {year} held?'
        elif kind == 2:
            nnp = NNP[j % len(NNP)].title()
            variant = j % 3
            if variant == 0:
                answer = f'{nnp} {CUES[j % len(CUES)]}'
            elif variant == 1:
                answer = f'Bank of {COUNTRIES[j % len(COUNTRIES)]}'
            else:
                answer = f'{nnp} {RARE[j % len(RARE)]} Records'
            passage = f'The engine was built by {answer} in {year}. Engineers at {answer} praised it.'
            question = f'Who built the engine in {year}?'
        else:
            answer = str(3 + j % 20)
            passage = f'The bridge took {answer} years to build and opened in {year}.'
            question = f'How many years did the bridge of {year} take?'
        instances.append(make_instance(qid, question, passage, answer))
    return Dataset(tuple(instances), name)


def write_mrqa(d, path, split='test'):
    """Writes a dataset in the MRQA layout, one context per instance, inclusive span ends."""
    records = [{'header': {'dataset': d.source_name, 'split': split}}]
    for inst in d:
        records.append({
            'context': inst.passage,
            'qas': [{
                'qid': inst.qid,
                'question': inst.question,
                'detected_answers': [{'text': span.text, 'char_spans': [[span.char_start, span.char_end - 1]]}
                                     for span in inst.gold_answers],
                'answers': [span.text for span in inst.gold_answers] + list(inst.aliases),
            }],
        })
    write_jsonl_records(records, path)
    return Path(path)


def write_annotations(mentions_by_qid, path):
    """mentions_by_qid: qid to list of (type, char_start, char_end)."""
    records = [{'qid': qid, 'mentions': [{'type': etype, 'char_start': start, 'char_end': end}
                                         for etype, start, end in mentions]}
               for qid, mentions in mentions_by_qid.items()]
    write_jsonl_records(records, path)
    return Path(path)
