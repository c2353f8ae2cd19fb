import json
import tempfile
import time
import unittest
from pathlib import Path

import pandas as pd

from MrcEntityAudit.cli import main
from MrcEntityAudit.config import PACKAGED_DATA_DIR, merge_settings
from MrcEntityAudit.corpus import Dataset, write_dataset
from MrcEntityAudit.masker import MaskingPolicy, emit_masked_corpus
from MrcEntityAudit.namebank import load_name_bank
from MrcEntityAudit.perturber import read_plans

from test.fixtures import make_instance, synthetic_dataset, write_bank, write_mrqa

QUIET = ['--log-level', 'ERROR']


def _perturb(dataset, bank, out_dir, *extra):
    return main(['perturb', '--dataset', str(dataset), '--name-bank', str(bank), '--output-dir', str(out_dir),
                 '--emit-oracle', *extra, *QUIET])


class CliTestCase(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)
        self.bank = write_bank(self.dir / 'bank')

    def tearDown(self):
        self.tmp.cleanup()


class TestPerturbCommand(CliTestCase):
    @classmethod
    def setUpClass(cls):
        cls.shared = tempfile.TemporaryDirectory()
        root = Path(cls.shared.name)
        cls.dataset = write_mrqa(synthetic_dataset(240), root / 'synth.jsonl')
        cls.shared_bank = write_bank(root / 'bank')
        cls.out = root / 'out'
        cls.code = _perturb(cls.dataset, cls.shared_bank, cls.out)

    @classmethod
    def tearDownClass(cls):
        cls.shared.cleanup()

    def test_manifest(self):
        """All three entity types give the MIX subset, five seeds and their files"""
        self.assertEqual(self.code, 0)
        manifest = json.loads((self.out / 'manifest.DBName.MIX.json').read_text(encoding='utf-8'))
        entry, = manifest['datasets']
        self.assertEqual(entry['counts'], {'PER': 60, 'ORG': 60, 'GPE': 60, 'MIX': 180})
        self.assertEqual(entry['n_instances'], 240)
        self.assertEqual(entry['n_perturbed'], 180)
        self.assertEqual(entry['failures'], [])
        self.assertEqual([seed['index'] for seed in entry['seeds']], [0, 1, 2, 3, 4])
        for index in range(5):
            self.assertTrue((self.out / f'synth.DBName.MIX.seed{index}.jsonl').is_file())
            self.assertTrue((self.out / f'synth.DBName.MIX.seed{index}.plans.jsonl').is_file())
            self.assertTrue((self.out / f'synth.DBName.MIX.seed{index}.oracle.json').is_file())
        self.assertTrue((self.out / 'synth.MIX.original.jsonl').is_file())
        self.assertEqual(manifest['versions']['mrc-entity-audit'], '0.1.0')

    def test_deterministic(self):
        """A second run with the same settings writes identical bytes"""
        with tempfile.TemporaryDirectory() as tmp:
            again = Path(tmp) / 'out'
            self.assertEqual(_perturb(self.dataset, self.shared_bank, again), 0)
            names = sorted(path.name for path in self.out.iterdir())
            self.assertEqual(names, sorted(path.name for path in again.iterdir()))
            for name in names:
                self.assertEqual((self.out / name).read_bytes(), (again / name).read_bytes(), name)

    def test_evaluate_oracle(self):
        """The oracle predictions score 100 on every seed"""
        datasets = [str(self.out / f'synth.DBName.MIX.seed{index}.jsonl') for index in range(5)]
        oracles = [str(self.out / f'synth.DBName.MIX.seed{index}.oracle.json') for index in range(5)]
        with tempfile.TemporaryDirectory() as tmp:
            code = main(['evaluate', '--dataset', *datasets, '--predictions', *oracles, '--condition', 'DBName',
                         '--output-dir', tmp, *QUIET])
            self.assertEqual(code, 0)
            report = json.loads((Path(tmp) / 'synth.DBName.report.json').read_text(encoding='utf-8'))
            table = pd.read_csv(Path(tmp) / 'synth.DBName.results.tsv', sep='\t', index_col=0)
        self.assertEqual(report['mean'], 100.0)
        self.assertEqual(report['formatted'], '100.0±0.0')
        self.assertEqual(report['seed_em'], [[100.0] * 5])
        self.assertEqual(report['n'], 180)
        self.assertEqual(table.loc['DBName', 'synth'], '100.0±0.0')
        self.assertEqual({etype: summary['formatted'] for etype, summary in report['per_type_em'].items()},
                         {'PER': '100.0±0.0', 'ORG': '100.0±0.0', 'GPE': '100.0±0.0'})

    def test_evaluate_per_type_from_plans(self):
        """Entity types come from the plans sidecars; blanking every person answer gives PER 0"""
        datasets = [str(self.out / f'synth.DBName.MIX.seed{index}.jsonl') for index in range(5)]
        with tempfile.TemporaryDirectory() as tmp:
            predictions = []
            for index in range(5):
                oracle_path = self.out / f'synth.DBName.MIX.seed{index}.oracle.json'
                oracle = json.loads(oracle_path.read_text(encoding='utf-8'))
                blanked = {qid: '' if int(qid[-4:]) % 4 == 0 else answer for qid, answer in oracle.items()}
                path = Path(tmp) / f'seed{index}.json'
                path.write_text(json.dumps(blanked), encoding='utf-8')
                predictions.append(str(path))
            code = main(['evaluate', '--dataset', *datasets, '--predictions', *predictions, '--condition', 'blanked',
                         '--report-formats', 'json', '--output-dir', tmp, *QUIET])
            self.assertEqual(code, 0)
            report = json.loads((Path(tmp) / 'synth.blanked.report.json').read_text(encoding='utf-8'))
        self.assertEqual({etype: summary['mean'] for etype, summary in report['per_type_em'].items()},
                         {'PER': 0.0, 'ORG': 100.0, 'GPE': 100.0})
        self.assertAlmostEqual(report['mean'], 200.0 / 3)

    def test_audit_sheets(self):
        """One sheet of thirty rows per entity type"""
        with tempfile.TemporaryDirectory() as tmp:
            code = main(['audit', '--original', str(self.dataset), '--perturbed',
                         str(self.out / 'synth.DBName.MIX.seed0.jsonl'), '--output-dir', tmp, *QUIET])
            self.assertEqual(code, 0)
            sheets = sorted(Path(tmp).glob('*.tsv'))
            self.assertEqual([sheet.name for sheet in sheets],
                             [f'synth.DBName.MIX.seed0.audit.{etype}.tsv' for etype in ('GPE', 'ORG', 'PER')])
            for sheet in sheets:
                self.assertEqual(len(pd.read_csv(sheet, sep='\t', dtype=str, keep_default_na=False)), 30)

    def test_audit_score(self):
        """Filled sheets are summarised in one table"""
        with tempfile.TemporaryDirectory() as tmp:
            main(['audit', '--original', str(self.dataset), '--perturbed',
                  str(self.out / 'synth.DBName.MIX.seed0.jsonl'), '--output-dir', tmp, '--entity-types', 'PER', *QUIET])
            sheet_path = Path(tmp) / 'synth.DBName.MIX.seed0.audit.PER.tsv'
            sheet = pd.read_csv(sheet_path, sep='\t', dtype=str, keep_default_na=False)
            sheet['span_correct'] = ['y'] * 28 + ['n'] * 2
            sheet['substitution_correct'] = ['y'] * 30
            sheet.to_csv(sheet_path, sep='\t', index=False)
            self.assertEqual(main(['audit', '--score', str(sheet_path), '--output-dir', tmp, *QUIET]), 0)
            summary = pd.read_csv(Path(tmp) / 'audit_summary.tsv', sep='\t')
        self.assertEqual(summary.loc[0, 'span_identification'], 93.3)
        self.assertEqual(summary.loc[0, 'name_substitution'], 100.0)


class TestCommands(CliTestCase):
    def test_missing_bank(self):
        """A name bank that does not exist is a usage error"""
        dataset = write_mrqa(synthetic_dataset(8), self.dir / 'synth.jsonl')
        self.assertEqual(_perturb(dataset, self.dir / 'no' / 'bank', self.dir / 'out'), 2)

    def test_bad_flags(self):
        """Argument errors and invalid settings exit with 2"""
        self.assertEqual(main(['perturb', '--n-seeds', 'five', *QUIET]), 2)
        dataset = write_mrqa(synthetic_dataset(8), self.dir / 'synth.jsonl')
        self.assertEqual(_perturb(dataset, self.bank, self.dir / 'out', '--source', 'Wikipedia'), 2)
        self.assertEqual(_perturb(dataset, self.bank, self.dir / 'out', '--entity-types', 'LOC'), 2)

    def test_data_error_exit_code(self):
        """Malformed input exits with 1"""
        path = self.dir / 'broken.jsonl'
        path.write_text('{"header": {"dataset": "x"}}\n{"context": \n', encoding='utf-8')
        self.assertEqual(_perturb(path, self.bank, self.dir / 'out'), 1)

    def test_evaluate_three_of_five(self):
        """Three right answers out of five give 60.0, and an identical baseline p = 1"""
        d = Dataset(tuple(make_instance(f'q{i}', 'Who sang?', f'Mary Smith sang in {1990 + i}.', 'Mary Smith')
                          for i in range(5)), 'five')
        write_dataset(d, self.dir / 'five.jsonl')
        predictions = {'q0': 'Mary Smith', 'q1': 'Mary Smith', 'q2': 'mary smith', 'q3': 'Paris', 'q4': '1990'}
        (self.dir / 'p.json').write_text(json.dumps(predictions), encoding='utf-8')
        code = main(['evaluate', '--dataset', str(self.dir / 'five.jsonl'), '--predictions', str(self.dir / 'p.json'),
                     '--baseline-predictions', str(self.dir / 'p.json'), '--n-resamples', '200',
                     '--condition', 'Original', '--output-dir', str(self.dir / 'reports'), *QUIET])
        self.assertEqual(code, 0)
        report = json.loads((self.dir / 'reports' / 'five.Original.report.json').read_text(encoding='utf-8'))
        self.assertEqual(report['mean'], 60.0)
        self.assertEqual(report['error_counts'], {'correct': 3, 'wrong_boundary': 0, 'wrong_entity': 2})
        self.assertEqual(report['p_value'], 1.0)
        self.assertEqual(report['baseline']['mean'], 60.0)

    def test_evaluate_per_type_from_bank(self):
        """Without plans, --name-bank annotates the dataset for the per entity type breakdown"""
        d = Dataset((make_instance('p0', 'Who sang?', 'Mary Smith sang.', 'Mary Smith'),
                     make_instance('p1', 'Who sang?', 'Mary Smith sang.', 'Mary Smith'),
                     make_instance('g0', 'Where?', 'The fair was held in Paris.', 'Paris'),
                     make_instance('g1', 'Where?', 'The fair was held in Paris.', 'Paris')), 'four')
        write_dataset(d, self.dir / 'four.jsonl')
        (self.dir / 'p.json').write_text(json.dumps({'p0': 'Mary Smith', 'p1': 'Mary', 'g0': 'Paris', 'g1': 'Paris'}),
                                         encoding='utf-8')
        args = ['evaluate', '--dataset', str(self.dir / 'four.jsonl'), '--predictions', str(self.dir / 'p.json'),
                '--condition', 'Original', '--report-formats', 'json', *QUIET]
        self.assertEqual(main(args + ['--output-dir', str(self.dir / 'plain')]), 0)
        self.assertEqual(main(args + ['--output-dir', str(self.dir / 'typed'), '--name-bank', str(self.bank)]), 0)
        plain = json.loads((self.dir / 'plain' / 'four.Original.report.json').read_text(encoding='utf-8'))
        typed = json.loads((self.dir / 'typed' / 'four.Original.report.json').read_text(encoding='utf-8'))
        self.assertEqual(plain['per_type_em'], {})
        self.assertEqual(typed['mean'], 75.0)
        self.assertEqual({etype: summary['mean'] for etype, summary in typed['per_type_em'].items()},
                         {'PER': 50.0, 'GPE': 100.0})

    def test_output_dir_is_a_file(self):
        """An output directory that is an existing file exits with 1"""
        dataset = write_mrqa(synthetic_dataset(8), self.dir / 'synth.jsonl')
        (self.dir / 'taken').write_text('', encoding='utf-8')
        self.assertEqual(_perturb(dataset, self.bank, self.dir / 'taken'), 1)

    def test_malformed_name_em(self):
        """A name EM file that is not a JSON object exits with 1"""
        for name, text in (('broken.json', '{not json'), ('list.json', '[80.0, 70.0]')):
            (self.dir / name).write_text(text, encoding='utf-8')
            code = main(['stats', '--name-em', str(self.dir / name), '--name-bank', str(self.bank),
                         '--output-dir', str(self.dir / 'stats'), *QUIET])
            self.assertEqual(code, 1, name)

    def test_national_origin_bank(self):
        """Names recognised with one bank are replaced by names of the packaged china bank"""
        dataset = write_mrqa(synthetic_dataset(40), self.dir / 'synth.jsonl')
        code = _perturb(dataset, 'china', self.dir / 'out', '--annotation-bank', str(self.bank),
                        '--entity-types', 'PER', '--n-seeds', '1', '--data-dir', str(PACKAGED_DATA_DIR))
        self.assertEqual(code, 0)
        manifest = json.loads((self.dir / 'out' / 'manifest.DBName.PER.json').read_text(encoding='utf-8'))
        self.assertEqual((manifest['name_bank'], manifest['annotation_bank']), ('china', 'bank'))
        self.assertEqual(manifest['datasets'][0]['counts']['PER'], 10)
        china = load_name_bank(PACKAGED_DATA_DIR / 'namebanks' / 'china')
        _, plans = read_plans(self.dir / 'out' / 'synth.DBName.PER.seed0.plans.jsonl')
        self.assertEqual(len(plans), 10)
        for entry in (entry for plan in plans for entry in plan.mapping):
            self.assertIn(entry.replacement, china.pool(entry.stype))

    def test_evaluate_needs_predictions(self):
        write_dataset(synthetic_dataset(4), self.dir / 'four.jsonl')
        self.assertEqual(main(['evaluate', '--dataset', str(self.dir / 'four.jsonl'), *QUIET]), 2)

    def test_evaluate_lexical_baseline(self):
        write_dataset(synthetic_dataset(12), self.dir / 'twelve.jsonl')
        code = main(['evaluate', '--dataset', str(self.dir / 'twelve.jsonl'), '--lexical-baseline',
                     '--condition', 'lexical', '--report-formats', 'json', '--output-dir', str(self.dir), *QUIET])
        self.assertEqual(code, 0)
        report = json.loads((self.dir / 'synth.lexical.report.json').read_text(encoding='utf-8'))
        self.assertEqual(report['n'], 12)
        self.assertFalse((self.dir / 'synth.lexical.results.tsv').exists())

    def test_sweep(self):
        """Given names give one file each"""
        dataset = write_mrqa(synthetic_dataset(40), self.dir / 'synth.jsonl')
        code = main(['sweep', '--dataset', str(dataset), '--name-bank', str(self.bank), '--names', 'Rowan', 'Quinn',
                     '--output-dir', str(self.dir / 'sweep'), *QUIET])
        self.assertEqual(code, 0)
        manifest = json.loads((self.dir / 'sweep' / 'manifest.sweep.synth.json').read_text(encoding='utf-8'))
        self.assertEqual(manifest['files'], {'Rowan': 'synth.FixedName-Rowan.PER.seed0.jsonl',
                                             'Quinn': 'synth.FixedName-Quinn.PER.seed0.jsonl'})
        self.assertTrue((self.dir / 'sweep' / 'synth.FixedName-Quinn.PER.seed0.jsonl').is_file())

    def test_stats(self):
        """Domain shift of a test set drawn from the training names, and a name-bias table"""
        train = write_mrqa(synthetic_dataset(240, name='train'), self.dir / 'train.jsonl')
        test = write_mrqa(synthetic_dataset(80, name='test'), self.dir / 'test.jsonl')
        (self.dir / 'em.json').write_text(json.dumps({'James': 80.0, 'Mary': 70.0, 'Casey': 60.0}), encoding='utf-8')
        code = main(['stats', '--train', str(train), '--test', str(test), '--name-em', str(self.dir / 'em.json'),
                     '--name-bank', str(self.bank), '--output-dir', str(self.dir / 'stats'), *QUIET])
        self.assertEqual(code, 0)
        report = json.loads((self.dir / 'stats' / 'stats.json').read_text(encoding='utf-8'))
        self.assertEqual(report['domain_shift']['unseen_vs_train_answers'], 0.0)
        self.assertEqual(report['domain_shift']['unseen_vs_train_passages'], 0.0)
        self.assertEqual(report['name_bias']['n'], 3)
        self.assertEqual(len(pd.read_csv(self.dir / 'stats' / 'name_bias.tsv', sep='\t')), 3)

    def test_build_lists(self):
        counts = self.dir / 'counts.tsv'
        counts.write_text('Boston\tNNP\t95\nboston\tNN\t5\nbank\tNN\t9\n', encoding='utf-8')
        code = main(['build-lists', '--counts', str(counts), '--output-dir', str(self.dir / 'lists'), *QUIET])
        self.assertEqual(code, 0)
        self.assertEqual((self.dir / 'lists' / 'nnp.txt').read_text(encoding='utf-8'), 'boston\n')
        self.assertEqual((self.dir / 'lists' / 'ptb_vocab.txt').read_text(encoding='utf-8'), 'bank\nboston\n')


class TestThroughput(CliTestCase):
    def test_searchqa_scale(self):
        """Five perturbed sets of a 16,980 instance test set are built in under five minutes"""
        dataset = write_mrqa(synthetic_dataset(16980), self.dir / 'large.jsonl')
        started = time.perf_counter()
        code = _perturb(dataset, self.bank, self.dir / 'out', '--no-emit-oracle')
        elapsed = time.perf_counter() - started
        self.assertEqual(code, 0)
        manifest = json.loads((self.dir / 'out' / 'manifest.DBName.MIX.json').read_text(encoding='utf-8'))
        entry, = manifest['datasets']
        self.assertEqual(entry['counts']['MIX'], 12735)
        self.assertEqual(entry['n_perturbed'] + len({failure['qid'] for failure in entry['failures']}), 12735)
        self.assertLess(elapsed, 300)


class TestMaskCommand(CliTestCase):
    def _corpus(self):
        path = self.dir / 'corpus.jsonl'
        records = [{'tokens': [f't{i}' for i in range(100)], 'entities': [[10, 13], [40, 42]]},
                   {'text': 'Mary Smith moved to Paris in 1999 and opened a small bakery there.',
                    'mentions': [{'type': 'PER', 'char_start': 0, 'char_end': 10}]}]
        path.write_text(''.join(json.dumps(record) + '\n' for record in records), encoding='utf-8')
        return path

    def test_entity_policy_deterministic(self):
        corpus = self._corpus()
        for name in ('a.jsonl', 'b.jsonl'):
            code = main(['mask', '--input', str(corpus), '--output', str(self.dir / name), '--policy', 'entity',
                         '--seed', '5', *QUIET])
            self.assertEqual(code, 0)
        self.assertEqual((self.dir / 'a.jsonl').read_bytes(), (self.dir / 'b.jsonl').read_bytes())

    def test_unknown_policy(self):
        code = main(['mask', '--input', str(self._corpus()), '--output', str(self.dir / 'out.jsonl'),
                     '--policy', 'random', *QUIET])
        self.assertEqual(code, 2)

    def test_config_file_then_flags(self):
        """The config file overrides the defaults and flags override the config file"""
        corpus = self._corpus()
        config = self.dir / 'run.toml'
        config.write_text('[mask]\npolicy = "vanilla"\nseed = 3\n', encoding='utf-8')
        code = main(['mask', '--config', str(config), '--input', str(corpus), '--output', str(self.dir / 'cli.jsonl'),
                     '--seed', '4', *QUIET])
        self.assertEqual(code, 0)
        emit_masked_corpus(corpus, MaskingPolicy.from_name('vanilla'), 4, self.dir / 'direct.jsonl')
        self.assertEqual((self.dir / 'cli.jsonl').read_bytes(), (self.dir / 'direct.jsonl').read_bytes())
        first = json.loads((self.dir / 'cli.jsonl').read_text(encoding='utf-8').splitlines()[0])
        self.assertEqual(len(first['masked']), 15)

    def test_unreadable_config(self):
        config = self.dir / 'bad.toml'
        config.write_text('[mask\n', encoding='utf-8')
        code = main(['mask', '--config', str(config), '--input', str(self._corpus()),
                     '--output', str(self.dir / 'out.jsonl'), *QUIET])
        self.assertEqual(code, 2)

    def test_merge_order(self):
        settings = merge_settings('mask', {'mask': {'seed': 3, 'policy': 'vanilla'}}, {'seed': 4, 'policy': None})
        self.assertEqual((settings['seed'], settings['policy'], settings['mask_ratio']), (4, 'vanilla', 0.15))


if __name__ == '__main__':
    unittest.main()
