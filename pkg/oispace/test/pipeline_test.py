"""Tests `pipeline.py`, `report.py`, and the command line on a tiny
experiment

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import pathlib
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np

from .. import __main__ as cli
from .. import acceptance
from .. import config
from .. import pipeline
from .. import workspace
from ..workspace import Workspace


def tiny_config(output, **fields):
    obj = {
        'seed': 3,
        'output': str(output),
        'jobs': 1,
        'vocabulary': {'objects': 8, 'names': 8},
        'datasets': [
            {'name': 'base0', 'relation': 0, 'n': 30, 'k_pairs': 3},
        ],
        'model': {'d_model': 16, 'n_layers': 2, 'n_heads': 2, 'd_ff': 32},
        'training': {'corpus': 40, 'steps': 3, 'batch_size': 8,
                     'warmup': 0, 'log_every': 1, 'eval_samples': 12,
                     'accuracy_gate': 0.99},
        'intervention': {'layer': 1, 'alpha': 1.0, 'step_value': 1.0,
                         'betas': [0, 1, 2], 'test_samples': 3},
        'experiments': ['fig2', 'fig3', 'fig4'],
    }
    obj.update(fields)
    return config.ExperimentConfig(obj, 'tiny')


class PipelineTest(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.root = pathlib.Path(cls._tmp.name)
        cls.cfg = tiny_config(cls.root / 'run')
        pipeline.setup_runtime(cls.cfg)
        pipeline.cmd_all(cls.cfg)
        cls.ws = Workspace(cls.cfg.output)

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def test_artifacts(self):
        ws = self.ws
        for path in (ws.vocabulary, ws.dataset('base0'), ws.data_manifest,
                     ws.checkpoint, ws.training, ws.layer_scores,
                     ws.selection, ws.intervention_spec, ws.summary,
                     ws.report_manifest):
            self.assertTrue(path.is_file(), str(path))
        for layer in (0, 1):
            self.assertTrue(ws.activations(
                'base0', 'test', 'attribute-query', layer).is_file())
            self.assertTrue(ws.subspace(
                'base0', 'entity-query', layer, 'pca').is_file())
        for stage in pipeline.stages:
            self.assertTrue(ws.stamp(stage).is_file(), stage)

    def test_report_tables(self):
        tables = self.ws.report / 'tables'
        for name in ('training_loss', 'fig2_layer_scores',
                     'fig2_correlations', 'fig2_projection_layer0',
                     'fig2_projection_layer1', 'fig3_ld_curves',
                     'fig4_flips'):
            self.assertTrue((tables / (name + '.csv')).is_file(), name)
        self.assertTrue(
            (self.ws.report / 'figures' / 'fig4_flips.svg').is_file())

    def test_manifest(self):
        manifest = workspace.load_yaml(self.ws.report_manifest)
        self.assertEqual('oispace', manifest['package'])
        self.assertEqual(self.cfg.hash(), manifest['config'])
        self.assertEqual(3, manifest['seeds']['global'])
        kinds = {a['path']: a['kind'] for a in manifest['artifacts']}
        self.assertEqual('table', kinds['tables/fig4_flips.csv'])
        self.assertEqual('figure', kinds['figures/fig4_flips.svg'])
        self.assertEqual('summary', kinds['summary.txt'])
        sources = {a['path']: a.get('source')
                   for a in manifest['artifacts']}
        self.assertEqual('tables/fig3_ld_curves.csv',
                         sources['figures/fig3_ld_curves.svg'])
        self.assertIn('model/model.oilm', manifest['inputs'])
        checkpoint = manifest['inputs']['model/model.oilm']
        self.assertEqual(self.ws.checkpoint.stat().st_size,
                         checkpoint['size'])
        self.assertEqual(64, len(checkpoint['sha256']))
        self.assertIn('matplotlib', manifest['versions'])

    def test_summary_marks_gate(self):
        text = self.ws.summary.read_text()
        self.assertIn('SKIPPED(gate)', text)
        self.assertIn('SKIPPED(verify only)', text)

    def test_rerun_skips_stages(self):
        stamps = {stage: self.ws.stamp(stage).read_bytes()
                  for stage in pipeline.stages}
        mtime = self.ws.checkpoint.stat().st_mtime_ns
        pipeline.cmd_all(self.cfg)
        for stage in pipeline.stages:
            self.assertEqual(stamps[stage],
                             self.ws.stamp(stage).read_bytes(), stage)
        self.assertEqual(mtime, self.ws.checkpoint.stat().st_mtime_ns)

    def test_verify(self):
        checks = pipeline.cmd_verify(self.cfg)
        self.assertEqual(list(range(1, 14)), [c.number for c in checks])
        status = {c.number: c.status for c in checks}
        for number in range(1, 8):
            self.assertEqual(acceptance.passed, status[number], number)
        self.assertEqual(acceptance.failed, status[8])
        for number in range(9, 14):
            self.assertEqual(acceptance.skipped_gate, status[number])

    def test_changed_config_needs_rerun(self):
        other = tiny_config(self.cfg.output,
                            subspace={'method': 'pca', 'components': 1})
        with self.assertRaisesRegex(pipeline.StageError,
                                    'Stage report: .*fit'):
            pipeline.cmd_report(other)


class DamagedArtifactTest(unittest.TestCase):

    def test_corrupted_activation(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = tiny_config(pathlib.Path(tmp) / 'run', experiments=[])
            pipeline.setup_runtime(cfg)
            for stage in ('gen', 'train', 'capture'):
                pipeline.run_stage(cfg, stage)
            ws = Workspace(cfg.output)
            path = ws.activations('base0', 'train', 'entity-query', 1)
            data = bytearray(path.read_bytes())
            data[-1] ^= 0xff
            path.write_bytes(bytes(data))
            with self.assertRaisesRegex(
                    pipeline.StageError,
                    'Stage fit: .*capture.*entity-query-layer1'):
                pipeline.cmd_fit(cfg)

    def test_missing_upstream(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = tiny_config(pathlib.Path(tmp) / 'run')
            with self.assertRaises(pipeline.StageError) as context:
                pipeline.cmd_train(cfg)
            self.assertEqual('train', context.exception.stage)


class DeterminismTest(unittest.TestCase):

    def test_identical_tables(self):
        with tempfile.TemporaryDirectory() as tmp:
            roots = [pathlib.Path(tmp) / name for name in ('a', 'b')]
            for root in roots:
                cfg = tiny_config(root, experiments=['fig2'])
                pipeline.setup_runtime(cfg)
                pipeline.cmd_all(cfg)
            tables = sorted(p.name for p in
                            (roots[0] / 'report' / 'tables').iterdir())
            self.assertIn('fig2_correlations.csv', tables)
            for name in tables:
                self.assertEqual(
                    (roots[0] / 'report' / 'tables' / name).read_bytes(),
                    (roots[1] / 'report' / 'tables' / name).read_bytes(),
                    name)


class CommandLineTest(unittest.TestCase):

    def test_usage(self):
        self.assertEqual(cli.exit_usage, cli.main([]))
        self.assertEqual(cli.exit_usage, cli.main(['frobnicate']))
        self.assertEqual(cli.exit_usage, cli.main(['gen']))

    def test_missing_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = str(pathlib.Path(tmp) / 'none.yaml')
            self.assertEqual(cli.exit_usage,
                             cli.main(['gen', '--config', path]))

    def test_verify_without_report(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = tiny_config(pathlib.Path(tmp) / 'run')
            path = config.save(cfg, pathlib.Path(tmp) / 'cfg.yaml')
            self.assertEqual(cli.exit_stage,
                             cli.main(['verify', '--config', str(path)]))

    def test_gen_with_overrides(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = tiny_config(pathlib.Path(tmp) / 'ignored')
            path = config.save(cfg, pathlib.Path(tmp) / 'cfg.yaml')
            out = pathlib.Path(tmp) / 'out'
            self.assertEqual(cli.exit_ok, cli.main(
                ['gen', '--config', str(path), '--seed', '4',
                 '--out', str(out)]))
            self.assertTrue(Workspace(out).stamp('gen').is_file())
            self.assertFalse((pathlib.Path(tmp) / 'ignored').exists())
            shutil.rmtree(str(out))


class InterjectionSweepTest(unittest.TestCase):

    def test_sweep_uses_own_subspace(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = tiny_config(
                pathlib.Path(tmp) / 'run',
                datasets=[
                    {'name': 'base0', 'relation': 0, 'n': 30,
                     'k_pairs': 3},
                    {'name': 'inter0', 'variant': 'interjection',
                     'source': 'base0', 'n': 30},
                ],
                experiments=['fig22'])
            pipeline.setup_runtime(cfg)
            for stage in ('gen', 'train', 'capture', 'fit'):
                pipeline.run_stage(cfg, stage)
            ws = Workspace(cfg.output)
            own = pipeline.dataset_subspace(cfg, ws, 'inter0', 1)
            primary = pipeline.dataset_subspace(cfg, ws, 'base0', 1)
            self.assertIsNotNone(own)
            self.assertFalse(np.array_equal(own.basis, primary.basis))
            with mock.patch.object(
                    pipeline.intervene, 'run_step_sweep',
                    wraps=pipeline.intervene.run_step_sweep) as sweep:
                pipeline.cmd_intervene(cfg)
            self.assertEqual(1, sweep.call_count)
            used = sweep.call_args[0][2]
            np.testing.assert_array_equal(own.basis, used.basis)
            np.testing.assert_array_equal(own.mean, used.mean)
            self.assertTrue(
                (ws.sweeps / 'interjection-inter0_logits.csv').is_file())

    def test_missing_subspace(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = tiny_config(pathlib.Path(tmp) / 'run')
            ws = Workspace(cfg.output)
            self.assertIsNone(pipeline.dataset_subspace(cfg, ws, 'base0', 1))
