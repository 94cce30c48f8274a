"""Tests `toylm.py`"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import pathlib
import tempfile
import unittest

import numpy as np
import torch

from .. import config
from .. import datagen
from .. import toylm
from ..general import FormatError, InputError
from . import fixtures


_vocab = fixtures.small_vocab()
_samples = datagen.gen_base(0, 8, 3, _vocab, seed=5)


def _input(index=0):
    return _samples[index].model_input(_vocab)


class ModelConfigTest(unittest.TestCase):

    def test_parameter_count_formula(self):
        for tie in (False, True):
            cfg = toylm.ModelConfig(len(_vocab), d_model=16, n_layers=2,
                                    n_heads=4, d_ff=24, tie_weights=tie)
            model = toylm.init_model(cfg)
            self.assertEqual(cfg.n_parameters(), toylm.n_parameters(model))

    def test_default_parameter_count(self):
        cfg = toylm.ModelConfig(1000)
        model = toylm.ToyLM(cfg)
        self.assertEqual(cfg.n_parameters(), toylm.n_parameters(model))

    def test_heads_must_divide_width(self):
        with self.assertRaises(config.ConfigError):
            toylm.ModelConfig(100, d_model=10, n_heads=4)

    def test_counts_positive(self):
        with self.assertRaises(config.ConfigError):
            toylm.ModelConfig(100, n_layers=0)
        with self.assertRaises(config.ConfigError):
            toylm.ModelConfig(0)

    def test_unknown_field(self):
        with self.assertRaises(config.ConfigError):
            toylm.ModelConfig(100, depth=3)

    def test_yaml_round_trip(self):
        cfg = toylm.ModelConfig(50, d_model=32, n_heads=8, seed=3)
        self.assertEqual(
            cfg, toylm.ModelConfig.from_yaml_object(cfg.as_yaml_object()))


class InitModelTest(unittest.TestCase):

    def test_same_seed_same_logits(self):
        tokens = _input()
        logits1 = fixtures.tiny_model(_vocab, seed=4)(
            toylm.as_batch(tokens))
        logits2 = fixtures.tiny_model(_vocab, seed=4)(
            toylm.as_batch(tokens))
        self.assertTrue(torch.equal(logits1, logits2))

    def test_different_seed_different_logits(self):
        tokens = toylm.as_batch(_input())
        self.assertFalse(torch.equal(
            fixtures.tiny_model(_vocab, seed=1)(tokens),
            fixtures.tiny_model(_vocab, seed=2)(tokens)))

    def test_finite_logits_shape(self):
        tokens = _input()
        with torch.no_grad():
            logits = fixtures.tiny_model(_vocab)(toylm.as_batch(tokens))
        self.assertEqual((1, len(tokens), len(_vocab)), tuple(logits.shape))
        self.assertTrue(torch.isfinite(logits).all())

    def test_global_rng_untouched(self):
        torch.manual_seed(123)
        expected = torch.rand(3)
        torch.manual_seed(123)
        fixtures.tiny_model(_vocab)
        self.assertTrue(torch.equal(expected, torch.rand(3)))

    def test_causality(self):
        model = fixtures.tiny_model(_vocab)
        tokens = _input()
        changed = list(tokens)
        changed[10] = _vocab.id('stone')
        with torch.no_grad():
            a = model(toylm.as_batch(tokens))
            b = model(toylm.as_batch(changed))
        self.assertTrue(torch.allclose(a[0, :10], b[0, :10], atol=1e-6))
        self.assertFalse(torch.allclose(a[0, 10:], b[0, 10:]))


class TraceTest(unittest.TestCase):

    def setUp(self):
        self.model = fixtures.tiny_model(_vocab, n_layers=3)

    def test_all_layers_final_position(self):
        tokens = _input()
        trace = toylm.TraceSpec(range(3), positions=[len(tokens) - 1])
        logits, captured = toylm.forward_with_trace(
            self.model, tokens, trace)
        self.assertEqual([0, 1, 2], sorted(captured))
        for layer in range(3):
            self.assertEqual((1, 1, 16), tuple(captured[layer].shape))

    def test_trace_does_not_perturb_logits(self):
        tokens = _input()
        with torch.no_grad():
            plain = self.model(toylm.as_batch(tokens))
        for site in toylm.sites:
            traced, _ = toylm.forward_with_trace(
                self.model, tokens, toylm.TraceSpec([0, 2], site=site))
            self.assertEqual(0.0, (plain - traced).abs().max().item())

    def test_pre_site_is_previous_post_site(self):
        tokens = _input()
        _, post = toylm.forward_with_trace(
            self.model, tokens, toylm.TraceSpec([0]))
        _, pre = toylm.forward_with_trace(
            self.model, tokens, toylm.TraceSpec([1], site='pre'))
        self.assertTrue(torch.equal(post[0], pre[1]))

    def test_row_positions(self):
        batch, _ = toylm.pad_batch([_input(0), _input(1)], _vocab.pad)
        positions = [toylm.role_position(s, 'query-entity')
                     for s in _samples[:2]]
        _, shared = toylm.forward_with_trace(
            self.model, batch, toylm.TraceSpec([1]))
        _, rows = toylm.forward_with_trace(
            self.model, batch,
            toylm.TraceSpec([1], row_positions=positions))
        self.assertEqual((2, 16), tuple(rows[1].shape))
        for row, pos in enumerate(positions):
            self.assertTrue(torch.equal(shared[1][row, pos], rows[1][row]))

    def test_query_entity_role(self):
        for sample in _samples:
            pos = toylm.role_position(sample, 'query-entity')
            self.assertEqual(sample.query_pi + 1, pos)
            entity = sample.pairs[sample.query_pair].entity
            self.assertEqual(entity, sample.model_input(_vocab)[pos])

    def test_final_role(self):
        sample = _samples[0]
        self.assertEqual(len(sample.model_input(_vocab)) - 1,
                         toylm.role_position(sample, 'final'))

    def test_wrong_role(self):
        with self.assertRaises(InputError):
            toylm.role_position(_samples[0], 'query-attribute')
        with self.assertRaises(InputError):
            toylm.role_position(_samples[0], 'subject')

    def test_out_of_range(self):
        tokens = _input()
        with self.assertRaises(InputError):
            toylm.forward_with_trace(
                self.model, tokens, toylm.TraceSpec([3]))
        with self.assertRaises(InputError):
            toylm.forward_with_trace(
                self.model, tokens,
                toylm.TraceSpec([0], positions=[len(tokens)]))
        with self.assertRaises(InputError):
            toylm.forward_with_trace(
                self.model, [len(_vocab)], toylm.TraceSpec([0]))


class EditTest(unittest.TestCase):

    def setUp(self):
        self.model = fixtures.tiny_model(_vocab, n_layers=3)
        self.tokens = _input()
        self.pos = toylm.role_position(_samples[0], 'query-entity')
        self.plain, self.captured = toylm.forward_with_trace(
            self.model, self.tokens, toylm.TraceSpec(range(3)))

    def _state(self, layer, pos):
        return self.captured[layer][0, pos].numpy()

    def test_noop_patch(self):
        logits = toylm.forward_with_edit(
            self.model, self.tokens,
            [(1, self.pos, self._state(1, self.pos))])
        self.assertTrue(torch.allclose(self.plain, logits, atol=1e-6))

    def test_only_later_positions_change(self):
        value = self._state(1, self.pos) + 3.0
        logits = toylm.forward_with_edit(
            self.model, self.tokens, [(1, self.pos, value)])
        self.assertTrue(torch.allclose(
            self.plain[0, :self.pos], logits[0, :self.pos], atol=1e-6))
        self.assertFalse(torch.allclose(
            self.plain[0, self.pos:], logits[0, self.pos:]))

    def test_edits_compose_in_any_order(self):
        a = (0, 3, self._state(0, 3) * 2)
        b = (2, self.pos, self._state(2, self.pos) - 1)
        ab = toylm.forward_with_edit(self.model, self.tokens, [a, b])
        ba = toylm.forward_with_edit(self.model, self.tokens, [b, a])
        self.assertTrue(torch.equal(ab, ba))

    def test_idempotent(self):
        edit = (1, self.pos, np.ones(16, dtype=np.float32))
        once = toylm.forward_with_edit(self.model, self.tokens, [edit])
        twice = toylm.forward_with_edit(
            self.model, self.tokens, [edit, edit])
        self.assertTrue(torch.equal(once, twice))

    def test_pre_edit_equals_previous_post_edit(self):
        value = np.full(16, 0.5, dtype=np.float32)
        pre = toylm.forward_with_edit(
            self.model, self.tokens, [(1, self.pos, value)], site='pre')
        post = toylm.forward_with_edit(
            self.model, self.tokens, [(0, self.pos, value)])
        self.assertTrue(torch.equal(pre, post))

    def test_single_row_edit(self):
        batch, _ = toylm.pad_batch([self.tokens, self.tokens], _vocab.pad)
        value = self._state(1, self.pos) + 2.0
        logits = toylm.forward_with_edit(
            self.model, batch, [(1, 1, self.pos, value)])
        self.assertTrue(torch.allclose(logits[0], self.plain[0], atol=1e-6))
        self.assertFalse(torch.allclose(logits[1], self.plain[0]))

    def test_width_mismatch(self):
        with self.assertRaises(InputError):
            toylm.forward_with_edit(
                self.model, self.tokens, [(1, self.pos, np.zeros(15))])


class GradientCheckTest(unittest.TestCase):

    def test_all_groups_match_finite_differences(self):
        model = fixtures.tiny_model(_vocab, n_layers=2, d_model=16)
        batch, _ = toylm.pad_batch([_input(0), _input(1)], _vocab.pad)
        errors = toylm.gradient_check(model, batch)
        self.assertEqual(
            {name for (name, _) in model.named_parameters()}, set(errors))
        for name, error in errors.items():
            self.assertLess(error, 1e-3, name)

    def test_model_unchanged(self):
        model = fixtures.tiny_model(_vocab)
        before = {k: v.clone() for (k, v) in model.state_dict().items()}
        toylm.gradient_check(model, _input())
        for name, tensor in model.state_dict().items():
            self.assertTrue(torch.equal(before[name], tensor))
            self.assertEqual(torch.float32, tensor.dtype)


class CorpusTest(unittest.TestCase):

    def test_sequences(self):
        corpus = toylm.build_corpus(_vocab, 40, seed=2, k_pairs=3)
        self.assertEqual(40, len(corpus))
        for seq, pos in zip(corpus.sequences, corpus.answer_positions):
            self.assertEqual(_vocab.bos, seq[0])
            self.assertEqual(_vocab.eos, seq[-1])
            self.assertEqual(len(seq) - 2, pos)
            self.assertTrue(_vocab.is_attribute(seq[pos]))
        labels = set(corpus.labels)
        self.assertIn('base', labels)
        self.assertTrue(any(l.startswith('pattern') for l in labels))
        self.assertTrue(any(l.startswith('filler') for l in labels))
        self.assertIn('interjection', labels)

    def test_deterministic(self):
        a = toylm.build_corpus(_vocab, 30, seed=2, k_pairs=3)
        b = toylm.build_corpus(_vocab, 30, seed=2, k_pairs=3)
        self.assertEqual(a.sequences, b.sequences)

    def test_too_small(self):
        with self.assertRaises(InputError):
            toylm.build_corpus(_vocab, 5, seed=0, k_pairs=3)

    def test_nonrelated_samples_left_out(self):
        unanswered = datagen.gen_nonrelated(_samples[:2], _vocab, seed=0)
        corpus = toylm.Corpus.from_samples(
            list(_samples[:3]) + unanswered, _vocab)
        self.assertEqual(3, len(corpus))


class TrainTest(unittest.TestCase):

    def test_lr_schedule(self):
        self.assertAlmostEqual(0.1, toylm.lr_factor(0, 10, 100))
        self.assertAlmostEqual(1.0, toylm.lr_factor(9, 10, 100))
        self.assertAlmostEqual(1.0, toylm.lr_factor(10, 10, 100))
        self.assertAlmostEqual(0.5, toylm.lr_factor(55, 10, 100))
        self.assertAlmostEqual(0.0, toylm.lr_factor(100, 10, 100))

    def test_memorizes_small_batch(self):
        samples = datagen.gen_base(0, 32, 2, _vocab, seed=11)
        corpus = toylm.Corpus.from_samples(samples, _vocab)
        model = fixtures.tiny_model(_vocab, d_model=32, d_ff=64, seed=0)
        hyper = toylm.TrainingConfig(
            steps=600, batch_size=32, lr=3e-3, weight_decay=0.0,
            warmup=10, log_every=150, loss='answer', seed=0)
        model, report = toylm.train(
            model, corpus, hyper,
            eval_fn=lambda m: toylm.evaluate_answers(m, samples, _vocab))
        self.assertEqual(1.0, report.accuracy)
        self.assertEqual(4, len(report.losses))
        self.assertLess(report.final_loss, report.losses[0][1])
        self.assertFalse(model.training)

    def test_deterministic(self):
        corpus = toylm.build_corpus(_vocab, 20, seed=0, k_pairs=3)
        hyper = toylm.TrainingConfig(steps=5, batch_size=4, log_every=5)
        states = []
        for _ in range(2):
            model, _ = toylm.train(fixtures.tiny_model(_vocab), corpus,
                                   hyper)
            states.append(toylm.checkpoint_bytes(model))
        self.assertEqual(states[0], states[1])

    def test_nan_loss_aborts(self):
        corpus = toylm.build_corpus(_vocab, 20, seed=0, k_pairs=3)
        model = fixtures.tiny_model(_vocab)
        with torch.no_grad():
            model.ln_f.weight.fill_(float('nan'))
        hyper = toylm.TrainingConfig(steps=3, batch_size=4, log_every=1)
        with self.assertRaises(toylm.TrainingError) as context:
            toylm.train(model, corpus, hyper)
        self.assertIn('step 0', str(context.exception))

    def test_bad_hyper(self):
        with self.assertRaises(config.ConfigError):
            toylm.TrainingConfig(loss='mse')
        with self.assertRaises(config.ConfigError):
            toylm.TrainingConfig(steps=0)

    def test_evaluate_needs_answers(self):
        unanswered = [s.derive(answer=None) for s in _samples[:2]]
        with self.assertRaises(InputError):
            toylm.evaluate_answers(
                fixtures.tiny_model(_vocab), unanswered, _vocab)


class CheckpointTest(unittest.TestCase):

    def setUp(self):
        self.model = fixtures.tiny_model(_vocab, tie_weights=True)
        self.tmp = tempfile.TemporaryDirectory()
        self.path = pathlib.Path(self.tmp.name) / 'model.oilm'

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        toylm.save_checkpoint(self.model, self.path, {'steps': 7})
        loaded, metadata = toylm.load_checkpoint(self.path)
        self.assertEqual({'steps': 7}, metadata)
        self.assertEqual(self.model.config, loaded.config)
        tokens = toylm.as_batch(_input())
        with torch.no_grad():
            self.assertTrue(torch.equal(self.model(tokens), loaded(tokens)))
        self.assertEqual(self.path.read_bytes(),
                         toylm.checkpoint_bytes(loaded, {'steps': 7}))

    def test_truncated(self):
        data = toylm.checkpoint_bytes(self.model)
        for size in (3, 10, len(data) // 2, len(data) - 1):
            with self.assertRaises(FormatError):
                toylm.checkpoint_from_bytes(data[:size])

    def test_foreign_magic(self):
        data = toylm.checkpoint_bytes(self.model)
        with self.assertRaises(FormatError):
            toylm.checkpoint_from_bytes(b'OIAM' + data[4:])

    def test_version(self):
        data = bytearray(toylm.checkpoint_bytes(self.model))
        data[4] = 99
        with self.assertRaises(FormatError):
            toylm.checkpoint_from_bytes(bytes(data))

    def test_missing_file(self):
        with self.assertRaises(InputError):
            toylm.load_checkpoint(self.path)
