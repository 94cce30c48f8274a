"""Tests `intervene.py`"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import unittest

import numpy as np

from .. import analysis
from .. import capture
from .. import datagen
from .. import intervene
from .. import subspace
from ..general import InputError
from . import fixtures


def random_subspace(d=16, c=2, seed=0, layer=1):
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((d, c)))
    return subspace.Subspace(q.T, rng.standard_normal(d), layer=layer)


_vocab = fixtures.small_vocab()
_model = fixtures.tiny_model(_vocab, n_layers=3, seed=2)
_samples = datagen.gen_base(0, 6, 4, _vocab, seed=8, query='first')


class InterventionSpecTest(unittest.TestCase):

    def test_validation(self):
        with self.assertRaises(InputError):
            intervene.InterventionSpec(-1, 1.0)
        with self.assertRaises(InputError):
            intervene.InterventionSpec(0, 1.0, beta=-1)
        with self.assertRaises(InputError):
            intervene.InterventionSpec(0, 1.0, mode='patch')
        with self.assertRaises(InputError):
            intervene.InterventionSpec(0, 1.0, mode='steer')

    def test_step_vector(self):
        spec = intervene.InterventionSpec(
            8, 3.0, step_value=2.5, pc2_fixed=-1.0)
        np.testing.assert_array_equal([2.5, -1.0, 0.0],
                                      spec.step_vector(3))
        np.testing.assert_array_equal([2.5], spec.step_vector(1))

    def test_replace(self):
        spec = intervene.InterventionSpec(8, 3.0, step_value=2.5)
        self.assertEqual(2, spec.replace(beta=2).beta)
        self.assertEqual(0, spec.beta)


class DirectEditTest(unittest.TestCase):

    def test_zero_alpha_is_identity(self):
        s = random_subspace()
        x = np.random.default_rng(1).standard_normal(16)
        for mode in intervene.direct_modes:
            spec = intervene.InterventionSpec(
                0, 0.0, step_value=2.5, beta=3, mode=mode)
            np.testing.assert_array_equal(
                x, intervene.direct_edit(x, s, spec))

    def test_literal_identity(self):
        rng = np.random.default_rng(2)
        for trial in range(1000):
            s = random_subspace(d=8, c=2, seed=trial)
            x = rng.normal(scale=3, size=8)
            alpha = rng.uniform(-5, 5)
            beta = int(rng.integers(0, 7))
            spec = intervene.InterventionSpec(
                0, alpha, step_value=rng.normal(), beta=beta,
                pc2_fixed=rng.normal())
            edited = intervene.direct_edit(x, s, spec)
            bx = s.basis @ x
            expected = (1 + alpha) * bx + alpha * beta * spec.step_vector(2)
            np.testing.assert_allclose(
                expected, s.basis @ edited, rtol=0, atol=1e-9)
            residual = (np.eye(8) - s.basis.T @ s.basis) @ (edited - x)
            self.assertLess(np.linalg.norm(residual), 1e-9)

    def test_literal_one_step(self):
        s = random_subspace(c=3)
        x = np.random.default_rng(3).standard_normal(16)
        spec = intervene.InterventionSpec(
            0, 2.0, step_value=1.5, beta=1, pc2_fixed=0.5)
        coords = s.project_uncentered(intervene.direct_edit(x, s, spec))
        np.testing.assert_allclose(
            3.0 * s.project_uncentered(x) + 2.0 * np.array([1.5, 0.5, 0]),
            coords, atol=1e-9)

    def test_replace_translates(self):
        s = random_subspace()
        x = np.random.default_rng(4).standard_normal((5, 16))
        spec = intervene.InterventionSpec(
            0, 2.0, step_value=1.5, beta=3, mode='direct-replace')
        edited = intervene.direct_edit(x, s, spec)
        np.testing.assert_allclose(
            s.project(edited) - s.project(x),
            np.tile([9.0, 0.0], (5, 1)), atol=1e-9)
        residual = (edited - x) @ (np.eye(16) - s.basis.T @ s.basis)
        self.assertLess(np.abs(residual).max(), 1e-9)

    def test_width_mismatch(self):
        spec = intervene.InterventionSpec(0, 1.0)
        with self.assertRaises(InputError):
            intervene.direct_edit(np.zeros(15), random_subspace(), spec)

    def test_steer_is_not_direct(self):
        spec = intervene.InterventionSpec(0, 1.0, mode='steer', target_bi=1)
        with self.assertRaises(InputError):
            intervene.direct_edit(np.zeros(16), random_subspace(), spec)


def _matrix(data, oi):
    data = np.asarray(data, dtype=np.float32)
    return capture.ActivationMatrix(
        data, [oi] * len(data), [0] * len(data), 'entity-query', 1)


class SteeringTest(unittest.TestCase):

    def test_identical_rows(self):
        s = random_subspace()
        data = np.random.default_rng(5).standard_normal((4, 16))
        sv = intervene.steering_vector(
            _matrix(data, 2), _matrix(data, 0), s)
        np.testing.assert_array_equal([0.0, 0.0], sv.coords)
        self.assertEqual(2, sv.source_bi)
        self.assertEqual(4, sv.n_averaged)

    def test_single_pair(self):
        s = random_subspace()
        rng = np.random.default_rng(6)
        a = rng.standard_normal((1, 16)).astype(np.float32)
        b = rng.standard_normal((1, 16)).astype(np.float32)
        sv = intervene.steering_vector(_matrix(a, 1), _matrix(b, 0), s)
        np.testing.assert_allclose(
            s.basis @ (a[0].astype(np.float64) - b[0]), sv.coords,
            atol=1e-12)

    def test_planted(self):
        s = random_subspace()
        rng = np.random.default_rng(7)
        delta = 0.7
        base = rng.standard_normal((50, 16))
        zero = base + s.lift([0.0, 0.0])
        three = base + s.lift([3 * delta, 0.0]) \
            + 0.01 * rng.standard_normal((50, 16))
        sv = intervene.steering_vector(
            _matrix(three, 3), _matrix(zero, 0), s)
        np.testing.assert_allclose([3 * delta, 0.0], sv.coords, atol=0.01)

    def test_count_mismatch(self):
        s = random_subspace()
        with self.assertRaises(InputError):
            intervene.steering_vector(
                _matrix(np.zeros((2, 16)), 1), _matrix(np.zeros((3, 16)), 0),
                s)

    def test_apply(self):
        s = random_subspace()
        rng = np.random.default_rng(8)
        x = rng.standard_normal(16)
        zero = intervene.SteeringVector([0.0, 0.0], 1, 1)
        np.testing.assert_array_equal(
            x, intervene.apply_steering(x, s, zero, 1.25))
        sv = intervene.SteeringVector([1.0, -0.5], 2, 10)
        edited = intervene.apply_steering(x, s, sv, 1.25)
        np.testing.assert_allclose(
            s.project(x) + 1.25 * sv.coords, s.project(edited), atol=1e-12)
        residual = (np.eye(16) - s.basis.T @ s.basis) @ (edited - x)
        self.assertLess(np.linalg.norm(residual), 1e-9)

    def test_linearity(self):
        s = random_subspace()
        rng = np.random.default_rng(9)
        for _ in range(50):
            x = rng.standard_normal(16)
            sv = intervene.SteeringVector(rng.standard_normal(2), 1, 1)
            a1, a2 = rng.uniform(-3, 3, size=2)
            both = intervene.apply_steering(x, s, sv, a1 + a2)
            seq = intervene.apply_steering(
                intervene.apply_steering(x, s, sv, a1), s, sv, a2)
            np.testing.assert_allclose(both, seq, atol=1e-6)

    def test_non_finite(self):
        with self.assertRaises(InputError):
            intervene.SteeringVector([np.nan, 0.0], 1, 1)
        with self.assertRaises(InputError):
            intervene.SteeringVector([0.0, 0.0], 1, 0)


class StepSweepTest(unittest.TestCase):

    def test_zero_edit_keeps_logits(self):
        spec = intervene.InterventionSpec(1, 0.0, step_value=2.5)
        sweep = intervene.run_step_sweep(
            _model, _samples, random_subspace(), spec, [0], _vocab)
        for row in sweep.logits:
            self.assertEqual(row[3], row[4])
        for row in sweep.predictions.as_dicts():
            self.assertEqual(row['original_oi'], row['predicted_oi'])

    def test_shape(self):
        spec = intervene.InterventionSpec(1, 3.0, step_value=2.5)
        sweep = intervene.run_step_sweep(
            _model, _samples, random_subspace(), spec, range(4), _vocab,
            batch_size=4)
        self.assertEqual(6 * 4, len(sweep.predictions))
        self.assertEqual(6 * 4 * 4, len(sweep.logits))
        self.assertEqual([0, 1, 2, 3], sweep.steps())
        self.assertEqual(['sample_id', 'beta', 'candidate_oi',
                          'logit_original', 'logit_intervened'],
                         sweep.logits.header.names())
        for row in sweep.predictions.as_dicts():
            self.assertEqual(0, row['answer_oi'])
            self.assertEqual(4, row['n_candidates'])

    def test_edit_changes_logits(self):
        spec = intervene.InterventionSpec(
            1, 3.0, step_value=2.5, mode='direct-replace')
        sweep = intervene.run_step_sweep(
            _model, _samples, random_subspace(), spec, [2], _vocab)
        self.assertTrue(any(r[3] != r[4] for r in sweep.logits))

    def test_preconditions(self):
        spec = intervene.InterventionSpec(1, 1.0, step_value=1.0)
        with self.assertRaises(InputError):
            intervene.run_step_sweep(
                _model, _samples, random_subspace(), spec, range(5), _vocab)
        others = [s for s in datagen.expand_queries(_samples, _vocab)
                  if s.query_entity_oi != 0]
        with self.assertRaises(InputError):
            intervene.run_step_sweep(
                _model, others, random_subspace(), spec, [1], _vocab)


class LayerSweepTest(unittest.TestCase):

    def test_zero_alpha_flat(self):
        subspaces = {l: random_subspace(seed=l, layer=l) for l in range(3)}
        spec = intervene.InterventionSpec(0, 0.0, step_value=2.5)
        table, _ = intervene.run_layer_sweep(
            _model, _samples, subspaces, spec, _vocab)
        self.assertEqual([0, 1, 2], table.column('layer'))
        self.assertEqual([0.0, 0.0, 0.0], table.column('mean_ld_other'))

    def test_matches_single_runs(self):
        subspaces = {l: random_subspace(seed=l, layer=l) for l in range(3)}
        spec = intervene.InterventionSpec(0, 2.0, step_value=1.0)
        table, sweeps = intervene.run_layer_sweep(
            _model, _samples, subspaces, spec, _vocab, betas=(1, 2))
        for layer, row in zip(range(3), table.as_dicts()):
            single = intervene.run_step_sweep(
                _model, _samples, subspaces[layer],
                spec.replace(layer=layer), (1, 2), _vocab)
            effect = intervene.layer_effect(single)
            self.assertAlmostEqual(effect[0], row['mean_ld_other'])
            self.assertAlmostEqual(effect[1], row['flip_proportion'])
            self.assertEqual(list(single.logits), list(sweeps[layer].logits))


class SteeringSweepTest(unittest.TestCase):

    def test_zero_vectors(self):
        vectors = {bi: intervene.SteeringVector([0.0, 0.0], bi, 1)
                   for bi in (1, 2, 3)}
        sweep = intervene.run_steering_sweep(
            _model, _samples, random_subspace(), vectors, 1, 1.25, _vocab)
        self.assertEqual('target_bi', sweep.step_name)
        self.assertEqual([1, 2, 3], sweep.steps())
        for row in sweep.logits:
            self.assertEqual(row[3], row[4])
        curves = analysis.ld_curves(sweep)
        self.assertEqual({0.0}, set(curves.column('mean_ld')))


class GridSearchTest(unittest.TestCase):

    def test_search_table(self):
        subspaces = {l: random_subspace(seed=l, layer=l) for l in (1, 2)}
        queries = datagen.expand_queries(_samples, _vocab)
        matrices = {l: capture.build_entity_matrix(_model, queries, l, _vocab)
                    for l in (1, 2)}
        base = intervene.InterventionSpec(0, 1.0)
        best, table = intervene.grid_search(
            _model, _samples, subspaces, matrices, _vocab, base,
            alphas=(1.0, 3.0), quantiles=(0.5,), betas=(1, 2))
        self.assertEqual(2 * 2, len(table))
        scores = table.column('score')
        chosen = table.as_dicts()[scores.index(max(scores))]
        self.assertEqual((chosen['layer'], chosen['alpha']),
                         (best.layer, best.alpha))
        self.assertEqual(chosen['step_value'], best.step_value)

    def test_step_values(self):
        s = random_subspace(d=4, c=1)
        ois = np.repeat(np.arange(4), 5)
        data = s.mean + s.lift((2.0 * ois)[:, None])
        matrix = capture.ActivationMatrix(
            data, ois, ois, 'entity-query', 1)
        np.testing.assert_allclose(
            [2.0, 2.0], intervene.step_values(matrix, s, [0.25, 0.75]),
            atol=1e-5)


class PairingTest(unittest.TestCase):

    def test_paired_queries(self):
        target, zero = intervene.paired_entity_queries(_samples, _vocab, 2)
        self.assertEqual(len(_samples), len(target))
        for t, z in zip(target, zero):
            self.assertEqual(t.source_id, z.source_id)
            self.assertEqual(t.context, z.context)
            self.assertEqual(2, t.query_entity_oi)
            self.assertEqual(0, z.query_entity_oi)

    def test_query_first_entity(self):
        queries = datagen.expand_queries(_samples, _vocab)
        self.assertEqual(len(_samples),
                         len(intervene.query_first_entity(queries)))
