"""Tests `subspace.py`"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import pathlib
import tempfile
import unittest

import numpy as np

from .. import capture
from .. import linalg
from .. import subspace
from ..general import FormatError, InputError, NumericError


def _unit(d, seed):
    u = np.random.default_rng(seed).standard_normal(d)
    return u / np.linalg.norm(u)


def planted_matrix(n=200, d=24, k=7, noise=0.05, seed=0, layer=3,
                   direction_seed=None):
    """Rows x = OI·u + ε with ‖ε‖ ≤ `noise` and OI cycling through k
    values

    """
    rng = np.random.default_rng(seed)
    u = _unit(d, seed + 1 if direction_seed is None else direction_seed)
    oi = np.arange(n) % k
    eps = rng.standard_normal((n, d))
    eps *= noise * rng.uniform(0, 1, size=(n, 1)) / \
        np.linalg.norm(eps, axis=1)[:, None]
    data = oi[:, None] * u[None, :] + eps
    return (capture.ActivationMatrix(
        data, oi, 10 + 3 * oi, 'entity-query', layer, 0), u)


class FitTest(unittest.TestCase):

    def test_planted_direction_recovered(self):
        for seed in range(5):
            # Distinct OIs so that Spearman ρ can reach 1
            matrix, u = planted_matrix(seed=seed, k=200)
            fitted = subspace.fit_oi_subspace(matrix)
            self.assertEqual(2, fitted.n_components)
            self.assertGreaterEqual(abs(fitted.basis[0] @ u), 0.99)
            scores = fitted.project(matrix.data)[:, 0]
            self.assertGreaterEqual(
                linalg.spearman(scores, matrix.oi_labels), 0.999)

    def test_orthonormal_rows_and_ratios(self):
        matrix, _ = planted_matrix(noise=0.5)
        fitted = subspace.fit_oi_subspace(matrix, c=4)
        np.testing.assert_allclose(
            fitted.basis @ fitted.basis.T, np.eye(4), atol=1e-8)
        ratio = fitted.explained_variance_ratio
        self.assertTrue(np.all(ratio >= 0) and np.all(ratio <= 1))
        self.assertTrue(np.all(np.diff(ratio) <= 0))
        scores = fitted.project(matrix.data)
        self.assertGreaterEqual(scores[:, 0].var(), scores[:, 1].var())

    def test_provenance(self):
        matrix, _ = planted_matrix(layer=5)
        fitted = subspace.fit_oi_subspace(matrix)
        self.assertEqual((5, 0, 'entity-query', 'pca'),
                         (fitted.layer, fitted.relation, fitted.role,
                          fitted.method))

    def test_identical_rows(self):
        matrix = capture.ActivationMatrix(
            np.ones((5, 4)), [0, 1, 2, 3, 4], [0] * 5, 'entity-query', 0)
        with self.assertRaises(NumericError):
            subspace.fit_oi_subspace(matrix)

    def test_component_range(self):
        matrix, _ = planted_matrix(n=5, d=3)
        with self.assertRaises(InputError):
            subspace.fit_oi_subspace(matrix, c=4)
        small = matrix.subset([0, 1])
        with self.assertRaises(InputError):
            subspace.fit_oi_subspace(small, c=1)

    def test_deterministic(self):
        matrix, _ = planted_matrix(noise=0.3)
        self.assertEqual(subspace.fit_oi_subspace(matrix),
                         subspace.fit_oi_subspace(matrix))

    def test_pls_agrees_with_pca(self):
        matrix, _ = planted_matrix()
        pca = subspace.fit_oi_subspace(matrix, method='pca')
        pls = subspace.fit_oi_subspace(matrix, method='pls')
        self.assertGreaterEqual(abs(pca.basis[0] @ pls.basis[0]), 0.95)
        self.assertIsNone(pls.explained_variance_ratio)
        np.testing.assert_allclose(
            np.linalg.norm(pls.basis, axis=1), 1.0, atol=1e-8)

    def test_ica_first_row_tracks_oi(self):
        # Uniform OI against a Laplacian nuisance direction
        rng = np.random.default_rng(4)
        n, d = 600, 6
        oi = rng.integers(0, 7, size=n)
        u, w = np.eye(d)[0], np.eye(d)[1]
        data = (oi[:, None] * u + rng.laplace(size=(n, 1)) * w
                + 0.01 * rng.standard_normal((n, d)))
        matrix = capture.ActivationMatrix(
            data, oi, oi, 'entity-query', 0)
        fitted = subspace.fit_oi_subspace(matrix, method='ica', seed=1)
        self.assertGreater(abs(fitted.basis[0] @ u), 0.9)
        self.assertGreater(linalg.spearman(
            fitted.project(data)[:, 0], oi), 0.9)


class OrientTest(unittest.TestCase):

    def setUp(self):
        self.matrix, _ = planted_matrix(noise=0.3)
        self.fitted = subspace.fit_oi_subspace(self.matrix)

    def _rho(self, s):
        return linalg.spearman(s.project(self.matrix.data)[:, 0],
                               self.matrix.oi_labels)

    def test_positive_unchanged(self):
        oriented = subspace.orient(
            self.fitted, self.matrix.data, self.matrix.oi_labels)
        self.assertIs(self.fitted, oriented)

    def test_negated_row_flipped_back(self):
        basis = self.fitted.basis.copy()
        basis[0] = -basis[0]
        negated = self.fitted.with_basis(basis)
        before = self._rho(negated)
        self.assertLess(before, 0)
        oriented = subspace.orient(
            negated, self.matrix.data, self.matrix.oi_labels)
        self.assertAlmostEqual(abs(before), self._rho(oriented), places=12)
        np.testing.assert_array_equal(self.fitted.basis, oriented.basis)

    def test_constant_labels(self):
        with self.assertRaises(InputError):
            subspace.orient(self.fitted, self.matrix.data,
                            np.zeros(self.matrix.n_rows))


class ProjectTest(unittest.TestCase):

    def setUp(self):
        matrix, _ = planted_matrix(noise=0.3, d=8)
        self.fitted = subspace.fit_oi_subspace(matrix, c=3)

    def test_mean_maps_to_origin(self):
        np.testing.assert_allclose(
            np.zeros(3), subspace.project(self.fitted, self.fitted.mean),
            atol=1e-12)

    def test_basis_row(self):
        x = self.fitted.mean + self.fitted.basis[0]
        np.testing.assert_allclose(
            [1, 0, 0], subspace.project(self.fitted, x), atol=1e-12)

    def test_naive_dot_products(self):
        rng = np.random.default_rng(9)
        for _ in range(20):
            x = rng.standard_normal(8)
            expected = [sum(self.fitted.basis[i, j]
                            * (x[j] - self.fitted.mean[j])
                            for j in range(8)) for i in range(3)]
            np.testing.assert_allclose(
                expected, subspace.project(self.fitted, x), atol=1e-12)

    def test_width_mismatch(self):
        with self.assertRaises(InputError):
            subspace.project(self.fitted, np.zeros(7))

    def test_lift(self):
        coords = np.array([0.5, -2.0, 1.0])
        np.testing.assert_allclose(
            coords, self.fitted.project(
                self.fitted.mean + self.fitted.lift(coords)), atol=1e-12)

    def test_non_unit_basis(self):
        with self.assertRaises(InputError):
            subspace.Subspace(np.ones((1, 3)), np.zeros(3))


class ProjectionTableTest(unittest.TestCase):

    def _layers(self):
        return {layer: planted_matrix(seed=layer, layer=layer, n=70)[0]
                for layer in range(8)}

    def test_one_table_per_layer(self):
        tables = subspace.projection_table(self._layers())
        self.assertEqual(list(range(8)), [t.layer for t in tables])
        for table in tables:
            self.assertEqual(70, len(table))
            self.assertEqual(['pc1', 'pc2', 'oi', 'pi', 'sample_id'],
                             table.header.names())

    def test_group_means_increase(self):
        matrix, _ = planted_matrix(noise=0.05)
        table = subspace.projection_table({3: matrix})[0]
        pc1 = np.array(table.column('pc1'))
        oi = np.array(table.column('oi'))
        means = [pc1[oi == k].mean() for k in range(7)]
        self.assertTrue(np.all(np.diff(means) > 0))

    def test_csv(self):
        matrix, _ = planted_matrix(n=10)
        table = subspace.projection_table({3: matrix})[0]
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / 'proj.csv'
            table.write_csv(path)
            read = subspace.ProjectionTable.read_csv(
                path, subspace.projection_header())
        self.assertEqual(list(table), list(read))


class SelectBestLayerTest(unittest.TestCase):

    def test_best_layer(self):
        train = {}
        dev = {}
        for layer, noise in enumerate([20.0, 6.0, 0.05, 10.0]):
            train[layer] = planted_matrix(
                k=200, noise=noise, seed=layer, layer=layer,
                direction_seed=7)[0]
            dev[layer] = planted_matrix(
                k=200, noise=noise, seed=layer + 50, layer=layer,
                direction_seed=7)[0]
        best, scores = subspace.select_best_layer(train, dev)
        self.assertEqual(1.0, scores[2])
        self.assertEqual(2, best)
        self.assertEqual([0, 1, 2, 3], sorted(scores))

    def test_layer_mismatch(self):
        matrix, _ = planted_matrix()
        with self.assertRaises(InputError):
            subspace.select_best_layer({0: matrix}, {1: matrix})


class PersistenceTest(unittest.TestCase):

    def test_round_trip(self):
        matrix, _ = planted_matrix(noise=0.3)
        for method in ('pca', 'pls'):
            fitted = subspace.fit_oi_subspace(matrix, c=3, method=method)
            with tempfile.TemporaryDirectory() as tmp:
                path = pathlib.Path(tmp) / 's.oiss'
                subspace.save_subspace(fitted, path)
                self.assertEqual(fitted, subspace.load_subspace(path))

    def test_corruption(self):
        matrix, _ = planted_matrix()
        data = subspace.subspace_bytes(subspace.fit_oi_subspace(matrix))
        for bad in (data[:-8], data + b'\0', b'OIAM' + data[4:], data[:6]):
            with self.assertRaises(FormatError):
                subspace.subspace_from_bytes(bad)
