"""Tests `acceptance.py`"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import unittest

import numpy as np

from .. import acceptance
from .. import analysis
from .. import records
from .. import report
from .. import subspace


class NaiveOracleTest(unittest.TestCase):

    def test_naive_ranks(self):
        self.assertEqual([1.0, 2.5, 2.5, 4.0],
                         acceptance.naive_ranks([1, 5, 5, 9]))

    def test_naive_spearman(self):
        self.assertAlmostEqual(
            1.0, acceptance.naive_spearman([1, 2, 3], [10, 20, 30]))
        self.assertAlmostEqual(
            -1.0, acceptance.naive_spearman([1, 2, 3], [3, 2, 1]))


class OracleCheckTest(unittest.TestCase):

    def assert_passed(self, check):
        self.assertEqual(acceptance.passed, check.status,
                         '{}: {}'.format(check.name, check.observed))

    def test_numeric_oracles(self):
        self.assert_passed(acceptance.check_numeric_oracles(0))

    def test_edit_algebra(self):
        self.assert_passed(acceptance.check_edit_algebra(0, trials=200))

    def test_datasets(self):
        self.assert_passed(acceptance.check_datasets(0))

    def test_gradients(self):
        self.assert_passed(acceptance.check_gradients(0))

    def test_planted_recovery(self):
        self.assert_passed(acceptance.check_planted_recovery(0))

    def test_classification(self):
        check = acceptance.check_classification(0)
        self.assert_passed(check)
        self.assertEqual(6, check.number)


class BundleCheckTest(unittest.TestCase):

    def test_determinism(self):
        recorded = {'tables/a.csv': 'x', 'tables/b.csv': 'y'}
        self.assertEqual(acceptance.passed, acceptance.check_determinism(
            recorded, dict(recorded)).status)
        check = acceptance.check_determinism(
            recorded, {'tables/a.csv': 'x', 'tables/b.csv': 'z'})
        self.assertEqual(acceptance.failed, check.status)
        self.assertIn('tables/b.csv', check.observed)
        check = acceptance.check_determinism(recorded, {'tables/a.csv': 'x'})
        self.assertEqual(acceptance.failed, check.status)
        self.assertIn('report stage', check.required)

    def test_gate(self):
        training = {'report': {'accuracy': 0.97, 'seconds': 600.0},
                    'gate': 0.95, 'time_budget': 1800.0}
        self.assertEqual(acceptance.passed,
                         acceptance.check_gate(training).status)
        training['report']['accuracy'] = 0.5
        self.assertEqual(acceptance.failed,
                         acceptance.check_gate(training).status)
        training['report']['accuracy'] = None
        self.assertEqual(acceptance.failed,
                         acceptance.check_gate(training).status)

    def test_gate_over_budget(self):
        training = {'report': {'accuracy': 0.99, 'seconds': 36000.0},
                    'gate': 0.95, 'time_budget': 1800.0}
        check = acceptance.check_gate(training)
        self.assertEqual(acceptance.failed, check.status)
        self.assertIn('36000 CPU s', check.observed)
        self.assertIn('1800 CPU s', check.required)
        training['report']['seconds'] = None
        self.assertEqual(acceptance.failed,
                         acceptance.check_gate(training).status)

    def test_gate_failure_skips_findings(self):
        checks = acceptance.finding_checks({}, False, 8, [1, 2, 3])
        self.assertEqual([9, 10, 11, 12, 13], [c.number for c in checks])
        self.assertEqual({acceptance.skipped_gate},
                         {c.status for c in checks})

    def test_missing_tables_skip(self):
        checks = acceptance.finding_checks({}, True, 8, [1, 2, 3])
        self.assertEqual({acceptance.skipped_not_run},
                         {c.status for c in checks})


def emergence_tables(best, rho):
    scores = records.Table(subspace.layer_score_header, [
        (layer, 0.95 if layer == best else 0.2) for layer in range(4)])
    correlations = records.Table(report.layer_correlation_header, [
        (layer, 'pc1', rho if layer == best else 0.1, 0.0)
        for layer in range(4)])
    return {'fig2_layer_scores': scores, 'fig2_correlations': correlations}


def flip_table(winners):
    """Flip table where step s puts 0.6 on bucket `winners[s]`"""
    table = records.Table(analysis.flip_header)
    for step, winner in winners.items():
        for oi in range(4):
            bucket = 'a{}'.format(oi)
            table.add((step, bucket, 0.6 if bucket == winner else 0.1, 10))
        table.add((step, analysis.other_bucket, 0.1, 10))
    return table


def ld_table(peaks):
    """LD curves where candidate OI c peaks at step `peaks[c]`"""
    table = records.Table(analysis.ld_header)
    for step in range(7):
        for oi in range(4):
            value = 5.0 if peaks.get(oi) == step else 0.0
            table.add((step, oi, value, 0.0, 10, int(oi == 0)))
    return table


class FindingCheckTest(unittest.TestCase):

    def test_emergence(self):
        check = acceptance.check_emergence(emergence_tables(2, 0.93), 4)
        self.assertEqual(acceptance.passed, check.status)
        check = acceptance.check_emergence(emergence_tables(2, 0.5), 4)
        self.assertEqual(acceptance.failed, check.status)
        # Best layer at the edge of the model
        check = acceptance.check_emergence(emergence_tables(3, 0.99), 4)
        self.assertEqual(acceptance.failed, check.status)

    def test_causal(self):
        tables = {
            'fig4_flips': flip_table({0: 'a0', 1: 'a1', 2: 'a2', 3: 'a3'}),
            'fig3_ld_curves': ld_table({1: 1, 2: 2, 3: 4}),
        }
        self.assertEqual(acceptance.passed,
                         acceptance.check_causal(tables).status)
        tables['fig4_flips'] = flip_table(
            {0: 'a0', 1: 'a1', 2: 'a1', 3: 'a3'})
        self.assertEqual(acceptance.failed,
                         acceptance.check_causal(tables).status)

    def test_steering(self):
        table = records.Table(analysis.ld_header)
        for bi in (1, 2, 3):
            for oi in range(4):
                table.add((bi, oi, 3.0 if oi == bi else -1.0, 0.0, 5,
                           int(oi == 0)))
        tables = {'fig5_steering_ld': table}
        self.assertEqual(acceptance.passed,
                         acceptance.check_steering(tables, [1, 2, 3]).status)
        table.add((2, 3, 4.0, 0.0, 5, 0))
        self.assertEqual(acceptance.failed,
                         acceptance.check_steering(tables, [1, 2, 3]).status)

    def test_position(self):
        correlations = records.Table(report.position_header, [
            ('filler', 'filler', 'filler_length', 'pc1', 0.95, 0.05),
            ('filler', 'filler', 'position', 'pc1', 0.95, 0.6),
        ])
        tables = {
            'fig7_correlations': correlations,
            'fig22_flips_inter': flip_table({1: 'a1', 2: 'a2'}),
        }
        self.assertEqual(acceptance.passed,
                         acceptance.check_position(tables).status)
        tables['fig22_flips_inter'] = flip_table({1: 'a1', 2: 'a0'})
        check = acceptance.check_position(tables)
        self.assertEqual(acceptance.failed, check.status)
        self.assertIn('inter β=2: plurality a0', check.observed)

    def test_pair_classification(self):
        table = records.Table(analysis.classification_header, [
            ('p1', 1, 'rank-distance', 0.1, 0.8, 0.7, 0.25),
            ('p1', 1, 'abs-diff', 0.1, 0.8, 0.1, 0.25),
            ('p1', 2, 'rank-distance', 0.1, 0.8, 0.1, 0.25),
        ])
        tables = {'fig9_classification': table}
        self.assertEqual(acceptance.passed,
                         acceptance.check_pair_classification(tables).status)
        table.add(('p2', 1, 'rank-distance', 0.1, 0.3, 0.2, 0.25))
        self.assertEqual(acceptance.failed,
                         acceptance.check_pair_classification(tables).status)


class SummaryTest(unittest.TestCase):

    def test_format(self):
        checks = [
            acceptance.Check(1, 'numeric oracles', acceptance.passed,
                             'fine', 'exact'),
            acceptance.Check(9, 'subspace emergence',
                             acceptance.skipped_gate, '-', 'ρ >= 0.9'),
            acceptance.Check(10, 'causal intervention', acceptance.failed,
                             'bad', 'good'),
        ]
        text = acceptance.summary_text(checks, 'abc123')
        lines = text.splitlines()
        self.assertEqual('Acceptance checks of configuration abc123',
                         lines[0])
        self.assertEqual(' 1. numeric oracles          PASS', lines[2])
        self.assertEqual('    observed: fine', lines[3])
        self.assertEqual(' 9. subspace emergence       SKIPPED(gate)',
                         lines[5])
        self.assertEqual('FAIL: 1, PASS: 1, SKIPPED(gate): 1', lines[-1])
        self.assertEqual(1, len(acceptance.failures(checks)))

    def test_separable_threshold(self):
        result = analysis.threshold_classify(
            np.array([0.1, 0.9, 0.2, 0.8]), np.array([1, 0, 1, 0]),
            np.array([0.15, 0.7]), np.array([1, 0]))
        self.assertEqual(1.0, result.f1)
