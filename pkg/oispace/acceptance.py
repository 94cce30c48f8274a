"""Acceptance checks

Checks 1 to 6 exercise the numeric and data machinery on synthetic
inputs and need no artifacts.  Check 7 compares recomputed report
tables with the bundle on disk.  Check 8 is the training gate.  Checks
9 to 13 read the analysis tables of a report; they are skipped when the
gate failed or when their experiment was not run.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import collections
import math
import pathlib
import time

from barnapy import logging
import numpy as np

from . import analysis
from . import capture
from . import datagen
from . import intervene
from . import linalg
from . import subspace
from . import toylm


passed = 'PASS'
failed = 'FAIL'
skipped_gate = 'SKIPPED(gate)'
skipped_not_run = 'SKIPPED(not run)'
skipped_verify = 'SKIPPED(verify only)'

Check = collections.namedtuple(
    'Check', 'number name status observed required')

golden_dir = pathlib.Path(__file__).parent / 'test' / 'golden'
golden_objects = ('coffee', 'stone', 'map', 'apple', 'bell', 'pie', 'bean',
                  'corn')
golden_names = ('Zo', 'Mak', 'Hel', 'Fi', 'Ru', 'Ten', 'Lo', 'Vim')
golden_clauses = (('coffee', 'Zo'), ('stone', 'Mak'), ('map', 'Hel'))


def _check(number, name, ok, observed, required):
    return Check(number, name, passed if ok else failed, observed, required)


def _skip(number, name, status, required):
    return Check(number, name, status, '-', required)


# Numeric oracles


def naive_ranks(values):
    """Average ranks by counting"""
    ranks = []
    for v in values:
        below = sum(1 for w in values if w < v)
        equal = sum(1 for w in values if w == v)
        ranks.append(below + (equal + 1) / 2.0)
    return ranks


def naive_spearman(x, y):
    rx = naive_ranks(list(x))
    ry = naive_ranks(list(y))
    n = len(rx)
    mx = sum(rx) / n
    my = sum(ry) / n
    sxy = sum((a - mx) * (b - my) for (a, b) in zip(rx, ry))
    sxx = sum((a - mx) ** 2 for a in rx)
    syy = sum((b - my) ** 2 for b in ry)
    return sxy / math.sqrt(sxx * syy)


def check_numeric_oracles(seed=0):
    rng = np.random.default_rng(seed)
    svd_error = 0.0
    min_cos = 1.0
    for _ in range(50):
        d = int(rng.integers(2, 17))
        n = int(rng.integers(d + 2, 33))
        # Distinct column scales keep the leading eigenvalues apart
        m = (rng.standard_normal((n, d)) * np.linspace(3.0, 0.5, d)
             + rng.standard_normal(d))
        result = linalg.svd(m)
        svd_error = max(svd_error, float(
            np.linalg.norm(result.reconstruct() - m) / np.linalg.norm(m)))
        fit = linalg.pca(m, min(3, d))
        centered = m - m.mean(axis=0)
        _, vectors = linalg.jacobi_eigh(centered.T @ centered / (n - 1))
        for k in range(fit.components.shape[0]):
            min_cos = min(min_cos,
                          abs(float(fit.components[k] @ vectors[:, k])))
    rho_error = 0.0
    n_pairs = 0
    while n_pairs < 100:
        n = int(rng.integers(3, 30))
        # Small integer ranges force ties
        x = rng.integers(0, 6, size=n).astype(float)
        y = rng.integers(0, 6, size=n).astype(float)
        if np.ptp(x) == 0 or np.ptp(y) == 0:
            continue
        rho_error = max(rho_error,
                        abs(linalg.spearman(x, y) - naive_spearman(x, y)))
        n_pairs += 1
    return _check(
        1, 'numeric oracles',
        svd_error < 1e-6 and min_cos >= 1 - 1e-8 and rho_error <= 1e-9,
        'SVD error {:.3g}, PCA |cos| {:.12f}, Spearman error {:.3g}'
        .format(svd_error, min_cos, rho_error),
        'SVD error < 1e-6, |cos| >= 1 - 1e-8, Spearman error <= 1e-9')


def random_subspace(rng, d, c):
    q, _ = np.linalg.qr(rng.standard_normal((d, c)))
    return subspace.Subspace(q.T, rng.standard_normal(d))


def check_edit_algebra(seed=0, trials=1000):
    rng = np.random.default_rng(seed)
    coord_error = 0.0
    residual = 0.0
    for _ in range(trials):
        d = int(rng.integers(2, 17))
        c = int(rng.integers(1, min(d, 4) + 1))
        sub = random_subspace(rng, d, c)
        x = rng.standard_normal(d)
        alpha = float(rng.uniform(-3.0, 3.0))
        spec = intervene.InterventionSpec(
            0, alpha, float(rng.standard_normal()), int(rng.integers(0, 7)),
            float(rng.standard_normal()))
        edited = intervene.direct_edit(x, sub, spec)
        expected = ((1 + alpha) * (sub.basis @ x)
                    + alpha * spec.beta * spec.step_vector(c))
        coord_error = max(coord_error, float(
            np.max(np.abs(sub.basis @ edited - expected))))
        sv = intervene.SteeringVector(rng.standard_normal(c), 1, 1)
        delta = intervene.apply_steering(x, sub, sv, alpha) - x
        residual = max(residual, float(np.max(np.abs(
            delta - sub.basis.T @ (sub.basis @ delta)))))
    return _check(
        2, 'edit algebra', coord_error < 1e-9 and residual < 1e-9,
        'coordinate error {:.3g}, steering residual {:.3g}'.format(
            coord_error, residual),
        'both < 1e-9')


# Datasets


def golden_vocabulary():
    return datagen.word_vocabulary(golden_objects, golden_names)


def golden_text(relation, vocab):
    sample = datagen.render(relation, list(golden_clauses), 0, vocab,
                            id=0, seed=0)
    return sample.text(vocab) + '\n'


def sample_problems(sample, vocab):
    """Pairs whose OIs or PIs disagree with a recount of the tokens"""
    entities = {}
    attributes = {}
    for token in sample.context:
        if vocab.is_entity(token):
            entities.setdefault(token, len(entities))
        elif vocab.is_attribute(token):
            attributes.setdefault(token, len(attributes))
    tokens = sample.tokens
    problems = []
    for pair in sample.pairs:
        if (entities.get(pair.entity) != pair.entity_oi
                or attributes.get(pair.attribute) != pair.attribute_oi):
            problems.append('OI of {}'.format(pair))
        if (tokens[pair.entity_pi] != pair.entity
                or tokens[pair.attribute_pi] != pair.attribute):
            problems.append('PI of {}'.format(pair))
    return problems


def check_datasets(seed=0):
    vocab = golden_vocabulary()
    templates = [r for r in range(len(datagen.relations))
                 if (golden_dir / 'relation_{}.txt'.format(r)).read_bytes()
                 != golden_text(r, vocab).encode('utf-8')]
    base = datagen.gen_base(0, 10, 7, vocab, seed)
    derived = (datagen.gen_pseudo(base, vocab)
               + datagen.gen_filler(base, [0, 1, 3, 5, 9], vocab)
               + datagen.gen_interjection(base, vocab))
    variants = sum(1 for s in derived if sample_problems(s, vocab))
    patterns = 0
    for name, mapping in datagen.patterns.items():
        for sample in datagen.gen_pattern(name, 5, vocab, seed):
            if (tuple(p.entity_oi for p in sample.pairs) != mapping
                    or sample_problems(sample, vocab)):
                patterns += 1
    return _check(
        3, 'dataset goldens', not (templates or variants or patterns),
        'template mismatches {}, bad variant samples {} of {}, '
        'bad pattern samples {}'.format(
            templates, variants, len(derived), patterns),
        'no mismatches')


def check_gradients(seed=0):
    vocab = golden_vocabulary()
    model = toylm.init_model(toylm.ModelConfig(
        len(vocab), d_model=16, n_layers=2, n_heads=2, d_ff=32, seed=seed))
    samples = datagen.gen_base(0, 2, 3, vocab, seed)
    batch, _ = toylm.pad_batch(
        [s.model_input(vocab) for s in samples], vocab.pad)
    errors = toylm.gradient_check(model, batch)
    worst = max(sorted(errors), key=errors.get)
    return _check(
        4, 'gradient check', errors[worst] < 1e-3,
        'largest relative error {:.3g} ({})'.format(errors[worst], worst),
        '< 1e-3 for every parameter group')


def planted_matrix(rng, n=200, d=24, noise=0.05):
    """Rows OI·u + ε with ‖ε‖ ≤ noise and distinct OIs"""
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    oi = rng.permutation(n)
    eps = rng.standard_normal((n, d))
    eps *= (noise * rng.uniform(0, 1, size=(n, 1))
            / np.linalg.norm(eps, axis=1)[:, None])
    data = oi[:, None] * u[None, :] + eps
    return capture.ActivationMatrix(
        data, oi, oi, 'entity-query', 0, 0), u


def check_planted_recovery(seed=0):
    rng = np.random.default_rng(seed)
    min_cos = 1.0
    min_rho = 1.0
    for _ in range(5):
        matrix, u = planted_matrix(rng)
        fitted = subspace.fit_oi_subspace(matrix)
        min_cos = min(min_cos, abs(float(fitted.basis[0] @ u)))
        min_rho = min(min_rho, linalg.spearman(
            fitted.project(matrix.data)[:, 0], matrix.oi_labels))
    return _check(
        5, 'planted recovery', min_cos >= 0.99 and min_rho >= 0.999,
        '|cos| {:.6f}, ρ(PC1, OI) {:.6f}'.format(min_cos, min_rho),
        '|cos| >= 0.99, ρ >= 0.999')


def check_classification(seed=0):
    rng = np.random.default_rng(seed)

    def candidates(n_contexts):
        labels = np.tile([1] + [0] * 6, n_contexts)
        distances = np.where(labels == 1,
                             rng.uniform(0.0, 0.4, labels.size),
                             rng.uniform(0.6, 1.0, labels.size))
        return distances, labels

    result = analysis.threshold_classify(*(candidates(20) + candidates(20)))
    baseline_error = abs(result.baseline_f1 - 0.25)
    return _check(
        6, 'classification', result.f1 == 1.0 and baseline_error <= 1e-12,
        'separable F1 {:.6f}, baseline F1 {:.15f}'.format(
            result.f1, result.baseline_f1),
        'F1 = 1, baseline = 0.25 ± 1e-12')


def oracle_checks(seed=0):
    """Checks 1 to 6"""
    logger = logging.getLogger(__name__)
    checks = []
    for check_fn in (check_numeric_oracles, check_edit_algebra,
                     check_datasets, check_gradients,
                     check_planted_recovery, check_classification):
        start = time.time()
        check = check_fn(seed)
        logger.info('Check {} ({}): {} in {:.1f} s', check.number,
                    check.name, check.status, time.time() - start)
        checks.append(check)
    return checks


# Bundle checks


# Upstream stages are not rerun: verify rebuilds the report tables from
# the cached train, capture and fit artifacts.
determinism_required = ('identical report CSV bytes (report stage '
                        'recomputed from cached upstream artifacts)')


def check_determinism(expected, recomputed):
    """Compare table hashes recorded in a bundle with recomputed ones"""
    differ = sorted(path for path in set(expected) | set(recomputed)
                    if expected.get(path) != recomputed.get(path))
    return _check(
        7, 'determinism', not differ,
        'differing tables: {}'.format(differ if differ else 'none'),
        determinism_required)


def check_gate(training):
    """Held-out accuracy at or above the gate within the CPU time
    budget of the training loop

    """
    accuracy = training['report']['accuracy']
    seconds = training['report'].get('seconds')
    gate = training['gate']
    budget = training.get('time_budget')
    in_time = budget is None or (seconds is not None and seconds <= budget)
    return _check(
        8, 'training gate',
        accuracy is not None and accuracy >= gate and in_time,
        'held-out accuracy {} after {} CPU s'.format(
            'none' if accuracy is None else '{:.4f}'.format(accuracy),
            'unknown' if seconds is None else '{:.0f}'.format(seconds)),
        'accuracy >= {} within {} CPU s'.format(
            gate, 'any' if budget is None else '{:.0f}'.format(budget)))


def _rows(tables, name):
    return tables[name].as_dicts() if name in tables else None


def check_emergence(tables, n_layers):
    required = 'ρ(PC1, OI) >= 0.9 at a middle best layer'
    scores = _rows(tables, 'fig2_layer_scores')
    correlations = _rows(tables, 'fig2_correlations')
    if not scores or correlations is None:
        return _skip(9, 'subspace emergence', skipped_not_run, required)
    best = max(scores, key=lambda r: (r['rho_dev'], -r['layer']))['layer']
    rho = [r['rho_oi'] for r in correlations
           if r['layer'] == best and r['component'] == 'pc1']
    rho = rho[0] if rho else float('nan')
    return _check(
        9, 'subspace emergence', rho >= 0.9 and 0 < best < n_layers - 1,
        'best layer {} of {}, test ρ(PC1, OI) {:.4f}'.format(
            best, n_layers, rho), required)


def _plurality_hits(flips, steps):
    """Per step: (proportion of the a_step bucket, plurality bucket)"""
    hits = collections.OrderedDict()
    for step in steps:
        rows = [r for r in flips if r['step'] == step]
        if not rows:
            continue
        bucket = 'a{}'.format(step)
        proportion = sum(r['proportion'] for r in rows
                         if r['bucket'] == bucket)
        top = max(rows, key=lambda r: r['proportion'])['bucket']
        hits[step] = (proportion, top)
    return hits


def check_causal(tables):
    required = 'a_β plurality on >= 50% and LD peak within 1 of β'
    flips = _rows(tables, 'fig4_flips')
    curves = _rows(tables, 'fig3_ld_curves')
    if flips is None or curves is None:
        return _skip(10, 'causal intervention', skipped_not_run, required)
    ok = True
    observed = []
    for beta in (1, 2, 3):
        hits = _plurality_hits(flips, [beta])
        cells = [r for r in curves if r['candidate_oi'] == beta]
        if beta not in hits or not cells:
            ok = False
            observed.append('β={}: missing'.format(beta))
            continue
        proportion, top = hits[beta]
        peak = max(cells, key=lambda r: (r['mean_ld'], -r['step']))['step']
        ok = (ok and top == 'a{}'.format(beta) and proportion >= 0.5
              and abs(peak - beta) <= 1)
        observed.append('β={}: a{} {:.3f}, plurality {}, peak {}'.format(
            beta, beta, proportion, top, peak))
    return _check(10, 'causal intervention', ok, '; '.join(observed),
                  required)


def check_steering(tables, targets):
    required = 'LD of a_bi above every other a_j (j not 0, bi)'
    curves = _rows(tables, 'fig5_steering_ld')
    if curves is None:
        return _skip(11, 'steering', skipped_not_run, required)
    ok = True
    observed = []
    for bi in [t for t in targets if t in (1, 2, 3)]:
        cells = {r['candidate_oi']: r['mean_ld'] for r in curves
                 if r['step'] == bi}
        others = [ld for (oi, ld) in cells.items() if oi not in (0, bi)]
        if bi not in cells or not others:
            ok = False
            observed.append('bi={}: missing'.format(bi))
            continue
        margin = cells[bi] - max(others)
        ok = ok and margin > 0
        observed.append('bi={}: margin {:.4f}'.format(bi, margin))
    return _check(11, 'steering', ok, '; '.join(observed), required)


def check_position(tables):
    required = ('filler: |ρ(PC1, PI)| < 0.3, ρ(PC1, OI) > 0.8; '
                'interjection: a_β plurality at β = 1, 2')
    correlations = _rows(tables, 'fig7_correlations')
    filler = [r for r in correlations or ()
              if r['pi_measure'] == 'filler_length'
              and r['component'] == 'pc1']
    interjections = [name for name in sorted(tables)
                     if name.startswith('fig22_flips_')]
    if not filler and not interjections:
        return _skip(12, 'position independence', skipped_not_run,
                     required)
    ok = True
    observed = []
    for row in filler:
        ok = ok and abs(row['rho_pi']) < 0.3 and row['rho_oi'] > 0.8
        observed.append('{}: ρ PI {:.3f}, ρ OI {:.3f}'.format(
            row['dataset'], row['rho_pi'], row['rho_oi']))
    for name in interjections:
        hits = _plurality_hits(tables[name].as_dicts(), (1, 2))
        for beta in (1, 2):
            top = hits[beta][1] if beta in hits else None
            ok = ok and top == 'a{}'.format(beta)
            observed.append('{} β={}: plurality {}'.format(
                name[len('fig22_flips_'):], beta, top))
    return _check(12, 'position independence', ok, '; '.join(observed),
                  required)


def check_pair_classification(tables):
    required = 'PC1 rank-distance F1 > baseline F1 on every pattern'
    rows = [r for r in _rows(tables, 'fig9_classification') or ()
            if r['component'] == 1 and r['metric'] == 'rank-distance']
    if not rows:
        return _skip(13, 'pair classification', skipped_not_run, required)
    ok = all(r['f1'] > r['baseline_f1'] for r in rows)
    return _check(
        13, 'pair classification', ok, '; '.join(
            '{}: F1 {:.3f} vs {:.3f}'.format(
                r['dataset'], r['f1'], r['baseline_f1']) for r in rows),
        required)


def finding_checks(tables, gate_passed, n_layers, steering_targets):
    """Checks 9 to 13 on report tables by name"""
    if not gate_passed:
        logging.getLogger(__name__).warning(
            'Training gate failed: Skipping checks 9 to 13')
        return [_skip(number, name, skipped_gate, '-')
                for (number, name) in (
                    (9, 'subspace emergence'), (10, 'causal intervention'),
                    (11, 'steering'), (12, 'position independence'),
                    (13, 'pair classification'))]
    return [check_emergence(tables, n_layers),
            check_causal(tables),
            check_steering(tables, steering_targets),
            check_position(tables),
            check_pair_classification(tables)]


def failures(checks):
    return [c for c in checks if c.status == failed]


def summary_text(checks, config_hash):
    lines = ['Acceptance checks of configuration {}'.format(config_hash), '']
    for check in checks:
        lines.append('{:>2}. {:<24} {}'.format(
            check.number, check.name, check.status))
        lines.append('    observed: {}'.format(check.observed))
        lines.append('    required: {}'.format(check.required))
    counts = collections.Counter(c.status for c in checks)
    lines.append('')
    lines.append(', '.join('{}: {}'.format(status, counts[status])
                           for status in sorted(counts)))
    return '\n'.join(lines) + '\n'


def log_checks(checks, logger=None):
    logger = logger or logging.getLogger(__name__)
    for check in checks:
        log = logger.warning if check.status == failed else logger.info
        log('Check {} ({}): {}: {}', check.number, check.name,
            check.status, check.observed)
