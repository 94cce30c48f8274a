"""Quantitative readouts of sweeps and subspace projections

Logit differences and logit flips over intervention sweeps, Spearman
correlation reports, OI-PC distances between entities and attributes,
and threshold classification of bound entity-attribute pairs.  Every
readout is a `records.Table` so that figures and summaries are rendered
from the same CSV rows.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import collections

import numpy as np

from . import linalg
from . import records
from .general import InputError


distance_metrics = ('abs-diff', 'rank-distance')

other_bucket = 'other'


# Logit metrics


def logit_difference(original, intervened, token):
    """Intervened minus original logit of `token`.  Logits are a vector
    or one row per sample (then `token` may give one token per row).

    """
    original = np.asarray(original, dtype=np.float64)
    intervened = np.asarray(intervened, dtype=np.float64)
    if original.shape != intervened.shape or original.ndim not in (1, 2):
        raise InputError('Logit shapes differ or are not 1-D/2-D: {} vs {}'
                         .format(original.shape, intervened.shape))
    token = np.asarray(token)
    width = original.shape[-1]
    if np.any(token < 0) or np.any(token >= width):
        raise InputError('Token out of range [0, {}): {}'.format(
            width, token))
    if original.ndim == 1:
        if token.ndim != 0:
            raise InputError('Expected a single token for a logit vector')
        return float(intervened[token] - original[token])
    rows = np.arange(original.shape[0])
    token = np.broadcast_to(token, rows.shape)
    return intervened[rows, token] - original[rows, token]


def candidate_oi(prediction, candidates):
    """OI of a predicted token among the candidates, or -1"""
    try:
        return list(candidates).index(prediction)
    except ValueError:
        return -1


def flip_proportions(predicted_ois, n_candidates):
    """Proportions of predictions per candidate OI plus a final "other"
    bucket for predictions outside the candidates (OI -1)

    """
    predicted_ois = list(predicted_ois)
    if not predicted_ois:
        raise InputError('No predictions')
    counts = np.zeros(n_candidates + 1)
    for oi in predicted_ois:
        if 0 <= oi < n_candidates:
            counts[oi] += 1
        else:
            counts[-1] += 1
    return counts / len(predicted_ois)


def logit_flip(predictions, candidates):
    """Proportions of argmax predictions over candidate OIs.

    predictions: Predicted token per sample
    candidates: Candidate attribute tokens per sample in OI order

    """
    predictions = list(predictions)
    candidates = list(candidates)
    if not predictions:
        raise InputError('No predictions')
    if len(predictions) != len(candidates):
        raise InputError('Expected {} candidate lists, got {}'.format(
            len(predictions), len(candidates)))
    return flip_proportions(
        [candidate_oi(p, c) for (p, c) in zip(predictions, candidates)],
        max(len(c) for c in candidates))


def bucket_names(n_candidates):
    return ['a{}'.format(i) for i in range(n_candidates)] + [other_bucket]


flip_header = records.Header(
    ('step', int), ('bucket', str), ('proportion', float), ('n', int))


def flip_tables(sweep):
    """Logit-flip proportions of the intervened predictions per step"""
    by_step = collections.OrderedDict()
    n_candidates = 0
    for row in sweep.predictions.as_dicts():
        by_step.setdefault(row[sweep.step_name], []).append(
            row['predicted_oi'])
        n_candidates = max(n_candidates, row['n_candidates'])
    table = records.Table(flip_header, name='flips')
    for step in sorted(by_step):
        props = flip_proportions(by_step[step], n_candidates)
        for bucket, prop in zip(bucket_names(n_candidates), props):
            table.add((step, bucket, float(prop), len(by_step[step])))
    return table


def plurality(flips, step):
    """Most common bucket at a step of a flip table (ties go to the
    lower OI)

    """
    rows = [r for r in flips.as_dicts() if r['step'] == step]
    if not rows:
        raise InputError('No flips at step: {}'.format(step))
    return max(rows, key=lambda r: r['proportion'])['bucket']


ld_header = records.Header(
    ('step', int), ('candidate_oi', int), ('mean_ld', float),
    ('std_ld', float), ('n', int), ('is_original', int))


def ld_curves(sweep):
    """Mean logit difference per (step, candidate OI), including the
    curve of each sample's original answer

    """
    cells = collections.defaultdict(list)
    original = {}
    for row in sweep.predictions.as_dicts():
        original[row['sample_id']] = row['answer_oi']
    for row in sweep.logits.as_dicts():
        ld = row['logit_intervened'] - row['logit_original']
        cells[(row[sweep.step_name], row['candidate_oi'])].append(ld)
    answer_ois = set(original.values())
    table = records.Table(ld_header, name='ld-curves')
    for (step, oi) in sorted(cells):
        values = np.array(cells[(step, oi)])
        table.add((step, oi, float(values.mean()), float(values.std()),
                   len(values), int(answer_ois == {oi})))
    return table


def curve_value(curves, step, oi):
    for row in curves.as_dicts():
        if row['step'] == step and row['candidate_oi'] == oi:
            return row['mean_ld']
    raise InputError('No curve cell: step {}, OI {}'.format(step, oi))


# Correlations


correlation_header = records.Header(
    ('component', str), ('rho_oi', float), ('rho_pi', float))


def correlation_report(scores, oi_labels, pi_labels):
    """Spearman ρ of each component's scores with OI and with PI"""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 1:
        scores = scores[:, None]
    for name, labels in (('OI', oi_labels), ('PI', pi_labels)):
        labels = np.asarray(labels)
        if len(labels) != scores.shape[0]:
            raise InputError('{} labels length {} does not match {} points'
                             .format(name, len(labels), scores.shape[0]))
        if np.all(labels == labels[0]):
            raise InputError('Constant {} labels'.format(name))
    table = records.Table(correlation_header, name='correlations')
    for col in range(scores.shape[1]):
        table.add(('pc{}'.format(col + 1),
                   linalg.spearman(scores[:, col], oi_labels),
                   linalg.spearman(scores[:, col], pi_labels)))
    return table


relatedness_header = records.Header(
    ('component', str), ('rho_related', float), ('rho_nonrelated', float))


def relatedness_compare(related, nonrelated):
    """Spearman ρ between entity scores and bound-attribute scores per
    component, for related and non-related renderings.

    related, nonrelated: (entity scores, attribute scores) with row i of
        both bound to each other

    """
    shapes = []
    for entity, attribute in (related, nonrelated):
        entity = np.asarray(entity, dtype=np.float64)
        attribute = np.asarray(attribute, dtype=np.float64)
        if entity.shape != attribute.shape or entity.ndim != 2:
            raise InputError('Entity and attribute scores differ in shape: '
                             '{} vs {}'.format(entity.shape,
                                               attribute.shape))
        shapes.append(entity.shape)
    if shapes[0] != shapes[1]:
        raise InputError('Related and non-related counts differ: {} vs {}'
                         .format(shapes[0], shapes[1]))
    table = records.Table(relatedness_header, name='relatedness')
    for col in range(shapes[0][1]):
        table.add(('pc{}'.format(col + 1),) + tuple(
            linalg.spearman(np.asarray(e)[:, col], np.asarray(a)[:, col])
            for (e, a) in (related, nonrelated)))
    return table


regression_header = records.Header(
    ('components', int), ('r2_pls', float), ('r2_pca', float))


def regression_curves(matrix, c):
    """Cumulative R² of regressing OI on the leading PLS and PCA
    components of an activation matrix

    """
    pls = linalg.pls_fit(matrix.data, matrix.oi_labels, c)
    pca = linalg.pca(matrix.data, c)
    pca_r2 = linalg.regression_r2(pca.scores(matrix.data), matrix.oi_labels)
    table = records.Table(regression_header, name='regression')
    for k in range(c):
        table.add((k + 1, float(pls.r2_per_component[k]), float(pca_r2[k])))
    return table


# Distances and classification


class PairDistanceMatrix:

    def __init__(self, values, metric, component):
        self._values = values
        self._metric = metric
        self._component = component

    @property
    def values(self):
        """Distances of entity rows to attribute columns"""
        return self._values

    @property
    def metric(self):
        return self._metric

    @property
    def component(self):
        return self._component

    @property
    def shape(self):
        return self._values.shape


def pair_distances(entity_coords, attribute_coords, component=1,
                   metric='rank-distance'):
    """Distances between entity and attribute points on one component
    (1-based).  Rank distances use average ranks in the pooled set of
    entity and attribute values, divided by the pool size.

    """
    entity = np.asarray(entity_coords, dtype=np.float64)
    attribute = np.asarray(attribute_coords, dtype=np.float64)
    if entity.ndim != 2 or attribute.ndim != 2 or not len(entity) \
            or not len(attribute):
        raise InputError('Need nonempty 2-D point sets')
    if not 1 <= component <= min(entity.shape[1], attribute.shape[1]):
        raise InputError('Component {} out of range for widths {} and {}'
                         .format(component, entity.shape[1],
                                 attribute.shape[1]))
    u = entity[:, component - 1]
    v = attribute[:, component - 1]
    if metric == 'abs-diff':
        values = np.abs(u[:, None] - v[None, :])
    elif metric == 'rank-distance':
        ranks = linalg.average_ranks(np.concatenate([u, v]))
        pool = len(ranks)
        values = np.abs(ranks[:len(u), None] - ranks[None, len(u):]) / pool
    else:
        raise InputError('Unknown metric: {!r}'.format(metric))
    return PairDistanceMatrix(values, metric, component)


candidate_header = records.Header(
    ('sample_id', int), ('entity_oi', int), ('attribute_oi', int),
    ('distance', float), ('bound', int))


def binding_candidates(contexts, entity_coords, attribute_coords,
                       component=1, metric='rank-distance'):
    """Every entity×attribute pairing of every context with its distance
    and whether the context binds them.

    entity_coords, attribute_coords: Per context id, points of the
        distinct entities (attributes) in OI order

    """
    table = records.Table(candidate_header, name='candidates')
    for sample in contexts:
        distances = pair_distances(
            entity_coords[sample.id], attribute_coords[sample.id],
            component, metric).values
        bound = {(p.entity_oi, p.attribute_oi) for p in sample.pairs}
        for e_oi in range(distances.shape[0]):
            for a_oi in range(distances.shape[1]):
                table.add((sample.id, e_oi, a_oi,
                           float(distances[e_oi, a_oi]),
                           int((e_oi, a_oi) in bound)))
    return table


def f1_score(predicted, labels):
    """F1 of the positive class (0 when nothing is predicted or
    nothing is positive)

    """
    predicted = np.asarray(predicted, dtype=bool)
    labels = np.asarray(labels, dtype=bool)
    if predicted.shape != labels.shape:
        raise InputError('Shapes differ: {} vs {}'.format(
            predicted.shape, labels.shape))
    tp = int(np.sum(predicted & labels))
    if tp == 0:
        return 0.0
    precision = tp / int(np.sum(predicted))
    recall = tp / int(np.sum(labels))
    return 2 * precision * recall / (precision + recall)


Classification = collections.namedtuple(
    'Classification', 'threshold dev_f1 f1 baseline_f1')


def threshold_classify(dev_distances, dev_labels, test_distances,
                       test_labels):
    """Choose the distance threshold maximizing dev F1 (bound when the
    distance is at most the threshold) and report test F1 with the
    F1 of predicting every candidate bound.

    Thresholds scanned are the midpoints of consecutive distinct dev
    distances and the largest dev distance.  Ties go to the smallest
    threshold.

    """
    dev_d = np.asarray(dev_distances, dtype=np.float64)
    dev_y = np.asarray(dev_labels, dtype=bool)
    test_d = np.asarray(test_distances, dtype=np.float64)
    test_y = np.asarray(test_labels, dtype=bool)
    if not len(dev_d) or not len(test_d):
        raise InputError('Empty dev or test set')
    if dev_d.shape != dev_y.shape or test_d.shape != test_y.shape:
        raise InputError('Distances and labels differ in length')
    if dev_y.all() or not dev_y.any():
        raise InputError('Dev labels have a single class')
    levels = np.unique(dev_d)
    thresholds = list((levels[:-1] + levels[1:]) / 2) + [levels[-1]]
    best = None
    for threshold in thresholds:
        f1 = f1_score(dev_d <= threshold, dev_y)
        if best is None or f1 > best[1]:
            best = (float(threshold), f1)
    return Classification(
        best[0], best[1], f1_score(test_d <= best[0], test_y),
        f1_score(np.ones_like(test_y), test_y))


classification_header = records.Header(
    ('dataset', str), ('component', int), ('metric', str),
    ('threshold', float), ('dev_f1', float), ('f1', float),
    ('baseline_f1', float))
