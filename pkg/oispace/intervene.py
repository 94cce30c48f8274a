"""Causal interventions along OI subspaces

Direct editing moves the query-entity activation along the subspace by
a number of steps:

* direct-literal: x* = x + α·Bᵀ(Bx + βv), with the uncentered product
  Bx
* direct-replace: x* = x + αβ·Bᵀv, a pure translation in the subspace

where B holds the basis rows and v = (step value, fixed second
coordinate, 0, ...).  Steering adds α·Bᵀs for a steering vector s of
mean subspace differences between activations of OI `bi` and OI 0.

Sweeps record the final-position logits of every candidate attribute
before and after the edit, and the argmax predictions.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import itertools

import barnapy.general
from barnapy import logging
import numpy as np
import torch

from . import analysis
from . import datagen
from . import records
from . import toylm
from .general import InputError


modes = ('direct-literal', 'direct-replace', 'steer')
direct_modes = modes[:2]


class InterventionSpec:

    def __init__(self, layer, alpha, step_value=0.0, beta=0,
                 pc2_fixed=0.0, mode='direct-literal', target_bi=None):
        if isinstance(layer, bool) or not isinstance(layer, int) \
                or layer < 0:
            raise InputError('Not a layer: {!r}'.format(layer))
        if isinstance(beta, bool) or not isinstance(beta, int) or beta < 0:
            raise InputError('Not a step count: {!r}'.format(beta))
        if mode not in modes:
            raise InputError('Unknown mode: {!r}'.format(mode))
        if mode == 'steer' and (target_bi is None or target_bi < 1):
            raise InputError('Steering needs a target BI >= 1: {!r}'
                             .format(target_bi))
        self._layer = layer
        self._alpha = float(alpha)
        self._step_value = float(step_value)
        self._beta = beta
        self._pc2_fixed = float(pc2_fixed)
        self._mode = mode
        self._target_bi = target_bi

    @property
    def layer(self):
        return self._layer

    @property
    def alpha(self):
        return self._alpha

    @property
    def step_value(self):
        return self._step_value

    @property
    def beta(self):
        return self._beta

    @property
    def pc2_fixed(self):
        return self._pc2_fixed

    @property
    def mode(self):
        return self._mode

    @property
    def target_bi(self):
        return self._target_bi

    def step_vector(self, c):
        v = np.zeros(c)
        v[0] = self._step_value
        if c > 1:
            v[1] = self._pc2_fixed
        return v

    def replace(self, **changes):
        fields = self.as_yaml_object()
        fields.update(changes)
        return InterventionSpec(**fields)

    def as_yaml_object(self):
        return dict(
            layer=self._layer,
            alpha=self._alpha,
            step_value=self._step_value,
            beta=self._beta,
            pc2_fixed=self._pc2_fixed,
            mode=self._mode,
            target_bi=self._target_bi,
        )

    def __eq__(self, other):
        return (type(self) == type(other)
                and self.as_yaml_object() == other.as_yaml_object())

    def __repr__(self):
        return '{}({})'.format(type(self).__qualname__, ', '.join(
            '{}={!r}'.format(k, v)
            for (k, v) in self.as_yaml_object().items()))


def _check_width(x, subspace):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1:] != (subspace.width,) or x.ndim > 2:
        raise InputError('Width mismatch: expected {}, got shape {}'.format(
            subspace.width, x.shape))
    return x


def direct_edit(x, subspace, spec):
    """Edited activation (or rows of activations) by a direct mode"""
    x = _check_width(x, subspace)
    v = spec.step_vector(subspace.n_components)
    if spec.mode == 'direct-literal':
        inner = subspace.project_uncentered(x) + spec.beta * v
        return x + spec.alpha * subspace.lift(inner)
    elif spec.mode == 'direct-replace':
        return x + subspace.lift(spec.alpha * spec.beta * v)
    raise InputError('Not a direct mode: {!r}'.format(spec.mode))


class SteeringVector:

    def __init__(self, coords, source_bi, n_averaged):
        coords = np.asarray(coords, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(coords)):
            raise InputError('Non-finite steering vector')
        if n_averaged < 1:
            raise InputError('Steering vector averages no pairs')
        self._coords = coords
        self._source_bi = source_bi
        self._n_averaged = n_averaged

    @property
    def coords(self):
        return self._coords

    @property
    def source_bi(self):
        return self._source_bi

    @property
    def n_averaged(self):
        return self._n_averaged

    def __repr__(self):
        return '{}(coords={}, source_bi={}, n_averaged={})'.format(
            type(self).__qualname__, self._coords.tolist(),
            self._source_bi, self._n_averaged)


def steering_vector(bi_matrix, zero_matrix, subspace, source_bi=None):
    """Mean subspace difference of paired rows (row i of both matrices
    comes from the same context)

    """
    if bi_matrix.n_rows != zero_matrix.n_rows:
        raise InputError('Row counts differ: {} vs {}'.format(
            bi_matrix.n_rows, zero_matrix.n_rows))
    if bi_matrix.n_rows < 1:
        raise InputError('No rows to average')
    if source_bi is None:
        labels = set(bi_matrix.oi_labels.tolist())
        source_bi = labels.pop() if len(labels) == 1 else -1
    diffs = (subspace.project(bi_matrix.data)
             - subspace.project(zero_matrix.data))
    return SteeringVector(diffs.mean(axis=0), source_bi, bi_matrix.n_rows)


def apply_steering(x, subspace, sv, alpha):
    x = _check_width(x, subspace)
    return x + alpha * subspace.lift(sv.coords)


# Sweeps


logit_fields = (('sample_id', int), ('candidate_oi', int),
                ('logit_original', float), ('logit_intervened', float))
prediction_fields = (('sample_id', int), ('answer_oi', int),
                     ('n_candidates', int), ('original_oi', int),
                     ('predicted_oi', int), ('predicted', int))


class SweepResult:
    """Logit rows and prediction rows of one sweep.  `step_name` names
    the swept quantity ('beta' or 'target_bi').

    """

    def __init__(self, step_name, spec, layer=None):
        self._step_name = step_name
        self._spec = spec
        self._layer = spec.layer if layer is None else layer
        self._logits = records.Table(
            [logit_fields[0], (step_name, int)] + list(logit_fields[1:]),
            name='logits')
        self._predictions = records.Table(
            [prediction_fields[0], (step_name, int)]
            + list(prediction_fields[1:]),
            name='predictions')

    @property
    def step_name(self):
        return self._step_name

    @property
    def spec(self):
        return self._spec

    @property
    def layer(self):
        return self._layer

    @property
    def logits(self):
        return self._logits

    @property
    def predictions(self):
        return self._predictions

    def steps(self):
        return sorted(set(self._predictions.column(self._step_name)))

    def write_csv(self, directory, prefix):
        return (self._logits.write_csv(
                    '{}/{}_logits.csv'.format(directory, prefix)),
                self._predictions.write_csv(
                    '{}/{}_predictions.csv'.format(directory, prefix)))

    @staticmethod
    def read_csv(directory, prefix, step_name, spec):
        result = SweepResult(step_name, spec)
        for table, kind in ((result.logits, 'logits'),
                            (result.predictions, 'predictions')):
            path = '{}/{}_{}.csv'.format(directory, prefix, kind)
            for record in records.Table.read_csv(path, table.header):
                table.add(record)
        return result


def _final_rows(logits, lengths):
    rows = torch.arange(logits.shape[0])
    last = torch.as_tensor(lengths) - 1
    return logits[rows, last].numpy().astype(np.float64)


def _sweep(model, samples, vocab, layer, steps, edit_fn, result,
           batch_size):
    logger = logging.getLogger(__name__)
    samples = list(samples)
    if not samples:
        raise InputError('No samples to sweep')
    starts = range(0, len(samples), batch_size)
    for start in barnapy.general.track_iterator(
            starts,
            lambda count: logger.info(
                'Swept batches: {} of {}', count, len(starts)),
            track_every=20,
            track_init=False,
            track_end=True):
        chunk = samples[start:start + batch_size]
        batch, lengths = toylm.pad_batch(
            [s.model_input(vocab) for s in chunk], vocab.pad)
        positions = [toylm.role_position(s, 'query-entity') for s in chunk]
        logits, captured = toylm.forward_with_trace(
            model, batch,
            toylm.TraceSpec([layer], row_positions=positions))
        original = _final_rows(logits, lengths)
        x = captured[layer].numpy().astype(np.float64)
        for step in steps:
            edited = edit_fn(x, step)
            intervened = _final_rows(toylm.forward_with_edit(
                model, batch,
                [(layer, row, positions[row], edited[row])
                 for row in range(len(chunk))]), lengths)
            for row, sample in enumerate(chunk):
                candidates = sample.candidates()
                answer_oi = analysis.candidate_oi(sample.answer, candidates)
                for oi, token in enumerate(candidates):
                    result.logits.add((
                        sample.id, step, oi, float(original[row, token]),
                        float(intervened[row, token])))
                predicted = int(np.argmax(intervened[row]))
                result.predictions.add((
                    sample.id, step, answer_oi, len(candidates),
                    analysis.candidate_oi(
                        int(np.argmax(original[row])), candidates),
                    analysis.candidate_oi(predicted, candidates),
                    predicted))
    return result


def run_step_sweep(model, samples, subspace, spec, betas, vocab,
                   batch_size=64):
    """Edit the query-entity activation by each step count in `betas`
    with a direct mode

    """
    samples = list(samples)
    betas = sorted(set(betas))
    if not betas or betas[0] < 0:
        raise InputError('Bad step counts: {}'.format(betas))
    for sample in samples:
        if sample.k_pairs < betas[-1] + 1:
            raise InputError('Sample {} has {} pairs, fewer than {} steps'
                             .format(sample.id, sample.k_pairs,
                                     betas[-1] + 1))
        if sample.query_kind != 'entity' or sample.query_entity_oi != 0:
            raise InputError('Sample {} does not query the OI-0 entity'
                             .format(sample.id))
    return _sweep(
        model, samples, vocab, spec.layer, betas,
        lambda x, beta: direct_edit(x, subspace, spec.replace(beta=beta)),
        SweepResult('beta', spec), batch_size)


def run_steering_sweep(model, samples, subspace, vectors, layer, alpha,
                       vocab, batch_size=64):
    """Steer the query-entity activation toward each target BI.
    `vectors` maps target BI to its steering vector.

    """
    spec = InterventionSpec(layer, alpha, mode='steer',
                            target_bi=min(vectors))
    return _sweep(
        model, samples, vocab, layer, sorted(vectors),
        lambda x, bi: apply_steering(x, subspace, vectors[bi], alpha),
        SweepResult('target_bi', spec), batch_size)


layer_effect_header = records.Header(
    ('layer', int), ('mean_ld_other', float), ('flip_proportion', float),
    ('n', int))


def layer_effect(sweep):
    """Mean LD of candidates other than the original answer and the
    proportion of predictions moved off the original answer

    """
    answers = {}
    for row in sweep.predictions.as_dicts():
        answers[row['sample_id']] = row['answer_oi']
    lds = [r['logit_intervened'] - r['logit_original']
           for r in sweep.logits.as_dicts()
           if r['candidate_oi'] != answers[r['sample_id']]]
    predictions = sweep.predictions.as_dicts()
    flipped = [r['predicted_oi'] != r['answer_oi'] for r in predictions]
    return (float(np.mean(lds)) if lds else 0.0,
            float(np.mean(flipped)), len(predictions))


def run_layer_sweep(model, samples, subspaces, spec, vocab, betas=(1,),
                    batch_size=64):
    """Repeat a step sweep at every layer with that layer's subspace.
    Returns (effect table, sweeps by layer).

    """
    logger = logging.getLogger(__name__)
    table = records.Table(layer_effect_header, name='layer-effects')
    sweeps = {}
    for layer in sorted(subspaces):
        sweep = run_step_sweep(
            model, samples, subspaces[layer], spec.replace(layer=layer),
            betas, vocab, batch_size)
        effect = layer_effect(sweep)
        logger.info('Layer {}: mean LD of other attributes: {:.4f}, '
                    'flips: {:.3f}', layer, effect[0], effect[1])
        table.add((layer,) + effect)
        sweeps[layer] = sweep
    return table, sweeps


# Hyperparameter search


def step_values(matrix, subspace, quantiles):
    """Candidate step values: quantiles of the gaps between consecutive
    per-OI means of first-component scores

    """
    scores = subspace.project(matrix.data)[:, 0]
    ois = sorted(set(matrix.oi_labels.tolist()))
    if len(ois) < 2:
        raise InputError('Need at least two OIs for step gaps')
    means = [scores[matrix.oi_labels == oi].mean() for oi in ois]
    gaps = np.abs(np.diff(means))
    return [float(q) for q in np.quantile(gaps, quantiles)]


def target_hit_rate(sweep):
    """Proportion of (sample, step) predictions landing on the candidate
    whose OI equals the step

    """
    rows = sweep.predictions.as_dicts()
    if not rows:
        raise InputError('Empty sweep')
    return float(np.mean([r['predicted_oi'] == r[sweep.step_name]
                          for r in rows]))


search_header = records.Header(
    ('layer', int), ('mode', str), ('quantile', float),
    ('step_value', float), ('alpha', float), ('score', float))


def grid_search(model, samples, subspaces, matrices, vocab, base_spec,
                alphas=(1.0, 2.0, 3.0, 5.0), quantiles=(0.25, 0.5, 0.75),
                modes=('direct-literal',), betas=(1, 2, 3),
                batch_size=64):
    """Choose layer, step value, α and mode maximizing the target hit
    rate on dev samples.  Step values come from each layer's matrix.
    Returns (best spec, search table).  Ties go to the first
    combination in layer, mode, quantile, α order.

    """
    logger = logging.getLogger(__name__)
    table = records.Table(search_header, name='grid-search')
    best = None
    for layer in sorted(subspaces):
        values = step_values(matrices[layer], subspaces[layer], quantiles)
        for mode, (quantile, value), alpha in itertools.product(
                modes, zip(quantiles, values), alphas):
            spec = base_spec.replace(
                layer=layer, mode=mode, step_value=value, alpha=alpha)
            score = target_hit_rate(run_step_sweep(
                model, samples, subspaces[layer], spec, betas, vocab,
                batch_size))
            table.add((layer, mode, float(quantile), value, alpha, score))
            if best is None or score > best[1]:
                best = (spec, score)
    logger.info('Chosen intervention: {} (hit rate {:.3f})',
                best[0], best[1])
    return best[0], table


def query_first_entity(samples):
    """Keep samples that query the OI-0 entity"""
    return [s for s in samples
            if s.query_kind == 'entity' and s.query_entity_oi == 0]


def paired_entity_queries(samples, vocab, bi):
    """(OI-bi queries, OI-0 queries) of the same contexts, in order"""
    zero = []
    target = []
    for sample in datagen.expand_queries(samples, vocab):
        if sample.query_entity_oi == 0:
            zero.append(sample)
        elif sample.query_entity_oi == bi:
            target.append(sample)
    if [s.source_id for s in zero] != [s.source_id for s in target]:
        raise InputError('Contexts without an OI-{} entity'.format(bi))
    return target, zero
