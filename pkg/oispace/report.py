"""Report bundle

Every experiment named in the configuration contributes CSV tables and
SVG figures rendered from them.  The bundle directory holds `tables/`,
`figures/`, a `summary.txt` with the acceptance checks, and a
`manifest.yaml` listing every artifact with its content hash alongside
versions, seeds, and the configuration hash.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import collections
import platform
import shutil

from barnapy import logging
import matplotlib
import numpy as np
import scipy
import torch
import yaml

from . import acceptance
from . import analysis
from . import capture
from . import datagen
from . import file
from . import general
from . import intervene
from . import linalg
from . import plots
from . import records
from . import subspace
from . import workspace
from .general import FormatError, InputError, NumericError


layer_correlation_header = records.Header(
    ('layer', int), ('component', str), ('rho_oi', float),
    ('rho_pi', float))
position_header = records.Header(
    ('dataset', str), ('variant', str), ('pi_measure', str),
    ('component', str), ('rho_oi', float), ('rho_pi', float))
distance_header = records.Header(
    ('entity_oi', int), ('attribute_oi', int), ('distance', float),
    ('bound', int))
bound_mean_header = records.Header(
    ('metric', str), ('bound', int), ('mean_distance', float), ('n', int))
method_header = records.Header(
    ('method', str), ('rho_oi', float), ('rho_pi', float))
loss_header = records.Header(('step', int), ('loss', float))


class Bundle:
    """Tables and the figures rendered from them, by name"""

    def __init__(self):
        self._tables = collections.OrderedDict()
        self._figures = collections.OrderedDict()

    @property
    def tables(self):
        return self._tables

    @property
    def figures(self):
        """(SVG text, name of the source table) by name"""
        return self._figures

    def add_table(self, name, table):
        self._tables[name] = table

    def add_figure(self, name, figure, source):
        """Render a matplotlib figure to SVG and keep the text"""
        svg = plots.render_svg(figure)
        if source not in self._tables:
            raise InputError('Figure {} has no source table: {}'.format(
                name, source))
        self._figures[name] = (svg, source)

    def table_hashes(self):
        return {'tables/{}.csv'.format(name): general.sha256_bytes(
                    table.to_csv_text().encode('utf-8'))
                for (name, table) in self._tables.items()}


class Inputs:
    """Lazy access to the stage artifacts a report reads"""

    def __init__(self, cfg, ws):
        self._cfg = cfg
        self._ws = ws
        self._vocab = None
        self._splits = {}
        self._selection = None
        self._spec = None

    @property
    def cfg(self):
        return self._cfg

    @property
    def ws(self):
        return self._ws

    @property
    def vocab(self):
        if self._vocab is None:
            self._vocab = datagen.load_vocabulary(self._ws.vocabulary)
        return self._vocab

    def splits(self, manifest):
        if manifest.name not in self._splits:
            self._splits[manifest.name] = workspace.load_splits(
                self._ws, manifest)
        return self._splits[manifest.name]

    @property
    def best_layer(self):
        if self._selection is None:
            self._selection = workspace.load_yaml(self._ws.selection)
        return self._selection['best_layer']

    def matrix(self, dataset, split, role, layer):
        path = self._ws.activations(dataset, split, role, layer)
        return capture.load_matrix(path) if path.is_file() else None

    def subspace(self, dataset, role, layer, method=None):
        path = self._ws.subspace(dataset, role, layer,
                                 method or self._cfg.subspace.method)
        return subspace.load_subspace(path) if path.is_file() else None

    def queries(self, manifest, split, role):
        return workspace.queries_of(
            self.splits(manifest)[split], role, self.vocab)

    def spec(self):
        if self._spec is None:
            self._spec = intervene.InterventionSpec(
                **workspace.load_yaml(self._ws.intervention_spec))
        return self._spec

    def sweep(self, prefix, step_name):
        return intervene.SweepResult.read_csv(
            self._ws.sweeps, prefix, step_name, self.spec())

    def coords_by_context(self, manifest, split, role, layer):
        """Subspace coordinates of the rows of each context in OI order,
        by context id, or None without a matrix or subspace

        """
        matrix = self.matrix(manifest.name, split, role, layer)
        sub = self.subspace(manifest.name, role, layer)
        if matrix is None or sub is None:
            return None
        queries = self.queries(manifest, split, role)
        if len(queries) != matrix.n_rows:
            raise FormatError('Dataset {}: {} {} queries of split {} but '
                              '{} activation rows'.format(
                                  manifest.name, len(queries), role, split,
                                  matrix.n_rows))
        grouped = collections.OrderedDict()
        for query, row in zip(queries, sub.project(matrix.data)):
            grouped.setdefault(query.source_id, []).append(
                (query.query_oi, row))
        return {ctx: np.array([row for (_, row) in
                               sorted(items, key=lambda item: item[0])])
                for (ctx, items) in grouped.items()}


def _missing(what, *args):
    logging.getLogger(__name__).warning(
        'Not reported: ' + what, *args)


def _add_projection(bundle, name, matrix, sub, title):
    table = subspace.ProjectionTable.from_matrix(matrix, sub)
    bundle.add_table(name, table)
    bundle.add_figure(name, plots.projection_figure(table, title), name)


def report_training(inputs, bundle):
    training = workspace.load_yaml(inputs.ws.training)
    table = records.Table(
        loss_header, [tuple(x) for x in training['report']['losses']],
        name='training-loss')
    bundle.add_table('training_loss', table)
    if len(table):
        bundle.add_figure('training_loss', plots.line_plot(
            {'loss': (table.column('step'), table.column('loss'))},
            'Training loss', 'step', 'loss'), 'training_loss')


def report_fig2(inputs, bundle):
    """OI subspace of the primary dataset at every layer"""
    cfg = inputs.cfg
    primary = cfg.primary_dataset
    scores = records.Table.read_csv(
        inputs.ws.layer_scores, subspace.layer_score_header,
        name='layer-scores')
    bundle.add_table('fig2_layer_scores', scores)
    bundle.add_figure('fig2_layer_scores', plots.line_plot(
        {'PC1': (scores.column('layer'), scores.column('rho_dev'))},
        'Dev ρ(PC1, OI) by layer', 'layer', 'ρ'), 'fig2_layer_scores')
    correlations = records.Table(
        layer_correlation_header, name='correlations')
    for layer in cfg.layers(cfg.capture.layers):
        matrix = inputs.matrix(primary.name, 'test', 'entity-query', layer)
        sub = inputs.subspace(primary.name, 'entity-query', layer)
        if matrix is None or sub is None:
            _missing('Layer {} of dataset {}', layer, primary.name)
            continue
        for row in analysis.correlation_report(
                sub.project(matrix.data), matrix.oi_labels,
                matrix.pi_labels):
            correlations.add((layer,) + row)
        _add_projection(bundle, 'fig2_projection_layer{}'.format(layer),
                        matrix, sub, 'Layer {}'.format(layer))
    bundle.add_table('fig2_correlations', correlations)


def report_fig3(inputs, bundle):
    curves = analysis.ld_curves(inputs.sweep('steps', 'beta'))
    bundle.add_table('fig3_ld_curves', curves)
    bundle.add_figure('fig3_ld_curves', plots.ld_curve_figure(
        curves, 'Logit difference by steps'), 'fig3_ld_curves')


def report_fig4(inputs, bundle):
    flips = analysis.flip_tables(inputs.sweep('steps', 'beta'))
    bundle.add_table('fig4_flips', flips)
    bundle.add_figure('fig4_flips', plots.flip_figure(
        flips, 'Logit flip by steps'), 'fig4_flips')


def report_fig5(inputs, bundle):
    curves = analysis.ld_curves(inputs.sweep('steering', 'target_bi'))
    bundle.add_table('fig5_steering_ld', curves)
    bundle.add_figure('fig5_steering_ld', plots.ld_curve_figure(
        curves, 'Logit difference by steering target'), 'fig5_steering_ld')


def report_fig7(inputs, bundle):
    """Position independence on filler, pseudo and interjection
    datasets, each projected by its own subspace at the best layer

    """
    layer = inputs.best_layer
    table = records.Table(position_header, name='position')
    for manifest in inputs.cfg.datasets:
        if manifest.variant not in ('filler', 'pseudo', 'interjection'):
            continue
        matrix = inputs.matrix(manifest.name, 'test', 'entity-query', layer)
        sub = inputs.subspace(manifest.name, 'entity-query', layer)
        if matrix is None or sub is None:
            _missing('Dataset {} at layer {}', manifest.name, layer)
            continue
        measures = [('position', matrix.pi_labels)]
        if manifest.variant == 'filler':
            queries = inputs.queries(manifest, 'test', 'entity-query')
            if len(queries) != matrix.n_rows:
                raise FormatError('Dataset {}: Queries and activation rows '
                                  'differ'.format(manifest.name))
            measures.insert(0, ('filler_length',
                                [q.variant_arg for q in queries]))
        scores = sub.project(matrix.data)
        for measure, labels in measures:
            try:
                rows = analysis.correlation_report(
                    scores, matrix.oi_labels, labels)
            except InputError as e:
                _missing('Dataset {}: {}: {}', manifest.name, measure, e)
                continue
            for row in rows:
                table.add((manifest.name, manifest.variant, measure) + row)
        _add_projection(bundle, 'fig7_projection_{}'.format(manifest.name),
                        matrix, sub, manifest.name)
    bundle.add_table('fig7_correlations', table)


def _binding_dataset(cfg):
    patterns = cfg.datasets_of('pattern')
    return patterns[0] if patterns else cfg.primary_dataset


def report_fig8(inputs, bundle):
    """Entity to attribute distances of one context and the mean
    distances of bound and unbound pairs

    """
    manifest = _binding_dataset(inputs.cfg)
    layer = inputs.best_layer
    entity = inputs.coords_by_context(
        manifest, 'test', 'entity-query', layer)
    attribute = inputs.coords_by_context(
        manifest, 'test', 'attribute-query', layer)
    contexts = inputs.splits(manifest)['test']
    if entity is None or attribute is None or not contexts:
        _missing('Distances of dataset {}', manifest.name)
        return
    first = contexts[0]
    distances = analysis.pair_distances(entity[first.id],
                                        attribute[first.id])
    bound = {(p.entity_oi, p.attribute_oi) for p in first.pairs}
    table = records.Table(distance_header, name='distances')
    for e_oi in range(distances.shape[0]):
        for a_oi in range(distances.shape[1]):
            table.add((e_oi, a_oi, float(distances.values[e_oi, a_oi]),
                       int((e_oi, a_oi) in bound)))
    bundle.add_table('fig8_distances', table)
    bundle.add_figure('fig8_distances', plots.distance_figure(
        distances, '{} context {}'.format(manifest.name, first.id)),
        'fig8_distances')
    means = records.Table(bound_mean_header, name='bound-means')
    for metric in analysis.distance_metrics:
        candidates = analysis.binding_candidates(
            contexts, entity, attribute, 1, metric).as_dicts()
        for is_bound in (1, 0):
            values = [r['distance'] for r in candidates
                      if r['bound'] == is_bound]
            means.add((metric, is_bound,
                       float(np.mean(values)) if values else float('nan'),
                       len(values)))
    bundle.add_table('fig8_bound_means', means)


def report_fig9(inputs, bundle):
    """Bound-pair classification by distance thresholds on every binding
    pattern

    """
    cfg = inputs.cfg
    layer = inputs.best_layer
    table = records.Table(analysis.classification_header,
                          name='classification')
    for manifest in cfg.datasets_of('pattern'):
        splits = inputs.splits(manifest)
        coords = {}
        for split in ('dev', 'test'):
            coords[split] = (
                inputs.coords_by_context(
                    manifest, split, 'entity-query', layer),
                inputs.coords_by_context(
                    manifest, split, 'attribute-query', layer))
        if any(c is None for pair in coords.values() for c in pair):
            _missing('Classification of dataset {}', manifest.name)
            continue
        for component in range(1, cfg.subspace.components + 1):
            for metric in analysis.distance_metrics:
                dev, test = (analysis.binding_candidates(
                    splits[split], coords[split][0], coords[split][1],
                    component, metric) for split in ('dev', 'test'))
                result = analysis.threshold_classify(
                    dev.column('distance'), dev.column('bound'),
                    test.column('distance'), test.column('bound'))
                table.add((manifest.name, component, metric) + result)
    bundle.add_table('fig9_classification', table)
    rows = [r for r in table.as_dicts() if r['component'] == 1]
    names = list(collections.OrderedDict.fromkeys(r['dataset'] for r in rows))
    if not names:
        return
    series = collections.OrderedDict()
    for metric in analysis.distance_metrics:
        cells = {r['dataset']: r['f1'] for r in rows if r['metric'] == metric}
        series['F1 ' + metric] = (list(range(len(names))),
                                  [cells[n] for n in names])
    baseline = {r['dataset']: r['baseline_f1'] for r in rows}
    series['baseline'] = (list(range(len(names))),
                          [baseline[n] for n in names])
    bundle.add_figure('fig9_classification', plots.line_plot(
        series, 'PC1 F1: ' + ', '.join(names), 'dataset', 'F1'),
        'fig9_classification')


def _bound_rows(contexts, entity, attribute):
    """Entity and attribute coordinates of every bound pair"""
    entity_rows = []
    attribute_rows = []
    for context in contexts:
        if context.id not in entity or context.id not in attribute:
            continue
        for pair in context.pairs:
            entity_rows.append(entity[context.id][pair.entity_oi])
            attribute_rows.append(attribute[context.id][pair.attribute_oi])
    return np.array(entity_rows), np.array(attribute_rows)


def report_fig10(inputs, bundle):
    """Entity and bound attribute coordinates of relational contexts
    against their non-relational renderings

    """
    cfg = inputs.cfg
    layer = inputs.best_layer
    for manifest in cfg.datasets_of('nonrelated'):
        rows = []
        for dataset in (cfg.dataset(manifest.source), manifest):
            entity = inputs.coords_by_context(
                dataset, 'test', 'entity-query', layer)
            attribute = inputs.coords_by_context(
                dataset, 'test', 'attribute-query', layer)
            if entity is None or attribute is None:
                break
            rows.append(_bound_rows(
                inputs.splits(dataset)['test'], entity, attribute))
        if len(rows) < 2:
            _missing('Relatedness of dataset {}', manifest.name)
            continue
        n = min(len(rows[0][0]), len(rows[1][0]))
        table = analysis.relatedness_compare(
            (rows[0][0][:n], rows[0][1][:n]),
            (rows[1][0][:n], rows[1][1][:n]))
        name = 'fig10_relatedness_{}'.format(manifest.name)
        bundle.add_table(name, table)
        components = list(range(1, len(table) + 1))
        bundle.add_figure(name, plots.line_plot(
            collections.OrderedDict((
                ('related', (components, table.column('rho_related'))),
                ('non-related',
                 (components, table.column('rho_nonrelated'))))),
            'ρ(entity, bound attribute)', 'component', 'ρ'), name)


def report_fig11(inputs, bundle):
    primary = inputs.cfg.primary_dataset
    matrix = inputs.matrix(primary.name, 'train', 'entity-query',
                           inputs.best_layer)
    if matrix is None:
        _missing('Regression of dataset {}', primary.name)
        return
    c = min(10, matrix.width, matrix.n_rows - 1)
    table = analysis.regression_curves(matrix, c)
    bundle.add_table('fig11_regression', table)
    components = table.column('components')
    bundle.add_figure('fig11_regression', plots.line_plot(
        collections.OrderedDict((
            ('PLS', (components, table.column('r2_pls'))),
            ('PCA', (components, table.column('r2_pca'))))),
        'Cumulative R² of OI', 'components', 'R²'), 'fig11_regression')


def report_fig12(inputs, bundle):
    """ICA subspace of the primary dataset and the OI correlation of the
    first component of every fitted method

    """
    cfg = inputs.cfg
    primary = cfg.primary_dataset
    layer = inputs.best_layer
    test = inputs.matrix(primary.name, 'test', 'entity-query', layer)
    if test is None:
        _missing('Methods of dataset {}', primary.name)
        return
    ica = inputs.subspace(primary.name, 'entity-query', layer, 'ica')
    train = inputs.matrix(primary.name, 'train', 'entity-query', layer)
    if ica is None and train is not None:
        try:
            ica = subspace.fit_oi_subspace(
                train, cfg.subspace.components, 'ica', cfg.seed)
        except NumericError as e:
            _missing('ICA of dataset {}: {}', primary.name, e)
    methods = records.Table(method_header, name='methods')
    for method in subspace.methods:
        sub = (ica if method == 'ica'
               else inputs.subspace(primary.name, 'entity-query', layer,
                                    method))
        if sub is None:
            continue
        scores = sub.project(test.data)[:, 0]
        methods.add((method, linalg.spearman(scores, test.oi_labels),
                     linalg.spearman(scores, test.pi_labels)))
    bundle.add_table('fig12_methods', methods)
    if ica is not None:
        bundle.add_table('fig12_ica_correlations', analysis.correlation_report(
            ica.project(test.data), test.oi_labels, test.pi_labels))
        _add_projection(bundle, 'fig12_ica_projection', test, ica,
                        'ICA, layer {}'.format(layer))


def report_fig14(inputs, bundle):
    table = records.Table.read_csv(
        inputs.ws.sweeps / 'layer_effects.csv',
        intervene.layer_effect_header, name='layer-effects')
    bundle.add_table('fig14_layer_effects', table)
    layers = table.column('layer')
    bundle.add_figure('fig14_layer_effects', plots.line_plot(
        collections.OrderedDict((
            ('mean LD of others', (layers, table.column('mean_ld_other'))),
            ('flip proportion', (layers, table.column('flip_proportion'))),
        )), 'Intervention effect by layer', 'layer', ''),
        'fig14_layer_effects')


def report_fig22(inputs, bundle):
    for manifest in inputs.cfg.datasets_of('interjection'):
        prefix = 'interjection-{}'.format(manifest.name)
        if not (inputs.ws.sweeps / (prefix + '_logits.csv')).is_file():
            _missing('Interjection sweep of dataset {}', manifest.name)
            continue
        sweep = inputs.sweep(prefix, 'beta')
        for kind, table, figure_fn in (
                ('ld_curves', analysis.ld_curves(sweep),
                 plots.ld_curve_figure),
                ('flips', analysis.flip_tables(sweep), plots.flip_figure)):
            name = 'fig22_{}_{}'.format(kind, manifest.name)
            bundle.add_table(name, table)
            bundle.add_figure(name, figure_fn(table, manifest.name), name)


experiment_reports = collections.OrderedDict((
    ('fig2', report_fig2),
    ('fig3', report_fig3),
    ('fig4', report_fig4),
    ('fig5', report_fig5),
    ('fig7', report_fig7),
    ('fig8', report_fig8),
    ('fig9', report_fig9),
    ('fig10', report_fig10),
    ('fig11', report_fig11),
    ('fig12', report_fig12),
    ('fig14', report_fig14),
    ('fig22', report_fig22),
))


def build_bundle(cfg, ws):
    """Compute every table and figure of the configured experiments"""
    logger = logging.getLogger(__name__)
    inputs = Inputs(cfg, ws)
    bundle = Bundle()
    report_training(inputs, bundle)
    for name in cfg.experiments:
        logger.info('Reporting {}', name)
        experiment_reports[name](inputs, bundle)
    return bundle


def run_checks(cfg, ws, bundle, determinism=None):
    """Acceptance checks of a bundle.  `determinism` is (recorded,
    recomputed) table hashes for the determinism check.

    """
    checks = acceptance.oracle_checks(cfg.seed)
    if determinism is None:
        checks.append(acceptance.Check(
            7, 'determinism', acceptance.skipped_verify, '-',
            acceptance.determinism_required))
    else:
        checks.append(acceptance.check_determinism(*determinism))
    gate = acceptance.check_gate(workspace.load_yaml(ws.training))
    checks.append(gate)
    checks += acceptance.finding_checks(
        bundle.tables, gate.status == acceptance.passed,
        cfg.model.n_layers, cfg.intervention.steering.targets)
    return checks


def manifest_object(cfg, ws, artifacts):
    from . import __version__
    obj = collections.OrderedDict()
    obj['package'] = 'oispace'
    obj['version'] = __version__
    obj['versions'] = collections.OrderedDict((
        ('python', platform.python_version()),
        ('matplotlib', matplotlib.__version__),
        ('numpy', np.__version__),
        ('scipy', scipy.__version__),
        ('torch', torch.__version__),
        ('pyyaml', yaml.__version__),
    ))
    obj['config'] = cfg.hash()
    obj['seeds'] = collections.OrderedDict((
        ('global', cfg.seed),
        ('vocabulary', cfg.vocabulary.seed),
        ('model', cfg.model.seed),
        ('training', cfg.training.seed),
        ('datasets', collections.OrderedDict(
            (m.name, m.seed) for m in cfg.datasets)),
    ))
    obj['inputs'] = collections.OrderedDict(
        (ws.relative(path),
         file.Fingerprint.from_path(path).as_yaml_object())
        for path in (ws.data_manifest, ws.checkpoint, ws.training)
        if path.is_file())
    obj['artifacts'] = artifacts
    return obj


def _artifact(ws, path, kind, source=None):
    fingerprint = file.Fingerprint.from_path(path)
    entry = collections.OrderedDict((
        ('path', path.relative_to(ws.report).as_posix()),
        ('kind', kind),
        ('size', fingerprint.size),
        ('sha256', fingerprint.sha256),
    ))
    if source is not None:
        entry['source'] = 'tables/{}.csv'.format(source)
    return entry


def write_bundle(cfg, ws):
    """Write the report bundle and return the paths written"""
    logger = logging.getLogger(__name__)
    bundle = build_bundle(cfg, ws)
    for directory in ('tables', 'figures'):
        if (ws.report / directory).is_dir():
            shutil.rmtree(str(ws.report / directory))
    paths = []
    artifacts = []
    for name, table in bundle.tables.items():
        path = table.write_csv(ws.report / 'tables' / (name + '.csv'))
        paths.append(path)
        artifacts.append(_artifact(ws, path, 'table'))
    for name, (svg, source) in bundle.figures.items():
        path = plots.save_svg(ws.report / 'figures' / (name + '.svg'), svg)
        paths.append(path)
        artifacts.append(_artifact(ws, path, 'figure', source))
    checks = run_checks(cfg, ws, bundle)
    acceptance.log_checks(checks, logger)
    path = file.write_atomic(
        ws.summary, acceptance.summary_text(checks, cfg.hash()))
    paths.append(path)
    artifacts.append(_artifact(ws, path, 'summary'))
    paths.append(file.write_atomic(ws.report_manifest, workspace.dump_yaml(
        manifest_object(cfg, ws, artifacts))))
    logger.info('Report: {} tables, {} figures in: {}',
                len(bundle.tables), len(bundle.figures), ws.report)
    return paths


def verify_bundle(cfg, ws):
    """Recompute the report tables, compare them with the bundle, and
    evaluate the acceptance checks.  Returns the checks.

    """
    manifest = workspace.load_yaml(ws.report_manifest)
    recorded = {a['path']: a['sha256'] for a in manifest['artifacts']
                if a['kind'] == 'table'}
    bundle = build_bundle(cfg, ws)
    checks = run_checks(cfg, ws, bundle, (recorded, bundle.table_hashes()))
    acceptance.log_checks(checks)
    return checks
