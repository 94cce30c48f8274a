"""Experiment stages and stage stamps

Stages run in the order gen, train, capture, fit, intervene, report.
Each stage writes its artifacts under the output directory and then a
stamp `stages/<stage>.yaml` holding the configuration hash, a key over
the configuration sections the stage reads, the hashes of the upstream
artifacts it consumed and the hashes of the artifacts it wrote.  A
stage whose key, inputs and outputs all match its stamp is skipped.
Upstream artifacts are checked against their stamps before every run.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import collections
import time

from barnapy import logging
import psutil
import torch

from . import capture
from . import datagen
from . import file
from . import general
from . import intervene
from . import records
from . import report
from . import subspace
from . import toylm
from . import workspace
from .general import FormatError, NumericError
from .workspace import Workspace


stages = ('gen', 'train', 'capture', 'fit', 'intervene', 'report')

upstream = {
    'gen': (),
    'train': ('gen',),
    'capture': ('gen', 'train'),
    'fit': ('capture',),
    'intervene': ('gen', 'train', 'capture', 'fit'),
    'report': ('gen', 'train', 'capture', 'fit', 'intervene'),
}

# Configuration sections read by each stage.  Upstream changes reach a
# stage through the hashes of its inputs.
stage_sections = {
    'gen': ('seed', 'vocabulary', 'datasets'),
    'train': ('seed', 'model', 'training'),
    'capture': ('capture',),
    'fit': ('seed', 'subspace'),
    'intervene': ('seed', 'intervention', 'experiments'),
    'report': ('seed', 'subspace', 'training', 'intervention',
               'experiments'),
}

intervention_experiments = ('fig3', 'fig4', 'fig5', 'fig14', 'fig22')


class StageError(Exception):
    """A stage cannot run because an upstream artifact is missing,
    stale, or corrupted

    """

    def __init__(self, stage, message):
        super().__init__('Stage {}: {}'.format(stage, message))
        self._stage = stage

    @property
    def stage(self):
        return self._stage


def setup_runtime(cfg):
    torch.set_num_threads(cfg.jobs)
    logging.getLogger(__name__).info('Torch threads: {}', cfg.jobs)


def log_memory(logger):
    mem_info = psutil.virtual_memory()
    # Display in KiB to agree with `top`
    logger.info('Memory (KiB):  total: {}, avail: {}',
                mem_info.total // 1024, mem_info.available // 1024)


# Stamps


def stage_key(cfg, stage):
    return cfg.section_hash(*stage_sections[stage])


def fingerprints(ws, paths):
    return collections.OrderedDict(
        (ws.relative(path), file.Fingerprint.from_path(path).sha256)
        for path in sorted(set(paths)))


def read_stamp(ws, stage):
    """The stamp of a stage as a dictionary, or None if there is no
    readable stamp

    """
    path = ws.stamp(stage)
    if not path.is_file():
        return None
    try:
        stamp = workspace.load_yaml(path)
    except FormatError:
        return None
    if (not isinstance(stamp, dict)
            or not {'key', 'inputs', 'outputs'} <= set(stamp)):
        return None
    return stamp


def damaged_artifacts(ws, artifacts):
    """Relative paths of artifacts that are missing or whose content no
    longer matches the recorded hash

    """
    damaged = []
    for relative, digest in artifacts.items():
        path = ws.root / relative
        if (not path.is_file()
                or file.Fingerprint.from_path(path).sha256 != digest):
            damaged.append(relative)
    return damaged


def check_upstream(cfg, ws, stage):
    """Verify the artifacts of the upstream stages and return their
    hashes

    """
    inputs = collections.OrderedDict()
    for name in upstream[stage]:
        stamp = read_stamp(ws, name)
        if stamp is None:
            raise StageError(stage, 'Upstream stage {} has not been run '
                             'in: {}'.format(name, ws.root))
        if stamp['key'] != stage_key(cfg, name):
            raise StageError(stage, 'Upstream stage {} ran with a '
                             'different configuration: Rerun it'
                             .format(name))
        damaged = damaged_artifacts(ws, stamp['outputs'])
        if damaged:
            raise StageError(stage, 'Artifacts of upstream stage {} are '
                             'missing or changed: {}'.format(
                                 name, ', '.join(damaged)))
        inputs.update(stamp['outputs'])
    return inputs


def is_current(ws, stamp, key, inputs):
    return (stamp is not None
            and stamp['key'] == key
            and dict(stamp['inputs']) == dict(inputs)
            and not damaged_artifacts(ws, stamp['outputs']))


def run_stage(cfg, stage, force=False):
    """Run a stage unless its stamp shows it is up to date.  Returns the
    hashes of the stage's artifacts by relative path.

    """
    logger = logging.getLogger(__name__)
    ws = Workspace(cfg.output)
    inputs = check_upstream(cfg, ws, stage)
    key = stage_key(cfg, stage)
    stamp = read_stamp(ws, stage)
    if not force and is_current(ws, stamp, key, inputs):
        logger.info('Stage {}: Up to date (key {}): Skipping',
                    stage, key[:12])
        return stamp['outputs']
    logger.info('Stage {}: Running (key {})', stage, key[:12])
    start = time.time()
    paths = builders[stage](cfg, ws)
    outputs = fingerprints(ws, paths)
    stamp = collections.OrderedDict((
        ('stage', stage),
        ('config', cfg.hash()),
        ('key', key),
        ('inputs', inputs),
        ('outputs', outputs),
    ))
    file.write_atomic(ws.stamp(stage), workspace.dump_yaml(stamp))
    logger.info('Stage {}: Wrote {} artifacts in {:.1f} s',
                stage, len(outputs), time.time() - start)
    return outputs


# Stages


def build_gen(cfg, ws):
    logger = logging.getLogger(__name__)
    v = cfg.vocabulary
    vocab = datagen.build_vocabulary(v.objects, v.names, v.seed)
    paths = [datagen.save_vocabulary(vocab, ws.vocabulary)]
    sources = {}
    sizes = {}
    for manifest in cfg.datasets:
        samples = datagen.generate(manifest, vocab, sources)
        sources[manifest.name] = samples
        sizes[manifest.name] = len(samples)
        paths.append(datagen.save_samples(
            samples, ws.dataset(manifest.name), vocab))
        logger.info('Dataset {}: {} samples', manifest.name, len(samples))
    paths.append(datagen.save_manifest(
        cfg.datasets, sizes, vocab, ws.data_manifest))
    return paths


def held_out_samples(vocab, training):
    """Samples for the accuracy gate spread over the training relations,
    drawn from a seed stream of their own

    """
    seed = general.derived_seed(training.seed, 'eval')
    relations = list(training.relations)
    samples = []
    for idx, relation in enumerate(relations):
        count = training.eval_samples // len(relations) + (
            1 if idx < training.eval_samples % len(relations) else 0)
        if count:
            samples += datagen.gen_base(
                relation, count, training.k_pairs, vocab, seed,
                first_id=len(samples))
    return samples


def build_train(cfg, ws):
    logger = logging.getLogger(__name__)
    log_memory(logger)
    vocab = datagen.load_vocabulary(ws.vocabulary)
    t = cfg.training
    corpus = toylm.build_corpus(
        vocab, t.corpus, general.derived_seed(t.seed, 'corpus'),
        t.relations, t.k_pairs, t.pattern_fraction, t.filler_fraction,
        t.interjection_fraction)
    eval_samples = held_out_samples(vocab, t)
    model = toylm.init_model(cfg.model.model_config(len(vocab), 'model'))
    model, training_report = toylm.train(
        model, corpus, t.hyper('training'),
        eval_fn=lambda m: toylm.evaluate_answers(m, eval_samples, vocab))
    passed = (training_report.accuracy >= t.accuracy_gate
              and training_report.seconds <= t.time_budget)
    if not passed:
        logger.warning('Held-out accuracy {:.4f} (gate {}) after {:.0f} CPU '
                       'seconds (budget {:.0f}): Model-dependent checks '
                       'will be skipped', training_report.accuracy,
                       t.accuracy_gate, training_report.seconds,
                       t.time_budget)
    metadata = collections.OrderedDict((
        ('report', training_report.as_yaml_object()),
        ('gate', t.accuracy_gate),
        ('time_budget', t.time_budget),
        ('passed', passed),
        ('eval_samples', len(eval_samples)),
        ('corpus', len(corpus)),
    ))
    return [toylm.save_checkpoint(model, ws.checkpoint, dict(metadata)),
            file.write_atomic(ws.training, workspace.dump_yaml(metadata))]


def build_capture(cfg, ws):
    logger = logging.getLogger(__name__)
    log_memory(logger)
    vocab = datagen.load_vocabulary(ws.vocabulary)
    model, _ = toylm.load_checkpoint(ws.checkpoint)
    c = cfg.capture
    layers = cfg.layers(c.layers)
    paths = []
    for manifest in cfg.capture_datasets:
        splits = workspace.load_splits(ws, manifest)
        for split, samples in splits.items():
            for role in c.roles:
                queries = (workspace.queries_of(samples, role, vocab)
                           if samples else [])
                if not queries:
                    logger.warning('Dataset {}: No {} rows in split {}',
                                   manifest.name, role, split)
                    continue
                logger.info('Dataset {}: Capturing {} {} rows of split {}',
                            manifest.name, len(queries), role, split)
                matrices = capture.layer_sweep_matrices(
                    model, queries, layers, vocab, c.batch_size, c.site)
                for layer, matrix in sorted(matrices.items()):
                    paths.append(capture.save_matrix(
                        matrix, ws.activations(
                            manifest.name, split, role, layer)))
    return paths


def build_fit(cfg, ws):
    logger = logging.getLogger(__name__)
    s = cfg.subspace
    layers = cfg.layers(cfg.capture.layers)
    primary = cfg.primary_dataset
    paths = []
    for manifest in cfg.capture_datasets:
        for role in cfg.capture.roles:
            methods = [s.method]
            if (primary is not None and manifest.name == primary.name
                    and role == 'entity-query'):
                methods += [m for m in s.compare if m != s.method]
            train = workspace.load_matrices(
                ws, manifest.name, 'train', role, layers)
            for layer, matrix in sorted(train.items()):
                for method in methods:
                    try:
                        fitted = subspace.fit_oi_subspace(
                            matrix, s.components, method, cfg.seed)
                    except NumericError as e:
                        if method == s.method:
                            raise
                        logger.warning('Dataset {}: Layer {}: No {} fit: {}',
                                       manifest.name, layer, method, e)
                        continue
                    paths.append(subspace.save_subspace(
                        fitted, ws.subspace(
                            manifest.name, role, layer, method)))
    if primary is not None and 'entity-query' in cfg.capture.roles:
        paths += select_layer(cfg, ws, primary)
    return paths


def select_layer(cfg, ws, primary):
    """Score every layer of the primary dataset on its dev split and
    record the best one

    """
    layers = cfg.layers(cfg.capture.layers)
    s = cfg.subspace
    train = workspace.load_matrices(
        ws, primary.name, 'train', 'entity-query', layers)
    if not train:
        raise StageError('fit', 'No training activations of dataset {}'
                         .format(primary.name))
    dev = workspace.load_matrices(
        ws, primary.name, 'dev', 'entity-query', layers)
    if set(dev) != set(train):
        logging.getLogger(__name__).warning(
            'Dataset {}: No dev activations: Scoring layers on train',
            primary.name)
        dev = train
    best, scores = subspace.select_best_layer(
        train, dev, s.components, s.method, cfg.seed)
    table = records.Table(
        subspace.layer_score_header,
        [(layer, float(scores[layer])) for layer in sorted(scores)],
        name='layer-scores')
    selection = collections.OrderedDict((
        ('dataset', primary.name),
        ('method', s.method),
        ('components', s.components),
        ('best_layer', best),
        ('rho_dev', float(scores[best])),
    ))
    return [table.write_csv(ws.layer_scores),
            file.write_atomic(ws.selection, workspace.dump_yaml(selection))]


def first_entity_queries(samples, vocab, limit=None):
    """One query of the OI-0 entity per context"""
    queries = intervene.query_first_entity(
        datagen.expand_queries(samples, vocab))
    return queries if limit is None else queries[:limit]


def dataset_subspace(cfg, ws, dataset, layer):
    """Entity-query subspace fitted on a dataset's own activations at a
    layer, or None if the fit stage wrote none

    """
    return workspace.load_subspaces(
        ws, dataset, 'entity-query', [layer], cfg.subspace.method).get(layer)


def resolve_spec(cfg, ws, model, vocab, splits, subspaces):
    """The intervention spec, searching the grid on dev queries for the
    fields left automatic.  Returns (spec, search table or None).

    """
    iv = cfg.intervention
    if not iv.is_auto:
        return iv.spec(), None
    grid = iv.grid
    primary = cfg.primary_dataset
    if iv.layer != 'auto':
        layers = [iv.layer]
    else:
        layers = [l for l in cfg.layers(grid.layers) if l in subspaces]
    missing = [l for l in layers if l not in subspaces]
    if not layers or missing:
        raise StageError('intervene', 'No fitted subspaces for layers: {}'
                         .format(missing or layers))
    alphas = [iv.alpha] if iv.alpha != 'auto' else grid.alphas
    dev = first_entity_queries(
        splits['dev'] or splits['train'], vocab, grid.dev_samples)
    matrices = workspace.load_matrices(
        ws, primary.name, 'train', 'entity-query', layers)
    base = intervene.InterventionSpec(
        layers[0], 1.0, pc2_fixed=iv.pc2_fixed, mode=iv.mode)
    spec, table = intervene.grid_search(
        model, dev, {l: subspaces[l] for l in layers}, matrices, vocab,
        base, alphas, grid.quantiles, grid.modes, grid.betas,
        iv.batch_size)
    if iv.step_value != 'auto':
        spec = spec.replace(step_value=iv.step_value)
    return spec, table


steering_fields = (('target_bi', int), ('n_averaged', int))


def steering_vectors(cfg, model, vocab, contexts, sub, layer):
    """Steering vectors by target BI from paired queries of the training
    contexts

    """
    vectors = collections.OrderedDict()
    options = dict(batch_size=cfg.capture.batch_size, site='post')
    for bi in cfg.intervention.steering.targets:
        target, zero = intervene.paired_entity_queries(contexts, vocab, bi)
        vectors[bi] = intervene.steering_vector(
            capture.build_entity_matrix(model, target, layer, vocab,
                                        **options),
            capture.build_entity_matrix(model, zero, layer, vocab,
                                        **options),
            sub, bi)
    return vectors


def steering_table(vectors, c):
    table = records.Table(
        list(steering_fields) + [('s{}'.format(i + 1), float)
                                 for i in range(c)],
        name='steering-vectors')
    for bi, sv in vectors.items():
        table.add([bi, sv.n_averaged] + [float(x) for x in sv.coords])
    return table


def build_intervene(cfg, ws):
    logger = logging.getLogger(__name__)
    wanted = [e for e in cfg.experiments if e in intervention_experiments]
    if not wanted:
        logger.info('No intervention experiments')
        return []
    iv = cfg.intervention
    primary = cfg.primary_dataset
    vocab = datagen.load_vocabulary(ws.vocabulary)
    model, _ = toylm.load_checkpoint(ws.checkpoint)
    splits = workspace.load_splits(ws, primary)
    subspaces = workspace.load_subspaces(
        ws, primary.name, 'entity-query', cfg.layers(cfg.capture.layers),
        cfg.subspace.method)
    spec, search = resolve_spec(cfg, ws, model, vocab, splits, subspaces)
    if spec.layer not in subspaces:
        raise StageError('intervene', 'No fitted subspace at layer {}'
                         .format(spec.layer))
    sub = subspaces[spec.layer]
    test = first_entity_queries(splits['test'], vocab, iv.test_samples)
    logger.info('Intervening with {} on {} test queries', spec, len(test))
    paths = [file.write_atomic(
        ws.intervention_spec, workspace.dump_yaml(spec.as_yaml_object()))]
    if search is not None:
        paths.append(search.write_csv(ws.sweeps / 'grid_search.csv'))
    if 'fig3' in wanted or 'fig4' in wanted:
        sweep = intervene.run_step_sweep(
            model, test, sub, spec, iv.betas, vocab, iv.batch_size)
        paths.extend(sweep.write_csv(ws.sweeps, 'steps'))
    if 'fig5' in wanted:
        vectors = steering_vectors(
            cfg, model, vocab, splits['train'], sub, spec.layer)
        paths.append(steering_table(vectors, sub.n_components).write_csv(
            ws.sweeps / 'steering_vectors.csv'))
        sweep = intervene.run_steering_sweep(
            model, test, sub, vectors, spec.layer, iv.steering.alpha,
            vocab, iv.batch_size)
        paths.extend(sweep.write_csv(ws.sweeps, 'steering'))
    if 'fig14' in wanted:
        table, _ = intervene.run_layer_sweep(
            model, test, subspaces, spec, vocab, iv.grid.betas,
            iv.batch_size)
        paths.append(table.write_csv(ws.sweeps / 'layer_effects.csv'))
    if 'fig22' in wanted:
        for manifest in cfg.datasets_of('interjection'):
            own = dataset_subspace(cfg, ws, manifest.name, spec.layer)
            if own is None:
                logger.warning('Dataset {}: No fitted subspace at layer {}',
                               manifest.name, spec.layer)
                continue
            queries = first_entity_queries(
                workspace.load_splits(ws, manifest)['test'], vocab,
                iv.test_samples)
            if not queries:
                logger.warning('Dataset {}: No test queries of the OI-0 '
                               'entity', manifest.name)
                continue
            k = min(q.k_pairs for q in queries)
            sweep = intervene.run_step_sweep(
                model, queries, own, spec,
                [b for b in iv.betas if b < k], vocab, iv.batch_size)
            paths.extend(sweep.write_csv(
                ws.sweeps, 'interjection-{}'.format(manifest.name)))
    return paths


def build_report(cfg, ws):
    return report.write_bundle(cfg, ws)


builders = {
    'gen': build_gen,
    'train': build_train,
    'capture': build_capture,
    'fit': build_fit,
    'intervene': build_intervene,
    'report': build_report,
}


# Commands


def cmd_gen(cfg):
    return run_stage(cfg, 'gen')


def cmd_train(cfg):
    return run_stage(cfg, 'train')


def cmd_capture(cfg):
    return run_stage(cfg, 'capture')


def cmd_fit(cfg):
    return run_stage(cfg, 'fit')


def cmd_intervene(cfg):
    return run_stage(cfg, 'intervene')


def cmd_report(cfg):
    return run_stage(cfg, 'report')


def cmd_all(cfg):
    for stage in stages:
        run_stage(cfg, stage)


def cmd_verify(cfg):
    """Evaluate the acceptance checks against the report bundle.
    Returns the list of checks.

    """
    ws = Workspace(cfg.output)
    check_upstream(cfg, ws, 'report')
    stamp = read_stamp(ws, 'report')
    if stamp is None:
        raise StageError('verify', 'No report bundle in: {}'.format(
            ws.root))
    return report.verify_bundle(cfg, ws)
