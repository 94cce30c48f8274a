"""Experiment configuration

An experiment is described by one YAML document.  Loading it builds an
`ExperimentConfig` whose sections are validated field by field; every
error names the path of the offending field.  The resolved
configuration (defaults filled in, command line overrides applied) has
a hash that identifies every artifact built from it.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import collections
import copy
import os
import pathlib

from barnapy import files
from barnapy import logging
import psutil
import yaml

from . import datagen
from . import file
from . import general
from . import intervene
from . import subspace
from . import toylm


experiments = (
    'fig2', 'fig3', 'fig4', 'fig5', 'fig7', 'fig8', 'fig9', 'fig10',
    'fig11', 'fig12', 'fig14', 'fig22',
)

roles = ('entity-query', 'attribute-query')


class ConfigError(Exception):

    def __init__(self, message, value=None, *contexts):
        components = [str(c) for c in reversed(contexts)]
        components.append(str(message))
        if isinstance(value, Exception):
            components.append(type(value).__qualname__)
            components.append(str(value))
        elif value is not None:
            components.append(repr(value))
        msg = ': '.join(components)
        super().__init__(msg)


def load(path, seed=None):
    """Load a configuration file.  A given `seed` replaces the file's
    global seed before validation.

    """
    path = files.new(str(path))
    if not path.is_readable_file():
        raise ConfigError('Not a readable file', str(path))
    with path.open('rt') as yaml_file:
        try:
            yaml_tree = yaml.safe_load(yaml_file)
        except yaml.YAMLError as e:
            raise ConfigError('Bad YAML', e, str(path))
    if seed is not None and isinstance(yaml_tree, dict):
        yaml_tree['seed'] = seed
    return ExperimentConfig(yaml_tree, str(path))


def dump(config_obj):
    if isinstance(config_obj, ExperimentConfig):
        config_obj = config_obj.as_yaml_object()
    return yaml.safe_dump(
        config_obj,
        version=(1, 2),
        explicit_start=True,
        explicit_end=True,
        default_flow_style=False,
        sort_keys=False,
    )


def save(config_obj, path):
    return file.write_atomic(path, dump(config_obj))


# Field validation


def _int(obj, minimum, *contexts):
    if isinstance(obj, bool) or not isinstance(obj, int) or obj < minimum:
        raise ConfigError(
            'Not an integer >= {}'.format(minimum), obj, *contexts)
    return obj


def _number(obj, *contexts, minimum=None, maximum=None):
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ConfigError('Not a number', obj, *contexts)
    if ((minimum is not None and obj < minimum)
            or (maximum is not None and obj > maximum)):
        raise ConfigError('Number out of range [{}, {}]'.format(
            minimum, maximum), obj, *contexts)
    return float(obj)


def _choice(obj, choices, *contexts):
    if obj not in choices:
        raise ConfigError(
            'Not one of {}'.format(', '.join(map(str, choices))),
            obj, *contexts)
    return obj


def _list(obj, *contexts):
    if isinstance(obj, (list, tuple)):
        return list(obj)
    elif isinstance(obj, (int, float, str)):
        return [obj]
    raise ConfigError('Not an item or list', obj, *contexts)


def _mapping(obj, *contexts):
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigError('Not a mapping', obj, *contexts)
    return dict(obj)


def _auto_or(obj, build, *contexts):
    return 'auto' if obj == 'auto' else build(obj, *contexts)


def _layers(obj, *contexts):
    if obj == 'all':
        return 'all'
    return sorted(set(_int(o, 0, idx, *contexts)
                      for (idx, o) in enumerate(_list(obj, *contexts))))


class Section:
    """A mapping of named fields with defaults.  Subclasses validate
    their values in `_build`.

    """

    defaults = {}

    def __init__(self, obj, *contexts):
        if obj is None:
            obj = {}
        if not isinstance(obj, dict):
            raise ConfigError('Not a mapping', obj, *contexts)
        unknown = set(obj) - set(self.field_defaults())
        if unknown:
            raise ConfigError('Unknown fields', sorted(unknown), *contexts)
        values = copy.deepcopy(self.field_defaults())
        values.update(obj)
        self._values = values
        self._build(*contexts)

    @classmethod
    def field_defaults(cls):
        return cls.defaults

    def _build(self, *contexts):
        pass

    def __getattr__(self, name):
        values = self.__dict__.get('_values', {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def as_yaml_object(self):
        obj = collections.OrderedDict()
        for name in self.field_defaults():
            value = self._values[name]
            obj[name] = (value.as_yaml_object()
                         if isinstance(value, Section) else value)
        return dict(obj)


class VocabularySection(Section):

    defaults = dict(objects=224, names=523, seed=0)

    def _build(self, *contexts):
        v = self._values
        _int(v['objects'], 8, 'objects', *contexts)
        _int(v['names'], 8, 'names', *contexts)
        _int(v['seed'], 0, 'seed', *contexts)


class TrainingSection(Section):

    defaults = dict(
        corpus=50000,
        relations=[0, 1, 2, 3, 4, 5],
        k_pairs=7,
        pattern_fraction=0.1,
        filler_fraction=0.1,
        interjection_fraction=0.05,
        eval_samples=1000,
        accuracy_gate=0.95,
        time_budget=1800.0,
    )

    @classmethod
    def field_defaults(cls):
        fields = dict(cls.defaults)
        fields.update(toylm.TrainingConfig.defaults)
        return fields

    def _build(self, *contexts):
        v = self._values
        _int(v['corpus'], 1, 'corpus', *contexts)
        v['relations'] = [
            _choice(r, range(len(datagen.relations)), 'relations', *contexts)
            for r in _list(v['relations'], 'relations', *contexts)]
        if not v['relations']:
            raise ConfigError('No relations', v['relations'], 'relations',
                              *contexts)
        _int(v['k_pairs'], 2, 'k_pairs', *contexts)
        total = 0.0
        for name in ('pattern_fraction', 'filler_fraction',
                     'interjection_fraction'):
            total += _number(v[name], name, *contexts, minimum=0.0,
                             maximum=1.0)
        if total >= 1.0:
            raise ConfigError('Variant fractions leave no base samples',
                              total, *contexts)
        _int(v['eval_samples'], 1, 'eval_samples', *contexts)
        _number(v['accuracy_gate'], 'accuracy_gate', *contexts,
                minimum=0.0, maximum=1.0)
        _number(v['time_budget'], 'time_budget', *contexts, minimum=0.0)
        self.hyper(*contexts)

    def hyper(self, *contexts):
        fields = {name: self._values[name]
                  for name in toylm.TrainingConfig.defaults}
        return toylm.TrainingConfig(*contexts, **fields)


class ModelSection(Section):

    @classmethod
    def field_defaults(cls):
        return dict(toylm.ModelConfig.defaults)

    def _build(self, *contexts):
        self.model_config(1, *contexts)

    def model_config(self, vocab_size, *contexts):
        return toylm.ModelConfig(vocab_size, *contexts, **self._values)


class CaptureSection(Section):

    defaults = dict(
        datasets='all',
        layers='all',
        roles=['entity-query', 'attribute-query'],
        batch_size=64,
        site='post',
    )

    def _build(self, *contexts):
        v = self._values
        if v['datasets'] != 'all':
            v['datasets'] = [str(d) for d in
                             _list(v['datasets'], 'datasets', *contexts)]
        v['layers'] = _layers(v['layers'], 'layers', *contexts)
        v['roles'] = [_choice(r, roles, 'roles', *contexts)
                      for r in _list(v['roles'], 'roles', *contexts)]
        _int(v['batch_size'], 1, 'batch_size', *contexts)
        _choice(v['site'], toylm.sites, 'site', *contexts)


class SubspaceSection(Section):

    defaults = dict(method='pca', components=2, compare=[])

    def _build(self, *contexts):
        v = self._values
        _choice(v['method'], subspace.methods, 'method', *contexts)
        _int(v['components'], 1, 'components', *contexts)
        v['compare'] = [
            _choice(m, subspace.methods, 'compare', *contexts)
            for m in _list(v['compare'], 'compare', *contexts)]


class GridSection(Section):

    defaults = dict(
        layers='all',
        alphas=[1.0, 2.0, 3.0, 5.0],
        quantiles=[0.25, 0.5, 0.75],
        modes=['direct-literal'],
        betas=[1, 2, 3],
        dev_samples=100,
    )

    def _build(self, *contexts):
        v = self._values
        v['layers'] = _layers(v['layers'], 'layers', *contexts)
        v['alphas'] = [_number(a, 'alphas', *contexts)
                       for a in _list(v['alphas'], 'alphas', *contexts)]
        v['quantiles'] = [
            _number(q, 'quantiles', *contexts, minimum=0.0, maximum=1.0)
            for q in _list(v['quantiles'], 'quantiles', *contexts)]
        v['modes'] = [_choice(m, intervene.direct_modes, 'modes', *contexts)
                      for m in _list(v['modes'], 'modes', *contexts)]
        v['betas'] = [_int(b, 0, 'betas', *contexts)
                      for b in _list(v['betas'], 'betas', *contexts)]
        _int(v['dev_samples'], 1, 'dev_samples', *contexts)
        for name in ('alphas', 'quantiles', 'modes', 'betas'):
            if not v[name]:
                raise ConfigError('Empty list', v[name], name, *contexts)


class SteeringSection(Section):

    defaults = dict(alpha=1.25, targets=[1, 2, 3])

    def _build(self, *contexts):
        v = self._values
        _number(v['alpha'], 'alpha', *contexts)
        v['targets'] = [_int(t, 1, 'targets', *contexts)
                        for t in _list(v['targets'], 'targets', *contexts)]


class InterventionSection(Section):

    defaults = dict(
        dataset=None,
        mode='direct-literal',
        layer='auto',
        step_value='auto',
        alpha='auto',
        pc2_fixed=0.0,
        betas=[0, 1, 2, 3, 4, 5, 6],
        test_samples=500,
        batch_size=64,
        grid=None,
        steering=None,
    )

    def _build(self, *contexts):
        v = self._values
        _choice(v['mode'], intervene.direct_modes, 'mode', *contexts)
        if v['layer'] != 'auto':
            _int(v['layer'], 0, 'layer', *contexts)
        v['step_value'] = _auto_or(
            v['step_value'], _number, 'step_value', *contexts)
        v['alpha'] = _auto_or(v['alpha'], _number, 'alpha', *contexts)
        v['pc2_fixed'] = _number(v['pc2_fixed'], 'pc2_fixed', *contexts)
        v['betas'] = sorted(set(
            _int(b, 0, 'betas', *contexts)
            for b in _list(v['betas'], 'betas', *contexts)))
        if not v['betas']:
            raise ConfigError('No step counts', v['betas'], 'betas',
                              *contexts)
        _int(v['test_samples'], 1, 'test_samples', *contexts)
        _int(v['batch_size'], 1, 'batch_size', *contexts)
        v['grid'] = GridSection(v['grid'], 'grid', *contexts)
        v['steering'] = SteeringSection(v['steering'], 'steering', *contexts)

    def spec(self, layer=None, step_value=None, alpha=None):
        """Intervention spec with 'auto' fields filled by the arguments"""
        values = dict(
            layer=self.layer if self.layer != 'auto' else layer,
            step_value=(self.step_value if self.step_value != 'auto'
                        else step_value),
            alpha=self.alpha if self.alpha != 'auto' else alpha,
        )
        missing = sorted(k for (k, val) in values.items() if val is None)
        if missing:
            raise ConfigError('Unresolved automatic fields', missing,
                              'intervention')
        return intervene.InterventionSpec(
            values['layer'], values['alpha'], values['step_value'],
            pc2_fixed=self.pc2_fixed, mode=self.mode)

    @property
    def is_auto(self):
        return 'auto' in (self.layer, self.step_value, self.alpha)


def default_jobs():
    cores = psutil.cpu_count(logical=False) or os.cpu_count() or 1
    return min(4, cores)


class ExperimentConfig:

    def __init__(self, dict_, *contexts):
        if not dict_:
            raise ConfigError('Empty configuration', dict_, *contexts)
        elif not isinstance(dict_, dict):
            raise ConfigError(
                'Configuration not a dictionary', dict_, *contexts)
        unknown = set(dict_) - set(self.sections)
        if unknown:
            raise ConfigError('Unknown sections', sorted(unknown),
                              *contexts)
        if 'seed' not in dict_:
            raise ConfigError('Missing mandatory field', 'seed', *contexts)
        self._contexts = contexts
        self._seed = _int(dict_['seed'], 0, 'seed', *contexts)
        self._output = str(dict_.get('output', 'out'))
        self._jobs = self._build_jobs(dict_.get('jobs', 1), 'jobs',
                                      *contexts)
        vocabulary = _mapping(
            dict_.get('vocabulary'), 'vocabulary', *contexts)
        vocabulary.setdefault('seed', self._seed)
        self._vocabulary = VocabularySection(
            vocabulary, 'vocabulary', *contexts)
        self._datasets = self._build_datasets(
            dict_.get('datasets'), 'datasets', *contexts)
        model = _mapping(dict_.get('model'), 'model', *contexts)
        model.setdefault('seed', self._seed)
        self._model = ModelSection(model, 'model', *contexts)
        training = _mapping(
            dict_.get('training'), 'training', *contexts)
        training.setdefault('seed', self._seed)
        self._training = TrainingSection(training, 'training', *contexts)
        self._capture = CaptureSection(
            dict_.get('capture'), 'capture', *contexts)
        self._subspace = SubspaceSection(
            dict_.get('subspace'), 'subspace', *contexts)
        self._intervention = InterventionSection(
            dict_.get('intervention'), 'intervention', *contexts)
        self._experiments = self._build_experiments(
            dict_.get('experiments', []), 'experiments', *contexts)
        self._check_references(*contexts)

    sections = ('seed', 'output', 'jobs', 'vocabulary', 'datasets',
                'model', 'training', 'capture', 'subspace', 'intervention',
                'experiments')

    def _build_jobs(self, obj, *contexts):
        if obj == 'auto':
            return 'auto'
        return _int(obj, 1, *contexts)

    def _build_datasets(self, obj, *contexts):
        if obj is None:
            return []
        if not isinstance(obj, list):
            raise ConfigError('Not a list of datasets', obj, *contexts)
        manifests = []
        names = set()
        for idx, entry in enumerate(obj):
            if not isinstance(entry, dict) or 'name' not in entry:
                raise ConfigError('Not a named dataset', entry, idx,
                                  *contexts)
            fields = dict(entry)
            fields.setdefault('seed', self._seed)
            try:
                manifest = datagen.DatasetManifest(**fields)
            except (general.InputError, TypeError) as e:
                raise ConfigError('Bad dataset', e, entry['name'], idx,
                                  *contexts)
            if manifest.name in names:
                raise ConfigError('Duplicate dataset name', manifest.name,
                                  idx, *contexts)
            if manifest.source is not None and manifest.source not in names:
                raise ConfigError('Source must be defined earlier',
                                  manifest.source, 'source', idx,
                                  *contexts)
            names.add(manifest.name)
            manifests.append(manifest)
        return manifests

    def _build_experiments(self, obj, *contexts):
        return [_choice(e, experiments, idx, *contexts)
                for (idx, e) in enumerate(_list(obj, *contexts))]

    def _check_references(self, *contexts):
        names = [m.name for m in self._datasets]
        if self._capture.datasets != 'all':
            for name in self._capture.datasets:
                if name not in names:
                    raise ConfigError('Unknown dataset', name, 'datasets',
                                      'capture', *contexts)
        dataset = self._intervention.dataset
        if dataset is not None and dataset not in names:
            raise ConfigError('Unknown dataset', dataset, 'dataset',
                              'intervention', *contexts)
        n_layers = self._model.n_layers
        for layers, where in ((self._capture.layers, ('layers', 'capture')),
                              (self._intervention.grid.layers,
                               ('layers', 'grid', 'intervention'))):
            if layers != 'all' and layers[-1] >= n_layers:
                raise ConfigError('Layer beyond the model', layers[-1],
                                  *(where + contexts))
        layer = self._intervention.layer
        if layer != 'auto' and layer >= n_layers:
            raise ConfigError('Layer beyond the model', layer, 'layer',
                              'intervention', *contexts)
        if self._experiments and self.primary_dataset is None:
            raise ConfigError('Experiments need a base dataset',
                              self._experiments, 'experiments', *contexts)

    @property
    def seed(self):
        return self._seed

    @property
    def output(self):
        return pathlib.Path(self._output)

    @property
    def jobs(self):
        return default_jobs() if self._jobs == 'auto' else self._jobs

    @property
    def vocabulary(self):
        return self._vocabulary

    @property
    def datasets(self):
        return self._datasets

    @property
    def model(self):
        return self._model

    @property
    def training(self):
        return self._training

    @property
    def capture(self):
        return self._capture

    @property
    def subspace(self):
        return self._subspace

    @property
    def intervention(self):
        return self._intervention

    @property
    def experiments(self):
        return self._experiments

    def dataset(self, name):
        for manifest in self._datasets:
            if manifest.name == name:
                return manifest
        raise ConfigError('Unknown dataset', name, *self._contexts)

    def datasets_of(self, variant):
        return [m for m in self._datasets if m.variant == variant]

    @property
    def primary_dataset(self):
        """The intervention dataset, else the first base dataset"""
        if self._intervention.dataset is not None:
            return self.dataset(self._intervention.dataset)
        bases = self.datasets_of('base')
        return bases[0] if bases else None

    @property
    def capture_datasets(self):
        if self._capture.datasets == 'all':
            return list(self._datasets)
        return [self.dataset(name) for name in self._capture.datasets]

    def layers(self, layers='all'):
        if layers == 'all':
            return list(range(self._model.n_layers))
        return list(layers)

    def with_overrides(self, seed=None, output=None, jobs=None):
        """A new configuration with command line values replacing the
        file's

        """
        obj = self.as_yaml_object(explicit=False)
        if seed is not None:
            obj['seed'] = seed
        if output is not None:
            obj['output'] = str(output)
        if jobs is not None:
            obj['jobs'] = jobs
        return ExperimentConfig(obj, *self._contexts)

    def as_yaml_object(self, explicit=True):
        """Resolved configuration.  With `explicit=False` seeds that
        followed the global seed are left out so that a seed override
        propagates.

        """
        obj = collections.OrderedDict()
        obj['seed'] = self._seed
        obj['output'] = self._output
        obj['jobs'] = self._jobs
        sections = (('vocabulary', self._vocabulary),
                    ('model', self._model),
                    ('training', self._training))
        for name, section in sections:
            obj[name] = section.as_yaml_object()
        if not explicit:
            for name, _ in sections:
                if obj[name].get('seed') == self._seed:
                    del obj[name]['seed']
        datasets = []
        for manifest in self._datasets:
            entry = dict(manifest.as_yaml_object())
            if not explicit and entry['seed'] == self._seed:
                del entry['seed']
            datasets.append(entry)
        obj['datasets'] = datasets
        obj['capture'] = self._capture.as_yaml_object()
        obj['subspace'] = self._subspace.as_yaml_object()
        obj['intervention'] = self._intervention.as_yaml_object()
        obj['experiments'] = list(self._experiments)
        order = ('seed', 'output', 'jobs', 'vocabulary', 'datasets',
                 'model', 'training', 'capture', 'subspace', 'intervention',
                 'experiments')
        return dict((k, obj[k]) for k in order)

    def section_hash(self, *names):
        """Hash of the named resolved sections"""
        obj = self.as_yaml_object()
        return general.sha256_json({name: obj[name] for name in names})

    def hash(self):
        """SHA-256 of the canonical YAML of the resolved configuration"""
        return general.sha256_bytes(dump(self).encode('utf-8'))

    def log(self, logger=None):
        logger = logger or logging.getLogger(__name__)
        logger.info('Configuration {}: seed: {}, output: {}, '
                    'datasets: {}, experiments: {}',
                    self.hash()[:12], self._seed, self._output,
                    [m.name for m in self._datasets], self._experiments)
