"""Artifact layout of an output directory and loading of stage
artifacts

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import collections
import json
import pathlib

import yaml

from . import capture
from . import datagen
from . import file
from . import subspace
from .general import FormatError


class Workspace:
    """Paths of the artifacts under an output directory"""

    def __init__(self, root):
        self._root = pathlib.Path(root)

    @property
    def root(self):
        return self._root

    def relative(self, path):
        return pathlib.Path(path).relative_to(self._root).as_posix()

    @property
    def vocabulary(self):
        return self._root / 'data' / 'vocabulary.json'

    def dataset(self, name):
        return self._root / 'data' / '{}.jsonl'.format(name)

    @property
    def data_manifest(self):
        return self._root / 'data' / 'manifest.yaml'

    @property
    def checkpoint(self):
        return self._root / 'model' / 'model.oilm'

    @property
    def training(self):
        return self._root / 'model' / 'training.yaml'

    def activations(self, dataset, split, role, layer):
        return (self._root / 'activations' / dataset / split
                / '{}-layer{}.oiam'.format(role, layer))

    def subspace(self, dataset, role, layer, method):
        return (self._root / 'subspaces' / dataset
                / '{}-layer{}-{}.oiss'.format(role, layer, method))

    @property
    def layer_scores(self):
        return self._root / 'subspaces' / 'layer_scores.csv'

    @property
    def selection(self):
        return self._root / 'subspaces' / 'selection.yaml'

    @property
    def sweeps(self):
        return self._root / 'sweeps'

    @property
    def intervention_spec(self):
        return self._root / 'sweeps' / 'spec.yaml'

    @property
    def report(self):
        return self._root / 'report'

    @property
    def report_manifest(self):
        return self._root / 'report' / 'manifest.yaml'

    @property
    def summary(self):
        return self._root / 'report' / 'summary.txt'

    def stamp(self, stage):
        return self._root / 'stages' / '{}.yaml'.format(stage)


def dump_yaml(obj):
    # Round trip through JSON to turn ordered and numpy-free structures
    # into plain YAML mappings
    return yaml.safe_dump(
        json.loads(json.dumps(obj)), version=(1, 2), explicit_start=True,
        explicit_end=True, default_flow_style=False, sort_keys=False)


def load_yaml(path):
    path = file.require_file(path, 'YAML file')
    with file.open(path, 'rt') as yaml_file:
        try:
            return yaml.safe_load(yaml_file)
        except yaml.YAMLError as e:
            raise FormatError('{}: Bad YAML: {}'.format(path, e))


def split_samples(samples, manifest):
    """Samples of each split of a dataset.  Samples derived from the same
    source context land in the same split.

    """
    keys = collections.OrderedDict()
    for sample in samples:
        key = sample.id if sample.source_id is None else sample.source_id
        keys.setdefault(key, len(keys))
    parts = datagen.split_ids(len(keys), manifest.split, manifest.seed)
    part_of = {}
    for name, indices in parts.items():
        for index in indices:
            part_of[index] = name
    splits = collections.OrderedDict((name, []) for name in parts)
    for sample in samples:
        key = sample.id if sample.source_id is None else sample.source_id
        splits[part_of[keys[key]]].append(sample)
    return splits


role_queries = {
    'entity-query': datagen.expand_queries,
    'attribute-query': datagen.expand_attribute_queries,
}


def queries_of(samples, role, vocab):
    """Expanded queries whose rows make up the activation matrix of a
    role

    """
    return role_queries[role](samples, vocab)


def load_splits(ws, manifest):
    return split_samples(datagen.load_samples(
        file.require_file(ws.dataset(manifest.name), 'dataset')), manifest)


def load_matrices(ws, dataset, split, role, layers):
    """Activation matrices by layer, leaving out layers without a file"""
    matrices = {}
    for layer in layers:
        path = ws.activations(dataset, split, role, layer)
        if path.is_file():
            matrices[layer] = capture.load_matrix(path)
    return matrices


def load_subspaces(ws, dataset, role, layers, method):
    subspaces = {}
    for layer in layers:
        path = ws.subspace(dataset, role, layer, method)
        if path.is_file():
            subspaces[layer] = subspace.load_subspace(path)
    return subspaces
