"""Labeled activation matrices

Rows are residual-stream states of a trained model at the queried token
of each sample (an entity for entity queries, an attribute for attribute
queries), labeled with the queried token's OI and PI and the sample id.

Binary container: magic "OIAM", u32 version, u32 n, u32 d, u8 role,
u32 layer, i32 relation (-1 for mixed relations), i32 arrays of OI
labels, PI labels and sample ids, then the n×d data as little-endian
float32 in row-major order.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import io
import struct

import barnapy.general
from barnapy import logging
import numpy as np

from . import datagen
from . import file
from . import toylm
from .general import FormatError, InputError


matrix_magic = b'OIAM'
matrix_version = 1

role_codes = {'entity-query': 0, 'attribute-query': 1}
role_names = {code: role for (role, code) in role_codes.items()}


class ActivationMatrix:

    def __init__(self, data, oi_labels, pi_labels, role, layer,
                 relation=-1, sample_refs=None):
        data = np.asarray(data, dtype=np.float32)
        if data.ndim != 2:
            raise InputError('Activation data must be 2-D: shape {}'
                             .format(data.shape))
        n = data.shape[0]
        if sample_refs is None:
            sample_refs = range(n)
        labels = [np.asarray(l, dtype=np.int64).reshape(-1)
                  for l in (oi_labels, pi_labels, sample_refs)]
        if any(len(l) != n for l in labels):
            raise InputError('Label lengths {} do not match {} rows'.format(
                [len(l) for l in labels], n))
        if role not in role_codes:
            raise InputError('Unknown role: {!r}'.format(role))
        if layer < 0:
            raise InputError('Negative layer: {}'.format(layer))
        if not np.all(np.isfinite(data)):
            raise InputError('Non-finite activations')
        self._data = data
        self._oi_labels, self._pi_labels, self._sample_refs = labels
        self._role = role
        self._layer = int(layer)
        self._relation = int(relation)

    @property
    def data(self):
        return self._data

    @property
    def oi_labels(self):
        return self._oi_labels

    @property
    def pi_labels(self):
        return self._pi_labels

    @property
    def sample_refs(self):
        return self._sample_refs

    @property
    def role(self):
        return self._role

    @property
    def layer(self):
        return self._layer

    @property
    def relation(self):
        return self._relation

    @property
    def n_rows(self):
        return self._data.shape[0]

    @property
    def width(self):
        return self._data.shape[1]

    def subset(self, rows):
        """Matrix of the given rows (indices or boolean mask) in order"""
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return ActivationMatrix(
            self._data[rows], self._oi_labels[rows], self._pi_labels[rows],
            self._role, self._layer, self._relation,
            self._sample_refs[rows])

    def with_oi(self, oi):
        return self.subset(self._oi_labels == oi)

    def row_of(self, sample_ref):
        found = np.flatnonzero(self._sample_refs == sample_ref)
        if len(found) == 0:
            raise InputError('No row for sample: {}'.format(sample_ref))
        return int(found[0])

    def __eq__(self, other):
        return (type(self) == type(other)
                and self._role == other._role
                and self._layer == other._layer
                and self._relation == other._relation
                and np.array_equal(self._data, other._data)
                and np.array_equal(self._oi_labels, other._oi_labels)
                and np.array_equal(self._pi_labels, other._pi_labels)
                and np.array_equal(self._sample_refs, other._sample_refs))

    def __repr__(self):
        return '{}(n={}, d={}, role={}, layer={}, relation={})'.format(
            type(self).__qualname__, self.n_rows, self.width, self._role,
            self._layer, self._relation)


def _relation_of(samples):
    relations = {s.relation for s in samples}
    return relations.pop() if len(relations) == 1 else -1


def _role_of(samples):
    kinds = {s.query_kind for s in samples}
    if len(kinds) != 1:
        raise InputError('Samples mix query kinds: {}'.format(
            sorted(kinds)))
    return 'attribute-query' if kinds.pop() == 'attribute' \
        else 'entity-query'


def layer_sweep_matrices(model, samples, layers, vocab, batch_size=64,
                         site='post'):
    """One activation matrix per layer, capturing every layer in a
    single forward pass per batch.  Rows follow sample order.

    """
    logger = logging.getLogger(__name__)
    samples = list(samples)
    layers = sorted(set(layers))
    if not samples:
        raise InputError('No samples to capture')
    if not layers:
        raise InputError('No layers to capture')
    for layer in layers:
        if not 0 <= layer < model.config.n_layers:
            raise InputError('Layer out of range: {}'.format(layer))
    role = _role_of(samples)
    chunks = {layer: [] for layer in layers}
    starts = range(0, len(samples), batch_size)
    for start in barnapy.general.track_iterator(
            starts,
            lambda count: logger.info(
                'Captured batches: {} of {}', count, len(starts)),
            track_every=50,
            track_init=False,
            track_end=True):
        batch_samples = samples[start:start + batch_size]
        batch, _ = toylm.pad_batch(
            [s.model_input(vocab) for s in batch_samples], vocab.pad)
        positions = [datagen.Sample.input_position(s.query_pi)
                     for s in batch_samples]
        _, captured = toylm.forward_with_trace(
            model, batch,
            toylm.TraceSpec(layers, row_positions=positions, site=site))
        for layer in layers:
            chunks[layer].append(captured[layer].numpy())
    oi_labels = [s.query_oi for s in samples]
    pi_labels = [s.query_pi for s in samples]
    refs = [s.id for s in samples]
    relation = _relation_of(samples)
    return {
        layer: ActivationMatrix(
            np.concatenate(chunks[layer]), oi_labels, pi_labels, role,
            layer, relation, refs)
        for layer in layers
    }


def build_entity_matrix(model, samples, layer, vocab, **options):
    samples = list(samples)
    for sample in samples:
        if sample.query_kind != 'entity':
            raise InputError('Not an entity query: {!r}'.format(sample))
    return layer_sweep_matrices(
        model, samples, [layer], vocab, **options)[layer]


def attribute_queries(samples, vocab):
    """Attribute-query renderings of the samples, keeping ids"""
    return [s if s.query_kind == 'attribute'
            else datagen.attribute_query(s, vocab) for s in samples]


def build_attribute_matrix(model, samples, layer, vocab, **options):
    return layer_sweep_matrices(
        model, attribute_queries(samples, vocab), [layer], vocab,
        **options)[layer]


# Persistence


def matrix_bytes(matrix):
    out = io.BytesIO()
    out.write(matrix_magic)
    out.write(struct.pack(
        '<IIIBIi', matrix_version, matrix.n_rows, matrix.width,
        role_codes[matrix.role], matrix.layer, matrix.relation))
    for labels in (matrix.oi_labels, matrix.pi_labels, matrix.sample_refs):
        out.write(labels.astype('<i4').tobytes())
    out.write(matrix.data.astype('<f4').tobytes(order='C'))
    return out.getvalue()


def matrix_from_bytes(data, name='<activations>'):
    header = struct.Struct('<IIIBIi')
    if len(data) < 4 + header.size:
        raise FormatError('{}: Truncated header'.format(name))
    if data[:4] != matrix_magic:
        raise FormatError('{}: Not an activation matrix: magic {!r}'
                          .format(name, data[:4]))
    version, n, d, role, layer, relation = header.unpack_from(data, 4)
    if version != matrix_version:
        raise FormatError('{}: Unsupported version: {}'.format(
            name, version))
    if role not in role_names:
        raise FormatError('{}: Unknown role code: {}'.format(name, role))
    offset = 4 + header.size
    expected = offset + 3 * 4 * n + 4 * n * d
    if len(data) != expected:
        raise FormatError('{}: Expected {} bytes, found {}'.format(
            name, expected, len(data)))
    labels = []
    for _ in range(3):
        labels.append(np.frombuffer(data, dtype='<i4', count=n,
                                     offset=offset).astype(np.int64))
        offset += 4 * n
    values = np.frombuffer(data, dtype='<f4', count=n * d, offset=offset)
    try:
        return ActivationMatrix(
            values.astype(np.float32).reshape(n, d), labels[0], labels[1],
            role_names[role], layer, relation, labels[2])
    except InputError as e:
        raise FormatError('{}: {}'.format(name, e))


def save_matrix(matrix, path):
    return file.write_atomic(path, matrix_bytes(matrix))


def load_matrix(path):
    path = file.require_file(path, 'activation matrix')
    return matrix_from_bytes(path.read_bytes(), str(path))
