"""OI subspaces fitted to activation matrices

A subspace stores its basis as c×d rows so that projecting a point is
`basis·(x − mean)` and mapping subspace coordinates back into the
residual stream is `basisᵀ·coords`.  The first row is oriented so that
first-component scores increase with OI.

Binary container: magic "OISS", u32 version, u32 c, u32 d, u8 method,
u8 role, i32 layer, i32 relation, u8 flag for a variance ratio, then the
basis, the mean and (if flagged) the variance ratios as little-endian
float64.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import io
import struct

from barnapy import logging
import numpy as np

from . import capture
from . import file
from . import linalg
from . import records
from .general import FormatError, InputError


subspace_magic = b'OISS'
subspace_version = 1

methods = ('pca', 'ica', 'pls')

unit_tolerance = 1e-8


class Subspace:

    def __init__(self, basis, mean, explained_variance_ratio=None,
                 method='pca', layer=-1, relation=-1, role='entity-query'):
        basis = np.array(basis, dtype=np.float64, ndmin=2)
        mean = np.array(mean, dtype=np.float64).reshape(-1)
        if basis.ndim != 2 or basis.shape[0] < 1:
            raise InputError('Basis must be a nonempty c×d matrix: shape {}'
                             .format(basis.shape))
        if basis.shape[1] != len(mean):
            raise InputError('Basis width {} does not match mean width {}'
                             .format(basis.shape[1], len(mean)))
        norms = np.linalg.norm(basis, axis=1)
        if np.any(np.abs(norms - 1.0) > unit_tolerance):
            raise InputError('Basis rows are not unit vectors: norms {}'
                             .format(norms.tolist()))
        if method not in methods:
            raise InputError('Unknown method: {!r}'.format(method))
        if role not in capture.role_codes:
            raise InputError('Unknown role: {!r}'.format(role))
        if explained_variance_ratio is not None:
            explained_variance_ratio = np.array(
                explained_variance_ratio, dtype=np.float64).reshape(-1)
            if len(explained_variance_ratio) != basis.shape[0]:
                raise InputError('Expected {} variance ratios, got {}'
                                 .format(basis.shape[0],
                                         len(explained_variance_ratio)))
        self._basis = basis
        self._mean = mean
        self._ratio = explained_variance_ratio
        self._method = method
        self._layer = int(layer)
        self._relation = int(relation)
        self._role = role

    @property
    def basis(self):
        return self._basis

    @property
    def mean(self):
        return self._mean

    @property
    def explained_variance_ratio(self):
        return self._ratio

    @property
    def method(self):
        return self._method

    @property
    def layer(self):
        return self._layer

    @property
    def relation(self):
        return self._relation

    @property
    def role(self):
        return self._role

    @property
    def n_components(self):
        return self._basis.shape[0]

    @property
    def width(self):
        return self._basis.shape[1]

    def _check_width(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1:] != (self.width,) or x.ndim > 2:
            raise InputError('Width mismatch: expected {}, got shape {}'
                             .format(self.width, x.shape))
        return x

    def project(self, x):
        """Coordinates of a point (or of every row) in the subspace"""
        return (self._check_width(x) - self._mean) @ self._basis.T

    def project_uncentered(self, x):
        return self._check_width(x) @ self._basis.T

    def lift(self, coords):
        """Residual-stream displacement of subspace coordinates"""
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape[-1:] != (self.n_components,):
            raise InputError('Expected {} coordinates, got shape {}'.format(
                self.n_components, coords.shape))
        return coords @ self._basis

    def with_basis(self, basis):
        return Subspace(basis, self._mean, self._ratio, self._method,
                        self._layer, self._relation, self._role)

    def __eq__(self, other):
        return (type(self) == type(other)
                and np.array_equal(self._basis, other._basis)
                and np.array_equal(self._mean, other._mean)
                and ((self._ratio is None and other._ratio is None)
                     or (self._ratio is not None and other._ratio is not None
                         and np.array_equal(self._ratio, other._ratio)))
                and (self._method, self._layer, self._relation, self._role)
                == (other._method, other._layer, other._relation,
                    other._role))

    def __repr__(self):
        return '{}(c={}, d={}, method={}, layer={}, relation={})'.format(
            type(self).__qualname__, self.n_components, self.width,
            self._method, self._layer, self._relation)


def project(subspace, x):
    return subspace.project(x)


def orient(subspace, points, oi_labels):
    """Flip the first basis row if its scores on `points` correlate
    negatively with the OI labels.

    """
    labels = np.asarray(oi_labels)
    if len(labels) < 2 or np.all(labels == labels[0]):
        raise InputError('Cannot orient on constant OI labels')
    rho = linalg.spearman(subspace.project(points)[:, 0], labels)
    if rho >= 0:
        return subspace
    basis = subspace.basis.copy()
    basis[0] = -basis[0]
    return subspace.with_basis(basis)


def _order_by_oi(rows, scores, oi_labels):
    """Order rows by decreasing |ρ| of their scores with OI"""
    if np.all(oi_labels == oi_labels[0]):
        return rows
    strength = []
    for col in range(scores.shape[1]):
        try:
            strength.append(abs(linalg.spearman(scores[:, col], oi_labels)))
        except InputError:
            strength.append(0.0)
    order = sorted(range(len(strength)), key=lambda i: (-strength[i], i))
    return rows[order]


def fit_oi_subspace(matrix, c=2, method='pca', seed=0):
    """Fit a c-dimensional subspace to the rows of an activation matrix
    and orient it by the matrix's OI labels (when they vary).

    """
    data = np.asarray(matrix.data, dtype=np.float64)
    n, d = data.shape
    if n < 3:
        raise InputError('Need at least 3 rows, got: {}'.format(n))
    if not 1 <= c <= min(n - 1, d):
        raise InputError('Number of components out of range [1, {}]: {}'
                         .format(min(n - 1, d), c))
    oi = matrix.oi_labels
    ratio = None
    if method == 'pca':
        fit = linalg.pca(data, c)
        basis, mean, ratio = (fit.components, fit.mean,
                              fit.explained_variance_ratio)
    elif method == 'ica':
        fit = linalg.fast_ica_fit(data, c, seed)
        basis = _order_by_oi(fit.unmixing, fit.sources(data), oi)
        mean = fit.mean
    elif method == 'pls':
        fit = linalg.pls_fit(data, oi, c)
        basis, mean = fit.directions, fit.mean
    else:
        raise InputError('Unknown method: {!r}'.format(method))
    subspace = Subspace(basis, mean, ratio, method, matrix.layer,
                        matrix.relation, matrix.role)
    if np.any(oi != oi[0]):
        subspace = orient(subspace, data, oi)
    return subspace


# Projection tables


def projection_header(c=2):
    return records.Header(
        *([('pc{}'.format(i + 1), float) for i in range(c)]
          + [('oi', int), ('pi', int), ('sample_id', int)]))


class ProjectionTable(records.Table):

    def __init__(self, layer, rows=(), c=2):
        super().__init__(projection_header(c), rows,
                         name='projection-layer{}'.format(layer))
        self._layer = layer

    @property
    def layer(self):
        return self._layer

    @staticmethod
    def from_matrix(matrix, subspace):
        coords = subspace.project(matrix.data)
        table = ProjectionTable(matrix.layer, c=subspace.n_components)
        for row in range(matrix.n_rows):
            table.add([float(v) for v in coords[row]] + [
                int(matrix.oi_labels[row]), int(matrix.pi_labels[row]),
                int(matrix.sample_refs[row])])
        return table


def projection_table(matrices, c=2, method='pca', seed=0):
    """One table per layer, each projected by its own fitted and oriented
    subspace.  `matrices` maps layer to activation matrix.

    """
    return [ProjectionTable.from_matrix(
        matrices[layer], fit_oi_subspace(matrices[layer], c, method, seed))
        for layer in sorted(matrices)]


def layer_scores(train, dev, c=2, method='pca', seed=0):
    """Spearman ρ of first-component dev scores with dev OI, per layer,
    for subspaces fitted on the train matrices

    """
    if set(train) != set(dev):
        raise InputError('Train and dev layers differ: {} vs {}'.format(
            sorted(train), sorted(dev)))
    scores = {}
    for layer in sorted(train):
        subspace = fit_oi_subspace(train[layer], c, method, seed)
        scores[layer] = linalg.spearman(
            subspace.project(dev[layer].data)[:, 0], dev[layer].oi_labels)
    return scores


layer_score_header = records.Header(('layer', int), ('rho_dev', float))


def select_best_layer(train, dev, c=2, method='pca', seed=0):
    """Return (best layer, scores by layer).  Ties go to the lower
    layer.

    """
    logger = logging.getLogger(__name__)
    scores = layer_scores(train, dev, c, method, seed)
    if not scores:
        raise InputError('No layers to select from')
    best = max(sorted(scores), key=lambda layer: scores[layer])
    logger.info('Best layer: {} (ρ {:.4f})', best, scores[best])
    return best, scores


# Persistence


_method_codes = {m: i for (i, m) in enumerate(methods)}
_header = struct.Struct('<IIIBBiiB')


def subspace_bytes(subspace):
    out = io.BytesIO()
    out.write(subspace_magic)
    out.write(_header.pack(
        subspace_version, subspace.n_components, subspace.width,
        _method_codes[subspace.method], capture.role_codes[subspace.role],
        subspace.layer, subspace.relation,
        int(subspace.explained_variance_ratio is not None)))
    out.write(subspace.basis.astype('<f8').tobytes(order='C'))
    out.write(subspace.mean.astype('<f8').tobytes())
    if subspace.explained_variance_ratio is not None:
        out.write(subspace.explained_variance_ratio.astype('<f8').tobytes())
    return out.getvalue()


def subspace_from_bytes(data, name='<subspace>'):
    if len(data) < 4 + _header.size:
        raise FormatError('{}: Truncated header'.format(name))
    if data[:4] != subspace_magic:
        raise FormatError('{}: Not a subspace: magic {!r}'.format(
            name, data[:4]))
    (version, c, d, method, role, layer, relation,
     has_ratio) = _header.unpack_from(data, 4)
    if version != subspace_version:
        raise FormatError('{}: Unsupported version: {}'.format(
            name, version))
    if method >= len(methods) or role not in capture.role_names:
        raise FormatError('{}: Bad method or role code'.format(name))
    offset = 4 + _header.size
    expected = offset + 8 * (c * d + d + (c if has_ratio else 0))
    if len(data) != expected:
        raise FormatError('{}: Expected {} bytes, found {}'.format(
            name, expected, len(data)))
    values = np.frombuffer(data, dtype='<f8', offset=offset).astype(
        np.float64)
    basis = values[:c * d].reshape(c, d)
    mean = values[c * d:c * d + d]
    ratio = values[c * d + d:] if has_ratio else None
    try:
        return Subspace(basis, mean, ratio, methods[method], layer,
                        relation, capture.role_names[role])
    except InputError as e:
        raise FormatError('{}: {}'.format(name, e))


def save_subspace(subspace, path):
    return file.write_atomic(path, subspace_bytes(subspace))


def load_subspace(path):
    path = file.require_file(path, 'subspace')
    return subspace_from_bytes(path.read_bytes(), str(path))
