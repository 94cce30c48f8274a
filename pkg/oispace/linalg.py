"""Dense linear algebra and statistics

Deterministic numeric primitives for the workbench: SVD by one-sided
Jacobi rotations, PCA on top of it, FastICA, PLS by NIPALS, and
Spearman rank correlation.  A brute-force Jacobi eigen solver for
symmetric matrices is included as a reference for checking the others.

All functions are pure.  Matrices are 2-D float64 `numpy` arrays with
samples in rows.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import math

import numpy as np
import scipy.stats

from .general import InputError, NumericError


# Numeric settings

svd_max_sweeps = 100
svd_tolerance = 1e-12
ica_max_iterations = 500
ica_tolerance = 1e-6
pls_max_iterations = 500
pls_tolerance = 1e-9

# Columns whose norm is below this fraction of the matrix norm are
# treated as exactly zero by the Jacobi sweeps
_negligible_norm = 1e-13


# Validation


def as_matrix(m, name='matrix'):
    """Return `m` as a finite 2-D float64 array or raise `InputError`."""
    arr = np.array(m, dtype=np.float64)
    if arr.ndim != 2:
        raise InputError('{}: Not a 2-D matrix: shape {}'.format(
            name, arr.shape))
    if not np.all(np.isfinite(arr)):
        raise InputError('{}: Contains NaN or infinite values'.format(name))
    return arr


def as_vector(x, name='vector'):
    arr = np.array(x, dtype=np.float64).ravel()
    if not np.all(np.isfinite(arr)):
        raise InputError('{}: Contains NaN or infinite values'.format(name))
    return arr


# SVD


class SvdResult:
    """Thin SVD `m = u @ diag(singular_values) @ vt` with k = min(n, d)"""

    def __init__(self, u, singular_values, vt, n_sweeps=0):
        self._u = u
        self._singular_values = singular_values
        self._vt = vt
        self._n_sweeps = n_sweeps

    @property
    def u(self):
        return self._u

    @property
    def singular_values(self):
        return self._singular_values

    @property
    def vt(self):
        return self._vt

    @property
    def n_sweeps(self):
        return self._n_sweeps

    def reconstruct(self):
        return (self._u * self._singular_values) @ self._vt

    def __repr__(self):
        return '{}(shape=({}, {}), singular_values={!r})'.format(
            type(self).__qualname__, self._u.shape[0], self._vt.shape[1],
            self._singular_values)


def _round_robin(m):
    """Rounds of disjoint column pairs covering every pair once."""
    players = list(range(m)) + ([-1] if m % 2 else [])
    k = len(players)
    rounds = []
    for _ in range(max(k - 1, 0)):
        pairs = [(players[i], players[k - 1 - i]) for i in range(k // 2)]
        pairs = [(min(p), max(p)) for p in pairs if -1 not in p]
        rounds.append((np.array([p[0] for p in pairs], dtype=np.intp),
                       np.array([p[1] for p in pairs], dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def _complete_columns(q, keep):
    """Replace the columns of `q` not in `keep` with an orthonormal
    completion of the kept columns.

    """
    if keep.all():
        return q
    out = q.copy()
    current = q[:, keep]
    missing = list(np.flatnonzero(~keep))
    for e in np.eye(q.shape[0]):
        if not missing:
            break
        w = e - current @ (current.T @ e)
        w -= current @ (current.T @ w)
        norm = np.linalg.norm(w)
        if norm > 1e-8:
            w /= norm
            out[:, missing.pop(0)] = w
            current = np.column_stack([current, w])
    return out


def _jacobi_columns(work, max_sweeps, tol):
    """Orthogonalize the columns of `work` in place by Jacobi rotations.

    Returns (V, sweeps) where `work_in @ V = work_out`.

    """
    cols = work.shape[1]
    v = np.eye(cols)
    floor = (_negligible_norm * np.linalg.norm(work)) ** 2
    rounds = _round_robin(cols)
    for sweep in range(1, max_sweeps + 1):
        off = 0.0
        for i, j in rounds:
            if not len(i):
                continue
            ai = work[:, i]
            aj = work[:, j]
            alpha = np.einsum('ij,ij->j', ai, ai)
            beta = np.einsum('ij,ij->j', aj, aj)
            gamma = np.einsum('ij,ij->j', ai, aj)
            live = (alpha > floor) & (beta > floor)
            if not live.any():
                continue
            ratio = np.zeros_like(gamma)
            ratio[live] = (np.abs(gamma[live])
                           / np.sqrt(alpha[live] * beta[live]))
            off = max(off, float(ratio.max()))
            active = live & (ratio > tol)
            if not active.any():
                continue
            i, j = i[active], j[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = (np.where(zeta >= 0, 1.0, -1.0)
                 / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for mat in (work, v):
                mi = mat[:, i].copy()
                mj = mat[:, j]
                mat[:, i] = c * mi - s * mj
                mat[:, j] = s * mi + c * mj
        if off <= tol:
            return v, sweep
    raise NumericError(
        'SVD did not converge within the iteration cap of {} sweeps'
        .format(max_sweeps))


def svd(m, max_sweeps=svd_max_sweeps, tol=svd_tolerance):
    """Thin SVD by one-sided (Hestenes) Jacobi rotations.

    Singular values are nonincreasing.  Signs are fixed so that the
    largest-magnitude entry of every row of `vt` is positive, which
    makes the result unique for distinct singular values.

    """
    a = as_matrix(m)
    n, d = a.shape
    if min(n, d) < 1:
        raise InputError('Empty matrix: shape {}'.format(a.shape))
    transposed = d > n
    work = a.T.copy() if transposed else a.copy()
    v, sweeps = _jacobi_columns(work, max_sweeps, tol)
    sigma = np.linalg.norm(work, axis=0)
    order = np.argsort(-sigma, kind='stable')
    sigma = sigma[order]
    work = work[:, order]
    v = v[:, order]
    zero = max(sigma[0], 1.0) * _negligible_norm if len(sigma) else 0.0
    keep = sigma > zero
    q = np.zeros_like(work)
    q[:, keep] = work[:, keep] / sigma[keep]
    q = _complete_columns(q, keep)
    sigma = np.where(keep, sigma, 0.0)
    if transposed:
        u, vt = v, q.T
    else:
        u, vt = q, v.T
    # Sign convention
    for k in range(vt.shape[0]):
        idx = int(np.argmax(np.abs(vt[k])))
        if vt[k, idx] < 0:
            vt[k] = -vt[k]
            u[:, k] = -u[:, k]
    return SvdResult(u, sigma, vt, sweeps)


def jacobi_eigh(sym, max_sweeps=svd_max_sweeps, tol=svd_tolerance):
    """Eigen-decompose a symmetric matrix by brute-force cyclic Jacobi.

    Returns (eigenvalues descending, eigenvectors as columns).  This is
    a slow reference implementation for checking `svd` and `pca`.

    """
    a = as_matrix(sym)
    n = a.shape[0]
    if a.shape[1] != n or not np.allclose(a, a.T, atol=1e-12):
        raise InputError('Not a symmetric matrix')
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = ((1.0 if tau >= 0 else -1.0)
                     / (abs(tau) + math.sqrt(1.0 + tau * tau)))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                g = np.eye(n)
                g[p, p] = g[q, q] = c
                g[p, q] = s
                g[q, p] = -s
                a = g.T @ a @ g
                v = v @ g
    else:
        raise NumericError(
            'Jacobi eigen solver did not converge within {} sweeps'
            .format(max_sweeps))
    values = np.diag(a).copy()
    order = np.argsort(-values, kind='stable')
    return values[order], v[:, order]


# PCA


def mean_center(m):
    """Return (centered matrix, column means)."""
    a = as_matrix(m)
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise InputError('Empty matrix: shape {}'.format(a.shape))
    mean = a.mean(axis=0)
    return a - mean, mean


class PcaFit:

    def __init__(self, components, mean, singular_values,
                 explained_variance_ratio):
        self._components = components
        self._mean = mean
        self._singular_values = singular_values
        self._explained_variance_ratio = explained_variance_ratio

    @property
    def components(self):
        """Principal directions as rows (c×d)"""
        return self._components

    @property
    def mean(self):
        return self._mean

    @property
    def singular_values(self):
        return self._singular_values

    @property
    def explained_variance_ratio(self):
        return self._explained_variance_ratio

    def scores(self, m):
        return (as_matrix(m) - self._mean) @ self._components.T


def pca(m, c):
    """Principal component analysis through the SVD of the centered
    matrix.

    """
    centered, mean = mean_center(m)
    n, d = centered.shape
    if c < 1 or c > min(n, d):
        raise InputError('Number of components out of range: {}'.format(c))
    result = svd(centered)
    energy = result.singular_values ** 2
    total = float(energy.sum())
    if total <= 0.0 or result.singular_values[0] <= 0.0:
        raise NumericError('Zero variance: all rows are identical')
    return PcaFit(result.vt[:c].copy(), mean,
                  result.singular_values[:c].copy(),
                  energy[:c] / total)


# ICA


def excess_kurtosis(x):
    """Excess kurtosis of each column of `x` (0 for a Gaussian)."""
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean(axis=0)
    m2 = (xc ** 2).mean(axis=0)
    m4 = (xc ** 4).mean(axis=0)
    return m4 / (m2 ** 2) - 3.0


def _symmetric_decorrelation(w):
    """Return (W Wᵀ)^(-1/2) W, whose rows are orthonormal."""
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, 1e-300, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


class IcaFit:

    def __init__(self, unmixing, whitened_unmixing, whitening, mean,
                 kurtosis, n_iterations):
        self._unmixing = unmixing
        self._whitened_unmixing = whitened_unmixing
        self._whitening = whitening
        self._mean = mean
        self._kurtosis = kurtosis
        self._n_iterations = n_iterations

    @property
    def unmixing(self):
        """Unit-norm unmixing rows in the original space (c×d)"""
        return self._unmixing

    @property
    def whitened_unmixing(self):
        """Orthonormal unmixing rows in whitened space (c×c)"""
        return self._whitened_unmixing

    @property
    def whitening(self):
        return self._whitening

    @property
    def mean(self):
        return self._mean

    @property
    def kurtosis(self):
        return self._kurtosis

    @property
    def n_iterations(self):
        return self._n_iterations

    def sources(self, m):
        return (as_matrix(m) - self._mean) @ self._unmixing.T


def fast_ica_fit(m, c, seed, max_iter=ica_max_iterations,
                 tol=ica_tolerance):
    """FastICA with PCA whitening, tanh contrast, and symmetric
    decorrelation.

    Raises `NumericError` on non-convergence and when no recovered
    source is distinguishable from a Gaussian (every |excess kurtosis|
    below three standard errors, 3·sqrt(24/n)).

    """
    a = as_matrix(m)
    n, d = a.shape
    if n < 3:
        raise InputError('FastICA needs at least 3 rows, got: {}'.format(n))
    if c < 1 or c > min(n - 1, d):
        raise InputError(
            'Number of components out of range [1, {}]: {}'
            .format(min(n - 1, d), c))
    centered, mean = mean_center(a)
    result = svd(centered)
    sigma = result.singular_values[:c]
    if sigma[-1] <= 0.0:
        raise NumericError(
            'Rank of the data is below the number of components: {}'
            .format(c))
    whitening = result.vt[:c] / (sigma / math.sqrt(n))[:, None]
    z = centered @ whitening.T
    rng = np.random.default_rng(seed)
    w = _symmetric_decorrelation(rng.standard_normal((c, c)))
    for iteration in range(1, max_iter + 1):
        g = np.tanh(z @ w.T)
        g_prime = 1.0 - g * g
        w_new = (g.T @ z) / n - g_prime.mean(axis=0)[:, None] * w
        w_new = _symmetric_decorrelation(w_new)
        change = np.max(np.abs(
            np.abs(np.einsum('ij,ij->i', w_new, w)) - 1.0))
        w = w_new
        if change < tol:
            break
    else:
        raise NumericError(
            'FastICA did not converge within the iteration cap of {}'
            .format(max_iter))
    kurtosis = excess_kurtosis(z @ w.T)
    if np.all(np.abs(kurtosis) < 3.0 * math.sqrt(24.0 / n)):
        raise NumericError(
            'FastICA sources are indistinguishable from Gaussian '
            '(excess kurtosis {})'.format(np.round(kurtosis, 4).tolist()))
    unmixing = w @ whitening
    unmixing /= np.linalg.norm(unmixing, axis=1)[:, None]
    return IcaFit(unmixing, w, whitening, mean, kurtosis, iteration)


def fast_ica(m, c, seed):
    """Unit-norm unmixing rows (c×d) found by FastICA."""
    return fast_ica_fit(m, c, seed).unmixing


# PLS


class PlsFit:

    def __init__(self, directions, r2_per_component, mean, scores):
        self._directions = directions
        self._r2_per_component = r2_per_component
        self._mean = mean
        self._scores = scores

    @property
    def directions(self):
        """Unit-norm weight rows (c×d)"""
        return self._directions

    @property
    def r2_per_component(self):
        """R² of regressing the targets on components 0..k"""
        return self._r2_per_component

    @property
    def mean(self):
        return self._mean

    @property
    def scores(self):
        return self._scores


def regression_r2(scores, targets):
    """Cumulative least-squares R² of `targets` on the leading columns
    of `scores` (entry k uses columns 0..k).

    """
    t = as_matrix(scores)
    y = as_vector(targets)
    y = y - y.mean()
    ss_tot = float(y @ y)
    if ss_tot <= 0.0:
        raise InputError('Constant targets: R² is undefined')
    r2 = []
    for k in range(1, t.shape[1] + 1):
        design = t[:, :k] - t[:, :k].mean(axis=0)
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ coef
        r2.append(1.0 - float(resid @ resid) / ss_tot)
    r2 = np.clip(np.array(r2), 0.0, 1.0)
    return np.maximum.accumulate(r2)


def pls_fit(m, targets, c, max_iter=pls_max_iterations, tol=pls_tolerance):
    """Partial least squares with a single response by NIPALS with
    deflation.

    """
    x = as_matrix(m)
    y = as_vector(targets, 'targets')
    n, d = x.shape
    if len(y) != n:
        raise InputError('Targets length {} does not match rows {}'
                         .format(len(y), n))
    if c < 1 or c > min(n - 1, d):
        raise InputError(
            'Number of components out of range [1, {}]: {}'
            .format(min(n - 1, d), c))
    if np.ptp(y) == 0.0:
        raise InputError('Constant targets: R² is undefined')
    xk, mean = mean_center(x)
    yk = y - y.mean()
    weights = []
    scores = []
    for comp in range(c):
        u = yk.copy()
        t_old = None
        for _ in range(max_iter):
            w = xk.T @ u
            w_norm = np.linalg.norm(w)
            if w_norm <= 1e-300:
                raise NumericError(
                    'No covariance left for PLS component {}'.format(comp))
            w /= w_norm
            t = xk @ w
            tt = float(t @ t)
            q = float(yk @ t) / tt
            if q == 0.0:
                raise NumericError(
                    'No covariance left for PLS component {}'.format(comp))
            u = yk / q
            if (t_old is not None and np.linalg.norm(t - t_old)
                    <= tol * max(np.linalg.norm(t), 1e-300)):
                break
            t_old = t
        else:
            raise NumericError(
                'NIPALS did not converge within the iteration cap of {}'
                .format(max_iter))
        p = (xk.T @ t) / tt
        xk = xk - np.outer(t, p)
        yk = yk - q * t
        weights.append(w)
        scores.append(t)
    scores = np.column_stack(scores)
    return PlsFit(np.array(weights), regression_r2(scores, y), mean, scores)


# Rank correlation


def average_ranks(x):
    """1-based ranks with ties given their average rank"""
    return scipy.stats.rankdata(as_vector(x), method='average')


def pearson(x, y):
    x = as_vector(x)
    y = as_vector(y)
    dx = x - x.mean()
    dy = y - y.mean()
    den = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if den == 0.0:
        raise InputError('Correlation undefined for constant input')
    return float(np.clip(float(dx @ dy) / den, -1.0, 1.0))


def spearman(x, y):
    """Spearman's rank correlation: Pearson correlation of average
    ranks.

    """
    x = as_vector(x, 'x')
    y = as_vector(y, 'y')
    if x.shape != y.shape:
        raise InputError('Length mismatch: {} vs {}'.format(
            len(x), len(y)))
    if len(x) < 2:
        raise InputError('Need at least 2 points, got: {}'.format(len(x)))
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise InputError('Spearman correlation undefined for constant input')
    return pearson(average_ranks(x), average_ranks(y))

