"""Figures rendered from analysis tables

Line plots for LD curves, stacked bars for flip tables, scatter plots
for projections and heatmaps for distance matrices, drawn with
matplotlib on the Agg backend.  Plot functions return figures;
`render_svg` turns a figure into SVG text and closes it.  Rendered
figures carry no dates and use a fixed id salt, so identical tables
render to identical bytes.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import collections
import io

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np

from . import file
from .general import InputError


figure_size = (6.0, 4.0)

style = {
    'font.family': 'DejaVu Sans',
    'axes.unicode_minus': False,
    'svg.fonttype': 'none',
    'svg.hashsalt': 'oispace',
}


def _axes(title, x_label, y_label):
    with matplotlib.rc_context(style):
        fig, ax = plt.subplots(figsize=figure_size, constrained_layout=True)
    ax.set_title(title)
    ax.set_xlabel(x_label)
    ax.set_ylabel(y_label)
    return fig, ax


def render_svg(fig):
    """SVG text of a figure.  Closes the figure."""
    buffer = io.StringIO()
    try:
        with matplotlib.rc_context(style):
            fig.savefig(buffer, format='svg', metadata={'Date': None})
    finally:
        plt.close(fig)
    return buffer.getvalue()


def line_plot(series, title='', x_label='', y_label=''):
    """One line per named series of (xs, ys)"""
    if not series:
        raise InputError('No series to plot')
    fig, ax = _axes(title, x_label, y_label)
    for name, (xs, ys) in series.items():
        ax.plot(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float),
                marker='o', markersize=3, label=str(name))
    ax.grid(True, alpha=0.3)
    ax.legend(loc='best', fontsize=8)
    return fig


def stacked_bars(categories, stacks, title='', x_label='', y_label=''):
    """One bar per category stacking the values of every named stack"""
    categories = list(categories)
    if not categories or not stacks:
        raise InputError('No bars to plot')
    for name, values in stacks.items():
        if len(values) != len(categories):
            raise InputError('Stack {!r} has {} values for {} categories'
                             .format(name, len(values), len(categories)))
    fig, ax = _axes(title, x_label, y_label)
    positions = np.arange(len(categories))
    base = np.zeros(len(categories))
    for name, values in stacks.items():
        values = np.asarray(values, dtype=float)
        ax.bar(positions, values, 0.7, bottom=base, label=str(name))
        base += values
    ax.set_xticks(positions)
    ax.set_xticklabels(categories)
    ax.set_ylim(0.0, max(1.0, float(base.max())))
    ax.legend(loc='upper left', bbox_to_anchor=(1.0, 1.0), fontsize=8)
    return fig


def scatter(groups, title='', x_label='', y_label=''):
    """Points colored by group.  `groups` maps a label to (xs, ys)."""
    if not groups:
        raise InputError('No points to plot')
    fig, ax = _axes(title, x_label, y_label)
    for label, (xs, ys) in groups.items():
        ax.scatter(np.asarray(xs, dtype=float), np.asarray(ys, dtype=float),
                   s=6, label=str(label))
    ax.legend(loc='upper left', bbox_to_anchor=(1.0, 1.0), fontsize=8)
    return fig


def heatmap(values, row_labels=None, col_labels=None, title=''):
    """Gray-scale cells, darker for larger values"""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.size == 0:
        raise InputError('Not a nonempty matrix: shape {}'.format(
            values.shape))
    fig, ax = _axes(title, '', '')
    image = ax.imshow(values, cmap='Greys', aspect='auto')
    if row_labels is not None:
        ax.set_yticks(np.arange(values.shape[0]))
        ax.set_yticklabels(row_labels)
    if col_labels is not None:
        ax.set_xticks(np.arange(values.shape[1]))
        ax.set_xticklabels(col_labels)
    fig.colorbar(image, ax=ax)
    return fig


# Figures from analysis tables


def ld_curve_figure(curves, title='Logit difference'):
    series = collections.OrderedDict()
    for oi in sorted(set(curves.column('candidate_oi'))):
        rows = [r for r in curves.as_dicts() if r['candidate_oi'] == oi]
        name = 'a{}{}'.format(oi, ' (orig)' if rows[0]['is_original'] else '')
        series[name] = ([r['step'] for r in rows],
                        [r['mean_ld'] for r in rows])
    return line_plot(series, title, 'step', 'mean LD')


def flip_figure(flips, title='Logit flip'):
    steps = sorted(set(flips.column('step')))
    stacks = collections.OrderedDict()
    for row in flips.as_dicts():
        stacks.setdefault(row['bucket'], {})[row['step']] = row['proportion']
    return stacked_bars(
        [str(s) for s in steps],
        collections.OrderedDict(
            (bucket, [cells.get(s, 0.0) for s in steps])
            for (bucket, cells) in stacks.items()),
        title, 'step', 'proportion')


def projection_figure(table, title=None):
    groups = collections.OrderedDict()
    for row in table.as_dicts():
        xs, ys = groups.setdefault('OI {}'.format(row['oi']), ([], []))
        xs.append(row['pc1'])
        ys.append(row.get('pc2', 0.0))
    keys = sorted(groups, key=lambda k: int(k.split()[1]))
    return scatter(collections.OrderedDict((k, groups[k]) for k in keys),
                   title if title is not None else table.name, 'PC1', 'PC2')


def distance_figure(distances, title='Pair distances'):
    n_rows, n_cols = distances.shape
    return heatmap(distances.values,
                   ['e{}'.format(i) for i in range(n_rows)],
                   ['a{}'.format(j) for j in range(n_cols)], title)


def save_svg(path, svg):
    return file.write_atomic(path, svg)
