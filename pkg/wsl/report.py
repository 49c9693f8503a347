# file wsl/report.py
#
#   Copyright 2026 Emory University Libraries
#
#   Licensed under the Apache License, Version 2.0 (the "License");
#   you may not use this file except in compliance with the License.
#   You may obtain a copy of the License at
#
#       http://www.apache.org/licenses/LICENSE-2.0
#
#   Unless required by applicable law or agreed to in writing, software
#   distributed under the License is distributed on an "AS IS" BASIS,
#   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
#   See the License for the specific language governing permissions and
#   limitations under the License.

"""Markdown summary of an experiment directory.

:func:`write_report` reads the CSV and JSON artifacts an experiment
leaves behind and writes ``report.md`` plus plots under ``plots/``.
Sections whose artifacts are missing say "not run", and the report is
marked partial.  A directory whose artifacts were written by different
configurations is refused.
"""

import glob
import json
import logging
import os

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy
import pandas

from wsl import storage
from wsl.exceptions import FormatError
from wsl.explore import read_sweep_csv

__all__ = ['artifact_hashes', 'check_hashes', 'markdown_table', 'plot_sweeps',
           'plot_class_sweep', 'write_report', 'REPORT_NAME']

logger = logging.getLogger(__name__)

REPORT_NAME = 'report.md'
NOT_RUN = '_not run_'


def _csv_files(artifact_dir):
    return sorted(glob.glob(os.path.join(artifact_dir, '*.csv')) +
                  glob.glob(os.path.join(artifact_dir, '*', '*.csv')))


def artifact_hashes(artifact_dir):
    """Configuration hashes found in an artifact directory.

    :rtype: dict of hash -> list of files carrying it
    """
    found = {}

    def add(value, path):
        if isinstance(value, str) and value:
            found.setdefault(value, []).append(os.path.relpath(path, artifact_dir))

    for path in _csv_files(artifact_dir):
        try:
            frame = pandas.read_csv(path)
        except (pandas.errors.EmptyDataError, pandas.errors.ParserError):
            continue
        if 'config_hash' in frame.columns:
            for value in frame['config_hash'].dropna().unique():
                add(value, path)
    for path in sorted(glob.glob(os.path.join(artifact_dir, '*.json')) +
                       glob.glob(os.path.join(artifact_dir, '*', '*.json'))):
        if os.path.basename(path) == 'manifest.json':
            continue
        with open(path) as json_file:
            try:
                data = json.load(json_file)
            except ValueError:
                continue
        if isinstance(data, dict):
            add(data.get('config_hash'), path)
    for path in sorted(glob.glob(os.path.join(artifact_dir, '*', '*.ckpt'))):
        add(storage.read_header(path).get('config_hash'), path)
    return found


def check_hashes(artifact_dir):
    """The single configuration hash of a directory, or None when no
    artifact carries one.

    :raises FormatError: when artifacts come from different configurations
    """
    found = artifact_hashes(artifact_dir)
    if len(found) > 1:
        raise FormatError('%s mixes artifacts of %d configurations: %s' % (
            artifact_dir, len(found), '; '.join(
                '%s (%s)' % (h[:8], ', '.join(files)) for h, files in sorted(found.items()))))
    return next(iter(found), None)


def _cell(value):
    if value is None or (isinstance(value, float) and numpy.isnan(value)):
        return ''
    if isinstance(value, float):
        return '%.4f' % value
    return str(value)


def markdown_table(frame, columns=None):
    "Render a data frame as a markdown table."
    columns = list(columns or frame.columns)
    lines = ['| %s |' % ' | '.join(columns), '|%s' % ('---|' * len(columns))]
    for _, row in frame[columns].iterrows():
        lines.append('| %s |' % ' | '.join(_cell(row[c]) for c in columns))
    return '\n'.join(lines)


def _read(path):
    if not os.path.exists(path):
        return None
    try:
        frame = pandas.read_csv(path)
    except pandas.errors.EmptyDataError:
        return None
    return frame if len(frame) else None


def plot_sweeps(results, path, ylabel='metric'):
    """Metric against interpolation factor for several sweeps.

    :param results: dict of label -> :class:`~wsl.explore.SweepResult`
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, result in results.items():
        ax.plot(result.gammas, result.metrics, marker='.', label=label)
        # anchors
        ax.scatter([result.gammas[0], result.gammas[-1]],
                   [result.metrics[0], result.metrics[-1]], s=80, facecolors='none',
                   edgecolors='black', zorder=3)
    ax.set_xlabel('gamma')
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches='tight')
    plt.close(fig)


def plot_class_sweep(result, path, gamma_set=(), ylabel='accuracy'):
    """Latent sweep coloured by the decoded architecture; anchors are
    circled and the interpolation factors used in training are starred."""
    fig, ax = plt.subplots(figsize=(6, 4))
    gammas = numpy.array(result.gammas)
    metrics = numpy.array(result.metrics)
    class_ids = numpy.array(result.predicted_class_ids)
    cmap = plt.get_cmap('viridis', max(int(class_ids.max()) + 1, 2))
    for class_id in sorted(set(class_ids.tolist())):
        mask = class_ids == class_id
        ax.scatter(gammas[mask], metrics[mask], color=cmap(class_id), label='ClassId %d' % class_id)
    ax.scatter([gammas[0], gammas[-1]], [metrics[0], metrics[-1]], s=120, facecolors='none',
               edgecolors='black', zorder=3)
    for gamma in gamma_set:
        nearest = int(numpy.argmin(numpy.abs(gammas - gamma)))
        ax.scatter([gammas[nearest]], [metrics[nearest]], marker='*', s=160, color='red',
                   zorder=4)
    ax.set_xlabel('gamma')
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches='tight')
    plt.close(fig)


def _fidelity_section(artifact_dir):
    frame = _read(os.path.join(artifact_dir, 'fidelity.csv'))
    if frame is None:
        return None
    lines = []
    summary_path = os.path.join(artifact_dir, 'fidelity.json')
    if os.path.exists(summary_path):
        with open(summary_path) as summary_file:
            summary = json.load(summary_file)
        lines.append(markdown_table(pandas.DataFrame([summary]),
                                    ['count', 'spearman', 'kendall', 'mean_abs_gap',
                                     'class_accuracy']))
        lines.append('')
    per_class = frame.groupby('class_id').agg(
        instances=('id', 'count'), target=('target_metric', 'mean'),
        predicted=('predicted_metric', 'mean')).reset_index()
    lines.append(markdown_table(per_class))
    lines.append('')
    lines.append(markdown_table(frame, ['id', 'class_id', 'target_metric', 'predicted_metric',
                                       'predicted_class_id']))
    return '\n'.join(lines)


def _sweep_section(artifact_dir, plots_dir):
    results = {}
    for mode in ('latent', 'weight-space'):
        path = os.path.join(artifact_dir, 'sweeps', '%s.csv' % mode)
        if _read(path) is not None:
            results[mode] = read_sweep_csv(path)[0]
    if not results:
        return None
    gamma_set = []
    anchors_path = os.path.join(artifact_dir, 'sweeps', 'anchors.json')
    anchors = {}
    if os.path.exists(anchors_path):
        with open(anchors_path) as anchors_file:
            anchors = json.load(anchors_file)
        gamma_set = anchors.get('gamma_set') or []
    lines = []
    if anchors:
        lines.append('Anchors: %s and %s.' % (anchors.get('anchor_a'), anchors.get('anchor_b')))
        lines.append('')
    latent = results.get('latent')
    if latent is not None and latent.predicted_class_ids is not None:
        name = 'sweep_classes.png'
        plot_class_sweep(latent, os.path.join(plots_dir, name), gamma_set)
        lines.append('![latent sweep by architecture](plots/%s)' % name)
    name = 'sweeps.png'
    plot_sweeps(results, os.path.join(plots_dir, name))
    lines.append('![interpolation sweeps](plots/%s)' % name)
    lines.append('')
    columns = {'gamma': next(iter(results.values())).gammas}
    for mode, result in results.items():
        columns[mode] = result.metrics
    if latent is not None and latent.predicted_class_ids is not None:
        columns['class_id'] = latent.predicted_class_ids
    lines.append(markdown_table(pandas.DataFrame(columns)))
    return '\n'.join(lines)


def _lso_section(artifact_dir):
    frame = _read(os.path.join(artifact_dir, 'lso.csv'))
    if frame is None:
        return None
    # one column per architecture, rows initial / optimized
    table = pandas.DataFrame(
        [['initial'] + list(frame['initial']), ['optimized'] + list(frame['optimized'])],
        columns=[''] + list(frame['arch_name']))
    return markdown_table(table)


def _unseen_section(artifact_dir):
    frame = _read(os.path.join(artifact_dir, 'unseen.csv'))
    if frame is None:
        return None
    return markdown_table(frame, ['arch_name', 'class_id', 'gamma', 'accuracy'])


def _sdf_section(artifact_dir):
    frame = _read(os.path.join(artifact_dir, 'sdf_interp.csv'))
    if frame is None:
        return None
    lines = [markdown_table(frame, ['gamma', 'mode', 'sign_iou_a', 'sign_iou_b']), '']
    for path in sorted(glob.glob(os.path.join(artifact_dir, 'meshes', '*.obj'))):
        lines.append('- mesh `%s`' % os.path.relpath(path, artifact_dir))
    return '\n'.join(lines)


def _training_section(artifact_dir, plots_dir):
    frame = _read(os.path.join(artifact_dir, 'train', 'metrics.csv'))
    if frame is None:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame['epoch'], frame['loss'], label='train loss')
    ax.plot(frame['epoch'], frame['val_loss'], label='validation loss')
    ax.set_xlabel('epoch')
    ax.set_yscale('log')
    ax.legend()
    fig.savefig(os.path.join(plots_dir, 'training.png'), dpi=150, bbox_inches='tight')
    plt.close(fig)
    last = frame.iloc[-1]
    return '%d epochs, %d steps; final loss %s, validation fidelity %s.\n\n' \
        '![training curves](plots/training.png)' % (
            last['epoch'], last['step'], _cell(float(last['loss'])),
            _cell(last['val_fidelity']))


def write_report(artifact_dir):
    """Write ``report.md`` (and plots) for an experiment directory.

    :rtype: path of the report
    :raises FormatError: when the directory mixes configurations
    """
    config_hash = check_hashes(artifact_dir)
    plots_dir = os.path.join(artifact_dir, 'plots')
    os.makedirs(plots_dir, exist_ok=True)
    kind = None
    config_path = os.path.join(artifact_dir, 'config.json')
    if os.path.exists(config_path):
        with open(config_path) as config_file:
            kind = json.load(config_file).get('config', {}).get('kind')

    sections = [
        ('Training', _training_section(artifact_dir, plots_dir)),
        ('Fidelity', _fidelity_section(artifact_dir)),
        ('Interpolation sweeps', _sweep_section(artifact_dir, plots_dir)),
    ]
    if kind in (None, 'multi-unseen'):
        sections.append(('Unseen architectures', _unseen_section(artifact_dir)))
    if kind in (None, 'single-sdf'):
        sections.append(('SDF interpolation', _sdf_section(artifact_dir)))
    if kind != 'single-sdf':
        sections.append(('Latent-space optimization', _lso_section(artifact_dir)))

    partial = any(body is None for _, body in sections)
    lines = ['# Experiment report', '']
    if kind:
        lines.append('Kind: `%s`' % kind)
    lines.append('Configuration hash: `%s`' % (config_hash or 'unknown'))
    lines.append('')
    if partial:
        lines.append('**Partial report:** some steps have not run.')
        lines.append('')
    for title, body in sections:
        lines.extend(['## %s' % title, '', body if body is not None else NOT_RUN, ''])
    path = os.path.join(artifact_dir, REPORT_NAME)
    with storage.atomic_write(path, 'w') as out:
        out.write('\n'.join(lines))
    logger.info('report written to %s%s', path, ' (partial)' if partial else '')
    return path
