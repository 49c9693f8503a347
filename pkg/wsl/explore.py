# file wsl/explore.py
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

"""Studies of a trained latent space.

Everything here works on a frozen :class:`~wsl.models.WeightSpaceModel`:

 * :func:`latent_sweep` decodes embeddings interpolated between two
   anchors; :func:`weight_space_sweep` is the baseline that blends the
   anchors' raw parameters instead
 * :func:`sample_unseen` draws an instance of an architecture that was
   never shown to the encoder, from two boundary instances
 * :func:`lso` improves a decoded instance by gradient descent on its
   embedding

Metrics are plain callables from an instance to a number; see
:func:`accuracy_metric` and :func:`sdf_metric`.
"""

from contextlib import contextmanager
import dataclasses
import logging
import math
from typing import List, Optional

import numpy
import pandas
import torch

from wsl import archs, codec, sdf, storage
from wsl.datasets import cycle
from wsl.exceptions import ConfigError, LsoAborted, ShapeError
from wsl.losses import class_ce, kd_total, interp_embedding, task_ce, DEFAULT_LOSS

__all__ = ['SweepConfig', 'SweepResult', 'LsoConfig', 'LsoResult', 'frozen', 'gamma_grid',
           'accuracy_metric', 'sdf_metric', 'decode_instance', 'latent_points', 'latent_sweep',
           'weight_space_sweep', 'unseen_gamma', 'sample_unseen', 'lso_objective', 'lso',
           'write_sweep_csv', 'read_sweep_csv', 'write_trace_csv', 'read_trace_csv']

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class SweepConfig:
    "Interpolation sweeps: ``steps`` uniform factors from 0 to 1."
    steps: int = 33
    max_batches: Optional[int] = None

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError('a sweep needs at least 2 steps')


@dataclasses.dataclass
class SweepResult:
    """Metric along an interpolation path.

    :param gammas: strictly increasing factors in ``[0, 1]``
    :param metrics: metric at every factor
    :param predicted_class_ids: architecture decoded at every factor
        (multi-architecture latent sweeps only)
    :param mode: ``latent`` or ``weight-space``
    """
    gammas: List[float]
    metrics: List[float]
    predicted_class_ids: Optional[List[int]] = None
    mode: str = 'latent'

    def __post_init__(self):
        if len(self.gammas) != len(self.metrics):
            raise ValueError('gammas and metrics differ in length')
        if self.predicted_class_ids is not None and \
                len(self.predicted_class_ids) != len(self.gammas):
            raise ValueError('gammas and predicted_class_ids differ in length')
        if any(not 0.0 <= g <= 1.0 for g in self.gammas) or \
                any(b <= a for a, b in zip(self.gammas, self.gammas[1:])):
            raise ValueError('gammas must increase strictly within [0, 1]')
        if self.mode not in ('latent', 'weight-space'):
            raise ValueError('mode must be latent or weight-space')

    def __len__(self):
        return len(self.gammas)


@dataclasses.dataclass
class LsoConfig:
    """Latent-space optimization.

    :param steps: gradient steps on the embedding
    :param lr: step size of plain gradient descent
    :param target_class_id: architecture the embedding is anchored to
        (multi-architecture); defaults to the initial instance's
    :param objective: ``kd`` or ``kd+class``
    :param eval_every: steps between validation evaluations
    :param val_batches: held-out training images used for checkpoint
        selection, in evaluation batches
    """
    steps: int = 200
    lr: float = 1e-2
    target_class_id: Optional[int] = None
    objective: str = 'kd'
    eval_every: int = 10
    val_batches: Optional[int] = 4

    def __post_init__(self):
        if self.steps < 0 or self.eval_every < 1:
            raise ValueError('steps must be >= 0 and eval_every >= 1')
        if self.objective not in ('kd', 'kd+class'):
            raise ValueError('objective must be kd or kd+class')
        if not self.lr > 0:
            raise ValueError('lr must be positive')


@dataclasses.dataclass
class LsoResult:
    "Best embedding found by :func:`lso`, its decoded instance and the step trace."
    embedding: torch.Tensor
    instance: archs.NetworkInstance
    trace: list
    initial_metric: Optional[float] = None
    best_metric: Optional[float] = None
    initial_test: Optional[float] = None
    best_test: Optional[float] = None


@contextmanager
def frozen(model):
    """Disable gradients on every model weight and switch to eval mode
    for the duration of the block; previous settings are restored."""
    previous = [(p, p.requires_grad) for p in model.parameters()]
    was_training = model.training
    for param, _ in previous:
        param.requires_grad_(False)
    model.eval()
    try:
        yield model
    finally:
        for param, flag in previous:
            param.requires_grad_(flag)
        model.train(was_training)


def gamma_grid(steps):
    if steps < 2:
        raise ValueError('a sweep needs at least 2 steps')
    return [float(g) for g in numpy.linspace(0.0, 1.0, steps)]


def accuracy_metric(loader, device=None, max_batches=None):
    "Accuracy of an instance on ``loader``."
    def metric(instance):
        return archs.evaluate_accuracy(instance, loader, device, max_batches)
    return metric


def sdf_metric(shape, grid_res=32, kind='mse'):
    """Grid quality of a SirenMLP instance against ``shape``.

    :param kind: ``mse`` (lower is better) or ``sign_iou``
    """
    if kind not in ('mse', 'sign_iou'):
        raise ValueError('kind must be mse or sign_iou')

    def metric(instance):
        return getattr(sdf.sdf_metrics(instance, shape, grid_res), kind)
    return metric


def decode_instance(model, embedding, spec=None):
    "Detached instance decoded from one embedding."
    with torch.no_grad():
        spec, params = model.predicted_params(embedding, spec)
    return archs.NetworkInstance(spec, params).detach()


def _prep(model, instance):
    return codec.flatten(instance.params, model.layout(instance.arch))


def latent_points(model, anchor_a, anchor_b, gammas, metric):
    """Metric and decoded ClassId at each factor, in the order given.

    :rtype: list of ``(metric, class_id)``
    """
    points = []
    with frozen(model):
        e_a, e_b = model.encode(_prep(model, anchor_a)), model.encode(_prep(model, anchor_b))
        for gamma in gammas:
            instance = decode_instance(model, interp_embedding(e_a, e_b, gamma))
            points.append((float(metric(instance)), instance.arch.class_id))
    return points


def latent_sweep(model, anchor_a, anchor_b, metric, steps=33):
    """Decode embeddings interpolated between two anchors.

    Both anchors are encoded once; each factor's embedding is decoded
    (into the classifier's architecture when the model knows several) and
    scored with ``metric``.

    :rtype: :class:`SweepResult` with mode ``latent``
    """
    gammas = gamma_grid(steps)
    points = latent_points(model, anchor_a, anchor_b, gammas, metric)
    class_ids = [c for _, c in points] if model.multi_arch else None
    logger.info('latent sweep %s -> %s: %d points', anchor_a.arch.name, anchor_b.arch.name,
                len(gammas))
    return SweepResult(gammas, [m for m, _ in points], class_ids, 'latent')


def weight_space_sweep(anchor_a, anchor_b, metric, steps=33):
    """Blend two anchors' parameters directly.

    :rtype: :class:`SweepResult` with mode ``weight-space``
    :raises ShapeError: when the anchors are different architectures
    """
    if anchor_a.arch.name != anchor_b.arch.name:
        raise ShapeError('cannot blend %s with %s' % (anchor_a.arch.name, anchor_b.arch.name))
    gammas = gamma_grid(steps)
    metrics = []
    for gamma in gammas:
        params = archs.blend_params(anchor_a.params, anchor_b.params, gamma)
        metrics.append(float(metric(archs.NetworkInstance(anchor_a.arch, params))))
    return SweepResult(gammas, metrics, None, 'weight-space')


def unseen_gamma(class_a, class_b, target_class_id):
    """Factor placing the interpolated ClassId on ``target_class_id``.

    :raises ConfigError: unless the target lies strictly between the anchors
    """
    low, high = sorted((class_a, class_b))
    if not low < target_class_id < high:
        raise ConfigError('target ClassId %s is not between %s and %s' % (
            target_class_id, class_a, class_b),
            [('target_class_id', 'must lie strictly between %d and %d' % (low, high))])
    return (target_class_id - class_a) / float(class_b - class_a)


def sample_unseen(model, boundary_a, boundary_b, target_class_id):
    """Instance of an interior architecture drawn from two boundary instances.

    :rtype: :class:`~wsl.archs.NetworkInstance` of the target architecture
    """
    gamma = unseen_gamma(boundary_a.arch.class_id, boundary_b.arch.class_id, target_class_id)
    with frozen(model):
        embedding = interp_embedding(model.encode(_prep(model, boundary_a)),
                                     model.encode(_prep(model, boundary_b)), gamma)
        instance = decode_instance(model, embedding, model.spec_for(target_class_id))
    logger.info('sampled %s at gamma %.3f', instance.arch.name, gamma)
    return instance


def lso_objective(model, embedding, inputs, labels, teacher_logits, cfg, loss_cfg=None,
                  class_id=None):
    """Distillation loss of the instance decoded from ``embedding``.

    The decoded architecture follows the live classifier argmax; with
    the ``kd+class`` objective, the classification loss towards
    ``class_id`` is added.  Without teacher logits only the task loss is
    used.
    """
    loss_cfg = loss_cfg or DEFAULT_LOSS
    spec, params = model.predicted_params(embedding)
    logits = archs.forward_logits(archs.NetworkInstance(spec, params), inputs)
    if teacher_logits is None:
        loss = task_ce(logits, labels)
    else:
        loss = kd_total(logits, teacher_logits, labels, loss_cfg)
    if cfg.objective == 'kd+class':
        loss = loss + class_ce(model.classify_arch(embedding), model.class_index(class_id))
    return loss


def lso(model, initial, teacher, train_loader, cfg=None, loss_cfg=None, val_metric=None,
        device='cpu', seed=0, test_metric=None):
    """Latent-space optimization of one instance.

    The embedding of ``initial`` is updated by plain gradient descent on
    :func:`lso_objective` over training batches; the model stays frozen.
    Every ``eval_every`` steps (and at the end) the decoded instance is
    scored with ``val_metric`` and the best optimized checkpoint is kept.
    The starting point itself is never selected once a step was taken.

    ``val_metric`` should not see the data ``test_metric`` scores;
    the final comparison uses ``test_metric`` on the decoded starting
    instance and on the selected one.

    :param teacher: :class:`~wsl.archs.NetworkInstance` or None
    :param val_metric: callable instance -> higher-is-better number;
        defaults to the negated training loss
    :param test_metric: optional callable instance -> number reported
        as ``initial_test`` and ``best_test``
    :rtype: :class:`LsoResult`
    :raises ConfigError: on ``kd+class`` with a single-architecture model
    :raises LsoAborted: on a non-finite loss; carries the trace so far
    """
    cfg = cfg or LsoConfig()
    if cfg.objective == 'kd+class' and not model.multi_arch:
        raise ConfigError('kd+class needs a multi-architecture model',
                          [('lso.objective', 'kd+class requires a multi-architecture model')])
    class_id = cfg.target_class_id if cfg.target_class_id is not None else initial.arch.class_id
    teacher = teacher.to(device) if teacher is not None else None
    trace = []
    with frozen(model), torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        start = model.encode(_prep(model, initial.to(device))).detach()
        embedding = start.clone().requires_grad_(True)
        optimizer = torch.optim.SGD([embedding], lr=cfg.lr)
        batches = cycle(train_loader)

        def score(loss_value):
            instance = decode_instance(model, embedding.detach())
            metric = float(val_metric(instance)) if val_metric else -loss_value
            return instance, metric

        start_instance = decode_instance(model, start)
        initial_metric = float(val_metric(start_instance)) if val_metric else None
        best_instance, best_metric = start_instance, None
        best_embedding = start.clone()
        trace.append((0, None, initial_metric))
        for step in range(1, cfg.steps + 1):
            images, labels = next(batches)
            images, labels = images.to(device), labels.to(device)
            teacher_logits = None
            if teacher is not None:
                with torch.no_grad():
                    teacher_logits = archs.forward_logits(teacher, images)
            loss = lso_objective(model, embedding, images, labels, teacher_logits, cfg,
                                 loss_cfg, class_id)
            value = float(loss)
            if not math.isfinite(value):
                trace.append((step, value, None))
                raise LsoAborted('non-finite LSO loss at step %d' % step, trace)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            metric = None
            if step % cfg.eval_every == 0 or step == cfg.steps:
                instance, metric = score(value)
                if best_metric is None or metric > best_metric:
                    best_instance, best_metric = instance, metric
                    best_embedding = embedding.detach().clone()
            trace.append((step, value, metric if val_metric else None))
            logger.debug('lso step %d: loss %.4f', step, value)
    if cfg.steps == 0:
        best_metric = initial_metric
    best_metric = best_metric if val_metric else None
    initial_test = best_test = None
    if test_metric is not None:
        initial_test = float(test_metric(start_instance))
        best_test = float(test_metric(best_instance))
    logger.info('lso %s: %s -> %s (test %s -> %s)', initial.arch.name, initial_metric,
                best_metric, initial_test, best_test)
    return LsoResult(best_embedding, best_instance, trace, initial_metric, best_metric,
                     initial_test, best_test)


def write_sweep_csv(path, result, config_hash=None):
    "``gamma,metric,class_id,mode,config_hash`` rows."
    frame = pandas.DataFrame({
        'gamma': result.gammas,
        'metric': result.metrics,
        'class_id': result.predicted_class_ids or [None] * len(result),
        'mode': result.mode,
        'config_hash': config_hash,
    })
    with storage.atomic_write(path, 'w') as out:
        frame.to_csv(out, index=False)


def read_sweep_csv(path):
    "Read a sweep written by :func:`write_sweep_csv`; returns ``(result, config_hash)``."
    frame = pandas.read_csv(path)
    class_ids = None
    if frame['class_id'].notna().all():
        class_ids = [int(c) for c in frame['class_id']]
    mode = frame['mode'].iloc[0] if len(frame) else 'latent'
    config_hash = frame['config_hash'].iloc[0] if len(frame) else None
    if isinstance(config_hash, float):
        config_hash = None
    return SweepResult([float(g) for g in frame['gamma']], [float(m) for m in frame['metric']],
                       class_ids, mode), config_hash


def write_trace_csv(path, trace, config_hash=None):
    "``step,loss,accuracy,config_hash`` rows of an LSO trace."
    frame = pandas.DataFrame(trace, columns=['step', 'loss', 'accuracy'])
    frame['config_hash'] = config_hash
    with storage.atomic_write(path, 'w') as out:
        frame.to_csv(out, index=False)


def read_trace_csv(path):
    return pandas.read_csv(path)
