# file wsl/losses.py
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

"""Training objectives.

Predicted instances are trained by distillation rather than by
reconstructing weights: their outputs are compared with those of the
target instance (single architecture) or of a strong teacher network
(several architectures).  With several architectures, each embedding
must also reveal its architecture through :func:`class_ce`, and
embeddings interpolated between the smallest and largest architecture
must decode into working instances of the architectures in between
(:func:`interpolation_loss`).

All losses are sums or batch means of differentiable torch operations;
they do not keep state.
"""

from collections import namedtuple
import dataclasses
import logging
import math
from typing import Optional, Tuple

import torch
import torch.nn.functional as F

from wsl import archs, codec
from wsl.exceptions import LossError

__all__ = ['LossConfig', 'DEFAULT_LOSS', 'BoundaryPair', 'kd_kl', 'mse_outputs',
           'task_ce', 'kd_total', 'soft_class_target', 'class_ce', 'interp_embedding',
           'interpolated_class', 'gamma_set', 'interpolation_loss', 'boundary_pairs',
           'instance_loss', 'total_batch_loss']

logger = logging.getLogger(__name__)

COMPONENTS = ('pred', 'task', 'class', 'interp')

# tolerance for treating an interpolated ClassId as an integer
_INTEGER_TOL = 1e-6


@dataclasses.dataclass
class LossConfig:
    """Loss weights and switches.

    :param temperature: distillation temperature T
    :param alpha: weight of the distillation term against the task term
    :param kl_reverse: measure divergence of the target from the
        prediction instead of the prediction from the target
    :param pred_loss: ``kl`` for logits, ``mse`` for regressed outputs
    :param use_class: add the architecture classification term
    :param use_interp: add interpolation terms for boundary pairs
    :param gamma_set: interpolation factors; defaults to the interior
        fractions of the registered ClassIds
    :param teacher_ref: id of the teacher instance record
    """
    temperature: float
    alpha: float
    kl_reverse: bool = False
    pred_loss: str = 'kl'
    use_class: bool = True
    use_interp: bool = True
    gamma_set: Optional[Tuple[float, ...]] = None
    teacher_ref: Optional[str] = None

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError('temperature must be positive')
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError('alpha must be in [0, 1]')
        if self.pred_loss not in ('kl', 'mse'):
            raise ValueError('pred_loss must be kl or mse')
        if self.gamma_set is not None:
            for gamma in self.gamma_set:
                if not 0.0 < gamma < 1.0:
                    raise ValueError('gamma_set values must be in (0, 1), got %s' % gamma)

    def gammas(self, num_classes):
        "Interpolation factors for a model with ``num_classes`` architectures."
        if self.gamma_set is not None:
            return list(self.gamma_set)
        return gamma_set(num_classes)


DEFAULT_LOSS = LossConfig(temperature=4.0, alpha=0.9)


BoundaryPair = namedtuple('BoundaryPair', ['embedding_a', 'class_a', 'embedding_b', 'class_b'])


def _add(components, key, value):
    if components is not None:
        components[key] = components.get(key, 0.0) + float(value.detach())


def kd_kl(p_logits, t_logits, temperature, reverse=False):
    """Distillation divergence between softened distributions, times ``T**2``.

    By default this is ``KL(softmax(t/T) || softmax(p/T))`` averaged over
    the batch; gradients reach ``p_logits`` only.

    :param reverse: compute ``KL(softmax(p/T) || softmax(t/T))`` instead
    :raises LossError: on shape mismatch or ``temperature <= 0``
    """
    if not temperature > 0:
        raise LossError('temperature must be positive, got %s' % temperature)
    if p_logits.shape != t_logits.shape:
        raise LossError('logit shapes differ: %s vs %s' % (tuple(p_logits.shape),
                                                            tuple(t_logits.shape)))
    if p_logits.dim() == 1:
        p_logits, t_logits = p_logits[None], t_logits[None]
    log_p = F.log_softmax(p_logits / temperature, dim=-1)
    log_t = F.log_softmax(t_logits.detach() / temperature, dim=-1)
    if reverse:
        div = F.kl_div(log_t, log_p, reduction='batchmean', log_target=True)
    else:
        div = F.kl_div(log_p, log_t, reduction='batchmean', log_target=True)
    return div * temperature ** 2


def mse_outputs(y_p, y_t):
    "Mean squared difference between predicted and target outputs."
    if y_p.shape != y_t.shape:
        raise LossError('output shapes differ: %s vs %s' % (tuple(y_p.shape), tuple(y_t.shape)))
    if y_p.numel() == 0:
        raise LossError('mse_outputs on an empty batch')
    return F.mse_loss(y_p, y_t.detach())


def task_ce(p_logits, labels):
    """Mean cross-entropy against ground-truth labels.

    :raises LossError: on labels outside ``[0, classes)``
    """
    num_classes = p_logits.shape[-1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= num_classes):
        raise LossError('labels must be in [0, %d)' % num_classes)
    return F.cross_entropy(p_logits, labels)


def kd_total(p_logits, teacher_logits, labels, cfg, components=None):
    "``alpha * kd_kl(p, teacher) + (1 - alpha) * task_ce(p, labels)``."
    pred = kd_kl(p_logits, teacher_logits, cfg.temperature, cfg.kl_reverse)
    task = task_ce(p_logits, labels)
    _add(components, 'pred', cfg.alpha * pred)
    _add(components, 'task', (1.0 - cfg.alpha) * task)
    return cfg.alpha * pred + (1.0 - cfg.alpha) * task


def soft_class_target(target, num_classes):
    """Label distribution for an integer or fractional ClassId.

    A fractional target ``t`` puts weight ``ceil(t) - t`` on ``floor(t)``
    and ``t - floor(t)`` on ``ceil(t)``.

    :raises LossError: on a target outside ``[0, num_classes - 1]``
    """
    target = float(target)
    if not 0.0 <= target <= num_classes - 1 or math.isnan(target):
        raise LossError('class target %s outside [0, %d]' % (target, num_classes - 1))
    soft = torch.zeros(num_classes)
    low, high = int(math.floor(target)), int(math.ceil(target))
    if low == high:
        soft[low] = 1.0
    else:
        soft[low] = high - target
        soft[high] = target - low
    return soft


def class_ce(c_p_logits, target):
    """Cross-entropy of architecture logits against an integer or soft ClassId.

    :param c_p_logits: logits of one embedding (``A``) or of a batch (``B x A``)
    :param target: ClassId (int or float) or a sequence of them for a batch
    """
    num_classes = c_p_logits.shape[-1]
    if c_p_logits.dim() == 1:
        soft = soft_class_target(target, num_classes).to(c_p_logits)
        return -(soft * F.log_softmax(c_p_logits, dim=-1)).sum()
    soft = torch.stack([soft_class_target(t, num_classes) for t in target]).to(c_p_logits)
    return -(soft * F.log_softmax(c_p_logits, dim=-1)).sum(dim=-1).mean()


def interp_embedding(e_a, e_b, gamma):
    "``(1 - gamma) * e_a + gamma * e_b``."
    if e_a.shape != e_b.shape:
        raise LossError('embedding shapes differ: %s vs %s' % (tuple(e_a.shape), tuple(e_b.shape)))
    if not 0.0 <= gamma <= 1.0:
        raise LossError('gamma must be in [0, 1], got %s' % gamma)
    return (1.0 - gamma) * e_a + gamma * e_b


def interpolated_class(class_a, class_b, gamma):
    return (1.0 - gamma) * class_a + gamma * class_b


def gamma_set(num_classes):
    """Interior interpolation factors ``i / (A - 1)`` for ``i = 1 .. A - 2``.

    :raises LossError: when fewer than two architectures are given
    """
    if num_classes < 2:
        raise LossError('interpolation needs at least two architectures, got %d' % num_classes)
    return [i / float(num_classes - 1) for i in range(1, num_classes - 1)]


def _nearest_class(target):
    nearest = int(round(target))
    return nearest, abs(target - nearest) < _INTEGER_TOL


def _decoded_logits(model, spec, embedding_or_prep, inputs):
    values = embedding_or_prep if embedding_or_prep.dim() == 2 else model.decode(embedding_or_prep)
    params = codec.load(values, model.layout(spec))
    return archs.forward_logits(archs.NetworkInstance(spec, params), inputs)


def interpolation_loss(model, pair, gamma, inputs, labels, teacher_logits, cfg, components=None):
    """Class consistency plus distillation at an interpolated embedding.

    The embedding ``(1 - gamma) * e_a + gamma * e_b`` is decoded and
    loaded as the architecture whose ClassId equals the interpolated
    ClassId (rounded when ``gamma`` does not land on a ClassId).

    :param model: multi-architecture :class:`~wsl.models.WeightSpaceModel`
    :param pair: :class:`BoundaryPair` of the smallest and largest ClassId
    :raises LossError: when the pair is not a boundary pair
    """
    low, high = model.class_ids[0], model.class_ids[-1]
    if (pair.class_a, pair.class_b) != (low, high):
        raise LossError('interpolation needs a (%d, %d) boundary pair, got (%d, %d)' % (
            low, high, pair.class_a, pair.class_b))
    embedding = interp_embedding(pair.embedding_a, pair.embedding_b, gamma)
    target = interpolated_class(pair.class_a, pair.class_b, gamma)
    class_id, exact = _nearest_class(target)
    loss = 0.0
    if cfg.use_class:
        logits = model.classify_arch(embedding)
        # ClassIds may be sparse; targets are classifier indices
        index_target = model.class_index(class_id) if exact else target
        loss = class_ce(logits, index_target)
        _add(components, 'interp', loss)
    p_logits = _decoded_logits(model, model.spec_for(class_id), embedding, inputs)
    kd = kd_total(p_logits, teacher_logits, labels, cfg)
    _add(components, 'interp', kd)
    return loss + kd


def boundary_pairs(instances, embeddings, model, max_pairs=None):
    "Every (smallest ClassId, largest ClassId) pair of instances in a batch."
    low, high = model.class_ids[0], model.class_ids[-1]
    lows = [i for i, inst in enumerate(instances) if inst.arch.class_id == low]
    highs = [i for i, inst in enumerate(instances) if inst.arch.class_id == high]
    pairs = [BoundaryPair(embeddings[i], low, embeddings[j], high) for i in lows for j in highs]
    if max_pairs is not None:
        pairs = pairs[:max_pairs]
    return pairs


def instance_loss(model, instance, prep, embedding, inputs, labels, cfg,
                  teacher_logits=None, components=None):
    """Loss of one target instance.

    Single architecture: the predicted instance distils the target
    instance itself (KL on logits or MSE on regressed outputs).  Several
    architectures: the predicted instance, loaded as the target's
    architecture, distils the teacher and is scored on the labels, and
    the classifier must recover the target's ClassId.

    :param prep: decoded matrix for this instance
    """
    spec = instance.arch
    p_out = _decoded_logits(model, spec, prep, inputs)
    if not model.multi_arch:
        with torch.no_grad():
            t_out = archs.forward_logits(instance, inputs)
        if cfg.pred_loss == 'mse':
            loss = mse_outputs(p_out, t_out)
        else:
            loss = kd_kl(p_out, t_out, cfg.temperature, cfg.kl_reverse)
        _add(components, 'pred', loss)
        return loss
    if teacher_logits is None:
        raise LossError('multi-architecture losses need teacher logits')
    loss = kd_total(p_out, teacher_logits, labels, cfg, components)
    if cfg.use_class:
        cls = class_ce(model.classify_arch(embedding), model.class_index(spec.class_id))
        _add(components, 'class', cls)
        loss = loss + cls
    return loss


def total_batch_loss(model, instances, inputs, labels, cfg, teacher_logits=None,
                     max_pairs=None, components=None):
    """Sum of per-instance losses and, with several architectures, of
    interpolation losses over every boundary pair and factor.

    :param model: :class:`~wsl.models.WeightSpaceModel`
    :param instances: list of target :class:`~wsl.archs.NetworkInstance`
    :param inputs: input batch shared by every instance
    :param labels: ground-truth labels of ``inputs`` (classification)
    :param teacher_logits: teacher outputs on ``inputs`` (several architectures)
    :param components: optional dict filled with ``pred``, ``task``,
        ``class`` and ``interp`` sums
    :raises LossError: on an empty instance batch
    """
    if not instances:
        raise LossError('total_batch_loss on an empty instance batch')
    if components is not None:
        for key in COMPONENTS:
            components.setdefault(key, 0.0)
    embeddings = model.embed_instances(instances)
    preps = model.decode(embeddings)
    total = 0.0
    for index, instance in enumerate(instances):
        total = total + instance_loss(model, instance, preps[index], embeddings[index], inputs,
                                      labels, cfg, teacher_logits, components)
    if model.multi_arch and cfg.use_interp:
        pairs = boundary_pairs(instances, embeddings, model, max_pairs)
        gammas = cfg.gammas(len(model.specs))
        if not pairs:
            logger.warning('no boundary pair in batch; interpolation terms skipped')
        for pair in pairs:
            for gamma in gammas:
                total = total + interpolation_loss(model, pair, gamma, inputs, labels,
                                                   teacher_logits, cfg, components)
    return total
