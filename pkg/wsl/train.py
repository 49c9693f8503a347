# file wsl/train.py
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

"""Training loops and fidelity evaluation.

Three settings share one :class:`Trainer`:

 * :func:`train_single_arch_classification` -- predicted instances
   distil their own target instance on image batches
 * :func:`train_single_arch_sdf` -- predicted SirenMLPs regress their
   target's outputs on freshly drawn query points
 * :func:`train_multi_arch` -- predicted instances of several
   architectures distil a strong teacher, the classifier head recovers
   their architecture, and boundary pairs add interpolation terms

Target instances and the teacher are evaluated but never updated; only
the weight-space model is optimized.  Each epoch appends a row to
``metrics.csv``, writes ``last.ckpt`` and, when validation fidelity
improves, ``best.ckpt``.
"""

from collections import namedtuple
import dataclasses
import logging
import math
import os
from typing import Dict, Optional

import numpy
import pandas
from scipy import stats
import torch
from tqdm import tqdm

from wsl import archs, codec, sdf, storage
from wsl.datasets import cycle
from wsl.exceptions import DivergenceError, TrainingError
from wsl.losses import total_batch_loss, COMPONENTS
from wsl.models import load_model, model_hash, save_model

__all__ = ['TrainConfig', 'Target', 'InstanceBatcher', 'Trainer', 'FidelityRow',
           'FidelityReport', 'train_single_arch_classification', 'train_single_arch_sdf',
           'train_multi_arch', 'evaluate_fidelity', 'write_fidelity_csv', 'rank_correlations']

logger = logging.getLogger(__name__)

METRICS_NAME = 'metrics.csv'
LAST_CHECKPOINT = 'last.ckpt'
BEST_CHECKPOINT = 'best.ckpt'
OPTIMIZER_STATE = 'optimizer.pt'


@dataclasses.dataclass
class TrainConfig:
    """Weight-space model training options.

    :param epochs: passes over the training instances
    :param instance_repeats: visits of every instance per epoch, each
        with a new input batch
    :param instance_batch: instances per step
    :param lr: Adam learning rate
    :param schedule: ``cosine`` decay to zero, or ``constant``
    :param checkpoint_every: epochs between ``last.ckpt`` writes
    :param patience: epochs without validation improvement before
        stopping early; None disables early stopping
    :param val_batches: input batches used for validation fidelity
    :param sdf_points: query points per step (SDF)
    :param max_pairs: cap on boundary pairs per step
    :param class_weights: per-architecture oversampling factor
    :param allow_weak_teacher: train even if a zoo instance beats the teacher
    :param divergence_factor: validation loss above this multiple of the
        initial one counts as diverging
    :param divergence_patience: consecutive diverging validations before aborting
    """
    epochs: int = 50
    instance_repeats: int = 8
    instance_batch: int = 8
    lr: float = 1e-4
    schedule: str = 'cosine'
    checkpoint_every: int = 1
    patience: Optional[int] = 10
    val_batches: int = 4
    sdf_points: int = 4096
    max_pairs: Optional[int] = None
    class_weights: Optional[Dict[str, int]] = None
    allow_weak_teacher: bool = False
    divergence_factor: float = 10.0
    divergence_patience: int = 3

    def __post_init__(self):
        if self.epochs < 0 or self.instance_batch < 1 or self.instance_repeats < 1:
            raise ValueError('epochs, instance_batch and instance_repeats must be positive')
        if self.schedule not in ('cosine', 'constant'):
            raise ValueError('schedule must be cosine or constant')
        if self.lr <= 0:
            raise ValueError('lr must be positive')


Target = namedtuple('Target', ['record', 'instance'])


class InstanceBatcher(object):
    """Shuffled instance batches; every epoch visits each instance exactly
    ``repeats * weight`` times, so per-class ratios are exact.

    :param targets: list of :class:`Target`
    :param batch_size: instances per batch
    :param seed: shuffling seed (combined with the epoch number)
    :param repeats: visits per instance per epoch
    :param class_weights: optional ``{class_id: int}`` oversampling
    """

    def __init__(self, targets, batch_size, seed=0, repeats=1, class_weights=None):
        self.targets = list(targets)
        self.batch_size = batch_size
        self.seed = seed
        self.repeats = repeats
        self.class_weights = class_weights or {}

    def _pool(self):
        pool = []
        for index, target in enumerate(self.targets):
            weight = self.class_weights.get(target.instance.arch.class_id, 1)
            pool.extend([index] * (weight * self.repeats))
        return pool

    def __len__(self):
        return int(math.ceil(len(self._pool()) / float(self.batch_size)))

    def epoch(self, number):
        "Batches (lists of :class:`Target`) for one epoch."
        pool = numpy.array(self._pool())
        rng = numpy.random.default_rng([self.seed, number])
        order = pool[rng.permutation(len(pool))]
        for start in range(0, len(order), self.batch_size):
            yield [self.targets[i] for i in order[start:start + self.batch_size]]


def rank_correlations(target_metrics, predicted_metrics):
    "``(spearman, kendall)`` of two metric lists; NaN when undefined."
    if len(target_metrics) < 2 or len(set(target_metrics)) < 2 or \
            len(set(predicted_metrics)) < 2:
        return float('nan'), float('nan')
    spearman = stats.spearmanr(target_metrics, predicted_metrics)[0]
    kendall = stats.kendalltau(target_metrics, predicted_metrics)[0]
    return float(spearman), float(kendall)


FidelityRow = namedtuple('FidelityRow', ['id', 'class_id', 'target_metric', 'predicted_metric',
                                         'predicted_class_id', 'output_mse'])


class FidelityReport(object):
    "Paired target and predicted metrics with summary statistics."

    def __init__(self, rows):
        self.rows = list(rows)
        targets = [r.target_metric for r in self.rows]
        predicted = [r.predicted_metric for r in self.rows]
        self.spearman, self.kendall = rank_correlations(targets, predicted)
        self.mean_abs_gap = float(numpy.mean(numpy.abs(numpy.subtract(targets, predicted)))) \
            if self.rows else float('nan')
        self.class_accuracy = float(numpy.mean([r.class_id == r.predicted_class_id
                                                for r in self.rows])) if self.rows else float('nan')

    def to_frame(self):
        return pandas.DataFrame([r._asdict() for r in self.rows], columns=FidelityRow._fields)

    def summary(self):
        return {'spearman': self.spearman, 'kendall': self.kendall,
                'mean_abs_gap': self.mean_abs_gap, 'class_accuracy': self.class_accuracy,
                'count': len(self.rows)}


def _fixed_batches(loader, count, device):
    batches = []
    for index, (images, labels) in enumerate(loader):
        if index >= count:
            break
        batches.append((images.to(device), labels.to(device)))
    return batches


def _batches_accuracy(instance, batches):
    correct = total = 0
    with torch.no_grad():
        for images, labels in batches:
            correct += (archs.forward_logits(instance, images).argmax(dim=1) == labels).sum().item()
            total += len(labels)
    return correct / float(total) if total else 0.0


def evaluate_fidelity(model, targets, loader=None, device='cpu', max_batches=None, grid_res=32):
    """Compare target instances with their predicted instances.

    Classification: both are scored on the same test images (all of
    ``loader`` or its first ``max_batches``).  SDF: both are scored by
    grid MSE against the record's shape, and ``output_mse`` compares
    predicted and target outputs directly.

    :param targets: list of :class:`Target`
    :rtype: :class:`FidelityReport`
    """
    was_training = model.training
    model.eval()
    rows = []
    batches = None
    if loader is not None:
        batches = _fixed_batches(loader, max_batches if max_batches is not None else len(loader),
                                 device)
    points = sdf.grid_points(grid_res)
    with torch.no_grad():
        for target in targets:
            instance = target.instance.to(device)
            predicted = model.predict_instance(instance)
            if instance.arch.input_shape == (3,):
                target_out = sdf.field_values(instance, points)
                predicted_out = sdf.field_values(predicted, points)
                output_mse = float(torch.mean((target_out - predicted_out) ** 2))
                if target.record.shape is not None:
                    shape = sdf.shape_from_dict(target.record.shape)
                    target_metric = sdf.sdf_metrics(instance, shape, grid_res).mse
                    predicted_metric = sdf.sdf_metrics(predicted, shape, grid_res).mse
                else:
                    target_metric, predicted_metric = 0.0, output_mse
            else:
                target_metric = _batches_accuracy(instance, batches)
                predicted_metric = _batches_accuracy(predicted, batches)
                output_mse = float('nan')
            rows.append(FidelityRow(target.record.id, instance.arch.class_id, target_metric,
                                    predicted_metric, predicted.arch.class_id, output_mse))
    model.train(was_training)
    report = FidelityReport(rows)
    logger.info('fidelity on %d instances: %s', len(rows), report.summary())
    return report


def write_fidelity_csv(path, report, config_hash=None):
    frame = report.to_frame()
    frame['config_hash'] = config_hash
    with storage.atomic_write(path, 'w') as out:
        frame.to_csv(out, index=False)


class Trainer(object):
    """Optimize a :class:`~wsl.models.WeightSpaceModel` on a zoo.

    :param model: the weight-space model
    :param train_targets: list of :class:`Target` to learn from
    :param val_targets: list of :class:`Target` for validation (may be empty)
    :param cfg: :class:`TrainConfig`
    :param loss_cfg: :class:`~wsl.losses.LossConfig`
    :param out_dir: directory for checkpoints and ``metrics.csv``
    :param train_loader: image loader (classification)
    :param val_loader: image loader for validation (classification)
    :param teacher: teacher :class:`~wsl.archs.NetworkInstance` (several architectures)
    """

    def __init__(self, model, train_targets, val_targets, cfg, loss_cfg, out_dir,
                 train_loader=None, val_loader=None, teacher=None, seed=0, device='cpu',
                 config_hash=None):
        if not train_targets:
            raise TrainingError('no training instances')
        self.model = model.to(device)
        self.train_targets = [Target(t.record, t.instance.to(device)) for t in train_targets]
        self.val_targets = [Target(t.record, t.instance.to(device)) for t in val_targets or []]
        self.cfg = cfg
        self.loss_cfg = loss_cfg
        self.out_dir = out_dir
        self.train_loader = train_loader
        self.val_loader = val_loader
        self.teacher = teacher.to(device) if teacher is not None else None
        self.seed = seed
        self.device = device
        self.config_hash = config_hash
        self.sdf_mode = self.train_targets[0].instance.arch.input_shape == (3,)
        weights = None
        if cfg.class_weights:
            weights = dict((model.spec_for_name(name).class_id, w)
                           for name, w in cfg.class_weights.items())
        self.batcher = InstanceBatcher(self.train_targets, cfg.instance_batch, seed,
                                       cfg.instance_repeats, weights)
        self.optimizer = torch.optim.Adam(self.model.parameters(), lr=cfg.lr)
        total_steps = max(1, cfg.epochs * len(self.batcher))
        if cfg.schedule == 'cosine':
            self.scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(self.optimizer, total_steps)
        else:
            self.scheduler = torch.optim.lr_scheduler.LambdaLR(self.optimizer, lambda step: 1.0)
        self.step = 0
        self.epoch = 0
        self.best_fidelity = -float('inf')
        self.initial_val_loss = None
        self._diverging = 0
        self._stale = 0
        self._generator = torch.Generator().manual_seed(seed)
        self._val_inputs = None

    def path(self, name):
        return os.path.join(self.out_dir, name)

    def _inputs(self, batches):
        if self.sdf_mode:
            points = torch.rand(self.cfg.sdf_points, 3, generator=self._generator) * 2.0 - 1.0
            return points.to(self.device), None
        images, labels = next(batches)
        return images.to(self.device), labels.to(self.device)

    def _teacher_logits(self, inputs):
        if self.teacher is None:
            return None
        with torch.no_grad():
            return archs.forward_logits(self.teacher, inputs)

    def _batch_loss(self, targets, inputs, labels, components=None):
        return total_batch_loss(self.model, [t.instance for t in targets], inputs, labels,
                                self.loss_cfg, self._teacher_logits(inputs),
                                self.cfg.max_pairs, components)

    def validation_inputs(self):
        "Fixed validation inputs so that losses are comparable across epochs."
        if self._val_inputs is None:
            if self.sdf_mode:
                generator = torch.Generator().manual_seed(self.seed + 1)
                points = torch.rand(self.cfg.sdf_points, 3, generator=generator) * 2.0 - 1.0
                self._val_inputs = (points.to(self.device), None)
            else:
                loader = self.val_loader or self.train_loader
                images, labels = next(iter(loader))
                self._val_inputs = (images.to(self.device), labels.to(self.device))
        return self._val_inputs

    def validation_loss(self):
        targets = self.val_targets or self.train_targets
        inputs, labels = self.validation_inputs()
        self.model.eval()
        with torch.no_grad():
            loss = float(self._batch_loss(targets[:self.cfg.instance_batch], inputs, labels))
        self.model.train()
        return loss

    def validation_fidelity(self):
        """Higher is better: ``1 - mean accuracy gap`` for classifiers,
        minus the mean output MSE for SDF networks."""
        if not self.val_targets:
            return None
        report = evaluate_fidelity(self.model, self.val_targets, self.val_loader, self.device,
                                   max_batches=self.cfg.val_batches)
        if self.sdf_mode:
            return -float(numpy.mean([r.output_mse for r in report.rows]))
        return 1.0 - report.mean_abs_gap

    def check_divergence(self, val_loss):
        if not math.isfinite(val_loss):
            raise DivergenceError('validation loss is %s at step %d' % (val_loss, self.step))
        if self.initial_val_loss is None:
            self.initial_val_loss = val_loss
            return
        if val_loss > self.cfg.divergence_factor * self.initial_val_loss:
            self._diverging += 1
            logger.warning('validation loss %.4g exceeds %g x initial %.4g (%d/%d)', val_loss,
                           self.cfg.divergence_factor, self.initial_val_loss, self._diverging,
                           self.cfg.divergence_patience)
            if self._diverging >= self.cfg.divergence_patience:
                raise DivergenceError(
                    'training diverged at step %d: validation loss %.4g, initial %.4g' % (
                        self.step, val_loss, self.initial_val_loss))
        else:
            self._diverging = 0

    def save(self, name):
        save_model(self.path(name), self.model, config_hash=self.config_hash, step=self.step,
                   epoch=self.epoch, best_fidelity=self.best_fidelity,
                   initial_val_loss=self.initial_val_loss)
        if name == LAST_CHECKPOINT:
            with storage.atomic_write(self.path(OPTIMIZER_STATE)) as out:
                torch.save({'optimizer': self.optimizer.state_dict(),
                            'scheduler': self.scheduler.state_dict()}, out)

    def resume(self):
        "Restore state from ``last.ckpt``; returns False when there is none."
        if not os.path.exists(self.path(LAST_CHECKPOINT)):
            return False
        tensors, header = storage.read_checkpoint(self.path(LAST_CHECKPOINT))
        self.model.load_state_dict(tensors)
        self.model.to(self.device)
        self.step = header.get('step', 0)
        self.epoch = header.get('epoch', 0)
        best = header.get('best_fidelity')
        self.best_fidelity = best if best is not None else -float('inf')
        self.initial_val_loss = header.get('initial_val_loss')
        if os.path.exists(self.path(OPTIMIZER_STATE)):
            state = torch.load(self.path(OPTIMIZER_STATE), map_location=self.device)
            self.optimizer.load_state_dict(state['optimizer'])
            self.scheduler.load_state_dict(state['scheduler'])
        logger.info('resuming at epoch %d, step %d', self.epoch, self.step)
        return True

    def _append_metrics(self, row):
        path = self.path(METRICS_NAME)
        frame = pandas.DataFrame([row])
        frame.to_csv(path, mode='a', header=not os.path.exists(path), index=False)

    def run(self, resume=False):
        """Train for the configured epochs.

        :rtype: path of the best checkpoint (``last.ckpt`` without
            validation instances)
        :raises DivergenceError: on non-finite or persistently exploding losses
        """
        os.makedirs(self.out_dir, exist_ok=True)
        if not (resume and self.resume()):
            self.check_divergence(self.validation_loss())
        batches = cycle(self.train_loader) if self.train_loader is not None else None
        self.model.train()
        while self.epoch < self.cfg.epochs:
            components = dict((key, 0.0) for key in COMPONENTS)
            running = 0.0
            count = 0
            for batch in tqdm(self.batcher.epoch(self.epoch), total=len(self.batcher),
                              desc='epoch %d' % self.epoch, leave=False, disable=None):
                inputs, labels = self._inputs(batches)
                loss = self._batch_loss(batch, inputs, labels, components)
                if not torch.isfinite(loss):
                    raise DivergenceError('training loss is %s at step %d' % (
                        float(loss), self.step))
                self.optimizer.zero_grad()
                loss.backward()
                self.optimizer.step()
                self.scheduler.step()
                self.step += 1
                running += float(loss)
                count += 1
            self.epoch += 1
            val_loss = self.validation_loss()
            self.check_divergence(val_loss)
            fidelity = self.validation_fidelity()
            row = {'epoch': self.epoch, 'step': self.step, 'loss': running / max(count, 1)}
            row.update((key, value / max(count, 1)) for key, value in components.items())
            row.update({'val_loss': val_loss, 'val_fidelity': fidelity,
                        'config_hash': self.config_hash})
            self._append_metrics(row)
            logger.info('epoch %d step %d: loss %.4f, val loss %.4f, val fidelity %s',
                        self.epoch, self.step, row['loss'], val_loss, fidelity)
            if fidelity is not None and fidelity > self.best_fidelity:
                self.best_fidelity = fidelity
                self._stale = 0
                self.save(BEST_CHECKPOINT)
            elif fidelity is not None:
                self._stale += 1
            if self.epoch % self.cfg.checkpoint_every == 0 or self.epoch == self.cfg.epochs:
                self.save(LAST_CHECKPOINT)
            if self.cfg.patience is not None and self._stale >= self.cfg.patience:
                logger.info('no validation improvement for %d epochs; stopping', self._stale)
                self.save(LAST_CHECKPOINT)
                break
        if not os.path.exists(self.path(LAST_CHECKPOINT)):
            self.save(LAST_CHECKPOINT)
        if os.path.exists(self.path(BEST_CHECKPOINT)):
            return self.path(BEST_CHECKPOINT)
        return self.path(LAST_CHECKPOINT)


def _check_frozen(targets, teacher, before):
    after = [_instance_hash(t.instance) for t in targets]
    if teacher is not None:
        after.append(_instance_hash(teacher))
    if after != before:
        raise TrainingError('a target or teacher instance changed during training')


def _instance_hash(instance):
    prep = codec.flatten(instance.detach().to('cpu').params, instance.layout)
    return hash(prep.values.numpy().tobytes())


def _run(trainer, resume):
    before = [_instance_hash(t.instance) for t in trainer.train_targets]
    if trainer.teacher is not None:
        before.append(_instance_hash(trainer.teacher))
    model_before = model_hash(trainer.model)
    path = trainer.run(resume)
    _check_frozen(trainer.train_targets, trainer.teacher, before)
    logger.debug('model %s -> %s', model_before[:8], model_hash(trainer.model)[:8])
    return path


def train_single_arch_classification(model, train_targets, val_targets, train_loader,
                                     val_loader, cfg, loss_cfg, out_dir, seed=0, device='cpu',
                                     config_hash=None, resume=False):
    """Train on a zoo of one classification architecture.

    :rtype: path of the best checkpoint
    :raises TrainingError: when the zoo mixes architectures
    """
    if len(set(t.instance.arch.name for t in train_targets)) != 1 or model.multi_arch:
        raise TrainingError('single-architecture training needs one architecture')
    trainer = Trainer(model, train_targets, val_targets, cfg, loss_cfg, out_dir, train_loader,
                      val_loader, None, seed, device, config_hash)
    return _run(trainer, resume)


def train_single_arch_sdf(model, train_targets, val_targets, cfg, loss_cfg, out_dir, seed=0,
                          device='cpu', config_hash=None, resume=False):
    """Train on a zoo of SirenMLPs; outputs are compared on random points.

    :rtype: path of the best checkpoint
    """
    if any(t.instance.arch.input_shape != (3,) for t in train_targets):
        raise TrainingError('SDF training needs SirenMLP instances')
    if loss_cfg.pred_loss != 'mse':
        loss_cfg = dataclasses.replace(loss_cfg, pred_loss='mse')
    trainer = Trainer(model, train_targets, val_targets, cfg, loss_cfg, out_dir, None, None,
                      None, seed, device, config_hash)
    return _run(trainer, resume)


def train_multi_arch(model, train_targets, val_targets, train_loader, val_loader, teacher,
                     cfg, loss_cfg, out_dir, seed=0, device='cpu', config_hash=None,
                     teacher_metric=None, resume=False):
    """Train one latent space for several architectures.

    :param teacher: distillation teacher; its accuracy (``teacher_metric``)
        must exceed every zoo instance's unless ``allow_weak_teacher``
    :rtype: path of the best checkpoint
    :raises TrainingError: when boundary architectures are missing from
        the zoo or the teacher is weaker than a zoo instance
    """
    if not model.multi_arch:
        raise TrainingError('multi-architecture training needs a multi-architecture model')
    present = set(t.instance.arch.class_id for t in train_targets)
    low, high = model.class_ids[0], model.class_ids[-1]
    if len(present) < 2 or low not in present or high not in present:
        raise TrainingError('training zoo must include ClassIds %d and %d, has %s' % (
            low, high, sorted(present)))
    if teacher is None:
        raise TrainingError('multi-architecture training needs a teacher')
    if teacher_metric is not None:
        best = max(t.record.metric for t in train_targets if t.record.metric is not None)
        if teacher_metric <= best:
            message = 'teacher accuracy %.4f does not exceed best zoo instance %.4f' % (
                teacher_metric, best)
            if not cfg.allow_weak_teacher:
                raise TrainingError(message)
            logger.warning(message)
    trainer = Trainer(model, train_targets, val_targets, cfg, loss_cfg, out_dir, train_loader,
                      val_loader, teacher, seed, device, config_hash)
    return _run(trainer, resume)


def load_checkpoint(path, registry, device=None):
    "Model stored by a trainer; see :func:`wsl.models.load_model`."
    return load_model(path, registry, device)
