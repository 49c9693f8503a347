# file wsl/zoo.py
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

"""Populations of trained instances.

A zoo is a directory holding a ``manifest.json`` and one parameter
matrix file per instance under ``weights/``.  The manifest lists an
:class:`InstanceRecord` for every instance (architecture, seed, training
budget, measured metric and split) and is rewritten after every new
instance, so an interrupted build picks up where it stopped.

Classification zoos are either *performance-diverse* (each instance gets
a training budget drawn log-uniformly, spreading accuracies from near
chance to near the best attainable) or *converged* (every instance gets
the full budget).  SDF zoos hold one SirenMLP per shape.
"""

import dataclasses
import json
import logging
import math
import os
from typing import Dict, Optional

import numpy
import torch
from tqdm import tqdm

from wsl import archs, codec, sdf, storage
from wsl.datasets import cycle
from wsl.exceptions import DivergenceError, FormatError, ZooError
from wsl.query import RecordQuerySet

__all__ = ['ZooConfig', 'TeacherConfig', 'TrainRecipe', 'InstanceRecord', 'ZooManifest',
           'train_instance', 'build_classification_zoo', 'build_teacher', 'build_sdf_zoo',
           'split_manifest', 'verify_manifest', 'manifest_stats', 'load_instance', 'load_teacher',
           'MANIFEST_NAME']

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'
SPLITS = ('train', 'val', 'test')
PERFORMANCE_DIVERSE = 'performance-diverse'
CONVERGED = 'converged'


@dataclasses.dataclass
class TrainRecipe:
    """Instance training recipe: SGD with momentum, learning rate
    divided by 10 at half and at three quarters of the budget."""
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    milestones: tuple = (0.5, 0.75)


@dataclasses.dataclass
class ZooConfig:
    """How to build or find a zoo.

    :param registry: ``classification`` or ``sdf``
    :param counts: instances per architecture name
    :param mode: ``performance-diverse`` or ``converged``
    :param min_steps: smallest training budget (performance-diverse)
    :param max_steps: full training budget
    :param split: instances per split
    :param class_split: per-architecture split sizes, overriding ``split``
    :param include_flagged: let flagged records into splits
    :param shapes: number of synthetic chairs (SDF zoos)
    :param path: existing manifest to use instead of building
    """
    registry: str = 'classification'
    counts: Dict[str, int] = dataclasses.field(default_factory=lambda: {'ResNet8': 24})
    mode: str = PERFORMANCE_DIVERSE
    min_steps: int = 20
    max_steps: int = 3000
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    split: Dict[str, int] = dataclasses.field(
        default_factory=lambda: {'train': 16, 'val': 4, 'test': 4})
    class_split: Optional[Dict[str, Dict[str, int]]] = None
    include_flagged: bool = False
    shapes: int = 0
    path: Optional[str] = None

    def __post_init__(self):
        if self.mode not in (PERFORMANCE_DIVERSE, CONVERGED):
            raise ValueError('mode must be %s or %s' % (PERFORMANCE_DIVERSE, CONVERGED))
        if any(n < 1 for n in self.counts.values()):
            raise ValueError('counts must be positive')
        if not 1 <= self.min_steps <= self.max_steps:
            raise ValueError('need 1 <= min_steps <= max_steps')

    @property
    def recipe(self):
        return TrainRecipe(self.lr, self.momentum, self.weight_decay)

    def split_sizes(self, registry):
        "Split sizes as accepted by :func:`split_manifest`."
        if self.class_split is None:
            return dict(self.split)
        return dict((registry.get(name).class_id, dict(sizes))
                    for name, sizes in self.class_split.items())


@dataclasses.dataclass
class TeacherConfig:
    """The distillation teacher.

    :param arch: ``ResNet56``, or ``ResNet32`` when compute is short
    :param steps: training budget
    :param path: existing teacher parameter file
    """
    arch: str = 'ResNet56'
    steps: int = 20000
    lr: float = 0.1
    path: Optional[str] = None

    def registry(self, num_classes=10, image_size=32):
        name = 'teachers' if self.arch in archs.TEACHERS else 'classification'
        return archs.get_registry(name, num_classes, image_size)


@dataclasses.dataclass
class InstanceRecord:
    id: str
    arch_name: str
    class_id: int
    weights_path: str
    seed: int
    epochs_trained: int = 0
    steps: int = 0
    metric: Optional[float] = None
    split: str = 'unused'
    flagged: bool = False
    flag_reason: Optional[str] = None
    shape: Optional[dict] = None


class ZooManifest(object):
    """Records of one zoo.

    :param dataset_name: ``cifar10``, ``sdf``, ...
    :param registry: registry name the ClassIds refer to
    :param records: list of :class:`InstanceRecord`
    :param build_config_hash: hash of the configuration the zoo was built with
    :param root: directory weights paths are relative to
    """

    def __init__(self, dataset_name, registry, records=None, build_config_hash=None, root=None):
        self.dataset_name = dataset_name
        self.registry = registry
        self.records = RecordQuerySet(records)
        self.build_config_hash = build_config_hash
        self.root = root

    @property
    def per_class_counts(self):
        counts = {}
        for record in self.records:
            counts[record.class_id] = counts.get(record.class_id, 0) + 1
        return counts

    def filter(self, **kwargs):
        return self.records.filter(**kwargs)

    def get(self, **kwargs):
        return self.records.get(**kwargs)

    def count(self):
        return self.records.count()

    def order_by(self, field):
        return self.records.order_by(field)

    def replace_records(self, records):
        "A copy of this manifest holding ``records``."
        return ZooManifest(self.dataset_name, self.registry, records, self.build_config_hash,
                           self.root)

    def add(self, record):
        "Append ``record``, or replace the record holding the same id in place."
        records = list(self.records)
        for index, existing in enumerate(records):
            if existing.id == record.id:
                records[index] = record
                break
        else:
            records.append(record)
        self.records = RecordQuerySet(records)

    def stored_ids(self):
        "Ids of the records whose weights file exists."
        return set(r.id for r in self.records if os.path.exists(self.weights_file(r)))

    def weights_file(self, record):
        return os.path.join(self.root or '', record.weights_path)

    def to_dict(self):
        return {
            'dataset_name': self.dataset_name,
            'registry': self.registry,
            'build_config_hash': self.build_config_hash,
            'per_class_counts': dict((str(k), v) for k, v in sorted(self.per_class_counts.items())),
            'records': [dataclasses.asdict(r) for r in self.records],
        }

    def save(self, path=None):
        "Write the manifest atomically (defaults to ``root/manifest.json``)."
        path = path or os.path.join(self.root, MANIFEST_NAME)
        with storage.atomic_write(path, 'w') as out:
            json.dump(self.to_dict(), out, indent=2, sort_keys=True)
        return path

    @classmethod
    def load(cls, path):
        """Read a manifest file (or the manifest inside a zoo directory)."""
        if os.path.isdir(path):
            path = os.path.join(path, MANIFEST_NAME)
        with open(path) as data:
            desc = json.load(data)
        records = [InstanceRecord(**r) for r in desc['records']]
        return cls(desc['dataset_name'], desc['registry'], records,
                   desc.get('build_config_hash'), os.path.dirname(os.path.abspath(path)))

    def __repr__(self):
        return '<%s %s: %d records>' % (self.__class__.__name__, self.dataset_name, self.count())


def load_instance(manifest, record, registry=None, device=None):
    """Load a record's weights as a :class:`~wsl.archs.NetworkInstance`.

    :raises FormatError: when the file does not match the architecture layout
    """
    registry = registry or archs.get_registry(manifest.registry)
    spec = registry.get(record.arch_name)
    layout = spec.layout()
    values, header = storage.read_prep(manifest.weights_file(record), layout)
    instance = archs.instantiate(spec, codec.load(values, layout))
    return instance.to(device) if device is not None else instance


def train_instance(spec, loader, steps, recipe=None, seed=0, device='cpu'):
    """Train a fresh classification instance.

    :param spec: :class:`~wsl.archs.ArchSpec`
    :param loader: training :class:`~torch.utils.data.DataLoader`
    :param steps: optimizer steps
    :rtype: tuple of (:class:`~wsl.archs.NetworkInstance`, diverged flag)
    """
    recipe = recipe or TrainRecipe()
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = spec.build().to(device)
    optimizer = torch.optim.SGD(module.parameters(), lr=recipe.lr, momentum=recipe.momentum,
                                weight_decay=recipe.weight_decay)
    milestones = sorted(set(max(1, int(steps * m)) for m in recipe.milestones))
    scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones, gamma=0.1)
    module.train()
    diverged = False
    batches = cycle(loader)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        for _ in range(steps):
            images, labels = next(batches)
            loss = torch.nn.functional.cross_entropy(module(images.to(device)), labels.to(device))
            if not torch.isfinite(loss):
                diverged = True
                break
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            scheduler.step()
    module.eval()
    return archs.NetworkInstance(spec, archs.extract_params(module, spec.layout())), diverged


def _budgets(rng, count, mode, min_steps, max_steps):
    if mode == CONVERGED:
        return [max_steps] * count
    low, high = math.log(min_steps), math.log(max_steps)
    return [int(round(math.exp(v))) for v in rng.uniform(low, high, size=count)]


def _write_record(manifest, record, instance, config_hash):
    path = manifest.weights_file(record)
    meta = {'seed': record.seed, 'metric': record.metric, 'steps': record.steps,
            'config_hash': config_hash}
    storage.write_prep(path, codec.flatten(instance.detach().to('cpu').params,
                                           instance.layout), meta)


def build_classification_zoo(specs, counts, train_loader, test_loader, out_dir, seed=0,
                             mode=PERFORMANCE_DIVERSE, min_steps=20, max_steps=3000,
                             recipe=None, dataset_name='cifar10', registry='classification',
                             config_hash=None, device='cpu', eval_batches=None):
    """Train, measure and persist classification instances.

    Records already present in ``out_dir`` with readable weights are kept,
    so a build can be resumed.  Instances whose training loss turned
    non-finite are kept and flagged.

    :param specs: architectures to train
    :param counts: instances per architecture name
    :param mode: ``performance-diverse`` or ``converged``
    :rtype: :class:`ZooManifest`
    """
    recipe = recipe or TrainRecipe()
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    if os.path.exists(manifest_path):
        manifest = ZooManifest.load(manifest_path)
    else:
        manifest = ZooManifest(dataset_name, registry, [], config_hash, os.path.abspath(out_dir))
    done = manifest.stored_ids()
    steps_per_epoch = max(1, len(train_loader))
    rng = numpy.random.default_rng(seed)
    for spec in sorted(specs, key=lambda s: s.class_id):
        count = counts.get(spec.name, 0)
        seeds = [int(s) for s in rng.integers(0, 2 ** 31 - 1, size=count)]
        budgets = _budgets(rng, count, mode, min_steps, max_steps)
        for index in tqdm(range(count), desc='zoo %s' % spec.name, disable=None):
            record_id = '%s-%03d' % (spec.name, index)
            if record_id in done:
                continue
            instance, diverged = train_instance(spec, train_loader, budgets[index], recipe,
                                                seeds[index], device)
            metric = archs.evaluate_accuracy(instance, test_loader, device,
                                             max_batches=eval_batches)
            record = InstanceRecord(
                id=record_id, arch_name=spec.name, class_id=spec.class_id,
                weights_path=os.path.join('weights', record_id + '.prep'), seed=seeds[index],
                epochs_trained=int(math.ceil(budgets[index] / float(steps_per_epoch))),
                steps=budgets[index], metric=metric, flagged=diverged,
                flag_reason='training loss became non-finite' if diverged else None)
            if diverged:
                logger.warning('zoo instance %s diverged; record flagged', record_id)
            _write_record(manifest, record, instance, config_hash)
            manifest.add(record)
            manifest.save()
            logger.info('zoo %s: accuracy %.4f after %d steps', record_id, metric, record.steps)
    return manifest


def build_teacher(spec, train_loader, test_loader, out_dir, steps, recipe=None, seed=0,
                  device='cpu', config_hash=None):
    """Train the distillation teacher and store it as a ``teacher`` record.

    :raises DivergenceError: when teacher training diverges
    :rtype: tuple of (:class:`~wsl.archs.NetworkInstance`, :class:`InstanceRecord`)
    """
    recipe = recipe or TrainRecipe(lr=0.1)
    instance, diverged = train_instance(spec, train_loader, steps, recipe, seed, device)
    if diverged:
        raise DivergenceError('teacher %s diverged during training' % spec.name)
    metric = archs.evaluate_accuracy(instance, test_loader, device)
    record = InstanceRecord(id='teacher-%s' % spec.name, arch_name=spec.name,
                            class_id=spec.class_id, weights_path='teacher.prep', seed=seed,
                            epochs_trained=int(math.ceil(steps / float(max(1, len(train_loader))))),
                            steps=steps, metric=metric, split='teacher')
    holder = ZooManifest('teacher', 'teachers', [record], config_hash, os.path.abspath(out_dir))
    _write_record(holder, record, instance, config_hash)
    logger.info('teacher %s: accuracy %.4f', spec.name, metric)
    return instance, record


def load_teacher(path, registry=None, device=None):
    """Load a teacher written by :func:`build_teacher`.

    :rtype: tuple of (:class:`~wsl.archs.NetworkInstance`, stored accuracy or None)
    """
    values, header = storage.read_prep(path)
    registry = registry or archs.get_registry('teachers')
    spec = registry.get(header['arch_name'])
    layout = spec.layout()
    if header.get('layout_hash') != codec.layout_hash(layout):
        raise FormatError('%s: written for a different %s layout' % (path, spec.name))
    instance = archs.instantiate(spec, codec.load(values, layout))
    logger.debug('load_teacher %s: %s', path, spec.name)
    return (instance.to(device) if device is not None else instance), header.get('metric')


def build_sdf_zoo(shapes, fit_cfg, out_dir, seed=0, config_hash=None, device='cpu'):
    """Fit one SirenMLP per shape, each from its own random initialization.

    Shapes whose record and weights are already in ``out_dir`` are not
    fitted again, so a build can be resumed.

    :param shapes: at least two shapes
    :param fit_cfg: :class:`~wsl.sdf.FitConfig`
    :rtype: :class:`ZooManifest`
    """
    if len(shapes) < 2:
        raise ZooError('an SDF zoo needs at least two shapes, got %d' % len(shapes))
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    if os.path.exists(manifest_path):
        manifest = ZooManifest.load(manifest_path)
    else:
        manifest = ZooManifest('sdf', 'sdf', [], config_hash, os.path.abspath(out_dir))
    done = manifest.stored_ids()
    rng = numpy.random.default_rng(seed)
    seeds = [int(s) for s in rng.choice(2 ** 31 - 1, size=len(shapes), replace=False)]
    for index, shape in enumerate(tqdm(shapes, desc='sdf zoo', disable=None)):
        if 'SirenMLP-%03d' % index in done:
            continue
        samples = sdf.sample_sdf(shape, fit_cfg.samples, fit_cfg.surface_fraction,
                                 seed=seeds[index], scale=fit_cfg.perturbation)
        result = sdf.fit_siren(samples, fit_cfg, seed=seeds[index], device=device)
        record_id = 'SirenMLP-%03d' % index
        record = InstanceRecord(
            id=record_id, arch_name='SirenMLP', class_id=result.instance.arch.class_id,
            weights_path=os.path.join('weights', record_id + '.prep'), seed=seeds[index],
            epochs_trained=1, steps=fit_cfg.steps, metric=result.fit_error,
            flagged=result.flagged, flag_reason=result.reason, shape=sdf.shape_to_dict(shape))
        _write_record(manifest, record, result.instance, config_hash)
        manifest.add(record)
        manifest.save()
    return manifest


def _take(records, sizes, rng, assigned):
    order = rng.permutation(len(records))
    start = 0
    for split in SPLITS:
        size = sizes.get(split, 0)
        for index in order[start:start + size]:
            assigned[records[index].id] = split
        start += size


def split_manifest(manifest, sizes, seed=0, include_flagged=False):
    """Assign records to splits at random.

    :param sizes: ``{split: count}``, or per ClassId ``{class_id: {split: count}}``
    :param include_flagged: also draw from flagged records
    :rtype: a new :class:`ZooManifest`; records not drawn are ``unused``
    :raises ZooError: when there are fewer eligible records than requested
    """
    eligible = [r for r in manifest.records.order_by('id')
                if r.split != 'teacher' and (include_flagged or not r.flagged)]
    rng = numpy.random.default_rng(seed)
    assigned = {}
    per_class = any(isinstance(v, dict) for v in sizes.values())
    if per_class:
        for class_id in sorted(sizes, key=int):
            group = [r for r in eligible if r.class_id == int(class_id)]
            wanted = sum(sizes[class_id].values())
            if wanted > len(group):
                raise ZooError('ClassId %s: %d records requested, %d available' % (
                    class_id, wanted, len(group)))
            _take(group, sizes[class_id], rng, assigned)
    else:
        wanted = sum(sizes.values())
        if wanted > len(eligible):
            raise ZooError('%d records requested, %d available' % (wanted, len(eligible)))
        _take(eligible, sizes, rng, assigned)
    records = []
    for record in manifest.records:
        if record.split == 'teacher':
            records.append(record)
        else:
            records.append(dataclasses.replace(record, split=assigned.get(record.id, 'unused')))
    logger.debug('split_manifest seed %d: %s', seed, dict(
        (s, sum(1 for v in assigned.values() if v == s)) for s in SPLITS))
    return manifest.replace_records(records)


def verify_manifest(manifest, registry=None, recompute=False, test_loader=None, device='cpu',
                    eval_batches=None, fit_cfg=None):
    """Check every record of a manifest.

    Each weights file must exist, parse with its architecture layout and
    round-trip through the codec.  With ``recompute``, stored metrics are
    measured again: accuracy must agree within 0.1 points, SDF fit error
    within 5% relative.

    :rtype: list of ``(record id, problem)``; empty when all is well
    """
    registry = registry or archs.get_registry(manifest.registry)
    problems = []
    for record in tqdm(manifest.records, desc='verify', disable=None):
        path = manifest.weights_file(record)
        if not os.path.exists(path):
            problems.append((record.id, 'missing weights file %s' % path))
            continue
        try:
            instance = load_instance(manifest, record, registry)
        except Exception as err:
            problems.append((record.id, 'unreadable weights: %s' % err))
            continue
        prep = codec.flatten(instance.params, instance.layout)
        again = codec.load(prep, instance.layout)
        if any(not torch.equal(again[name], instance.params[name]) for name in again):
            problems.append((record.id, 'codec round trip is not exact'))
        if not recompute or record.metric is None:
            continue
        if record.shape is not None:
            fit_cfg = fit_cfg or sdf.FitConfig()
            samples = sdf.sample_sdf(sdf.shape_from_dict(record.shape), fit_cfg.samples,
                                     fit_cfg.surface_fraction, seed=record.seed,
                                     scale=fit_cfg.perturbation)
            measured = float(torch.mean((sdf.field_values(instance, samples.points) -
                                         samples.distances) ** 2))
            if abs(measured - record.metric) > 0.05 * max(record.metric, 1e-12):
                problems.append((record.id, 'fit error %.4g differs from stored %.4g' % (
                    measured, record.metric)))
        elif test_loader is not None:
            measured = archs.evaluate_accuracy(instance.to(device), test_loader, device,
                                               max_batches=eval_batches)
            if abs(measured - record.metric) > 0.001:
                problems.append((record.id, 'accuracy %.4f differs from stored %.4f' % (
                    measured, record.metric)))
    for record_id, problem in problems:
        logger.warning('verify %s: %s', record_id, problem)
    return problems


def manifest_stats(manifest):
    """Per-class and per-split summary of a manifest.

    :rtype: dict with ``classes`` (``{class_id: {count, min, mean, max}}``),
        ``splits`` (``{split: count}``) and ``flagged``
    """
    classes = {}
    for class_id in sorted(manifest.per_class_counts):
        metrics = [r.metric for r in manifest.filter(class_id=class_id)
                   if r.metric is not None]
        classes[class_id] = {
            'arch_name': manifest.filter(class_id=class_id)[0].arch_name,
            'count': manifest.filter(class_id=class_id).count(),
            'min': min(metrics) if metrics else None,
            'mean': float(numpy.mean(metrics)) if metrics else None,
            'max': max(metrics) if metrics else None,
        }
    splits = {}
    for record in manifest.records:
        splits[record.split] = splits.get(record.split, 0) + 1
    return {
        'classes': classes,
        'splits': splits,
        'flagged': manifest.filter(flagged=True).count(),
    }
