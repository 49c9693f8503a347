# file wsl/experiment.py
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

"""Experiment configuration files and the end-to-end pipeline.

An experiment is described by a TOML file::

    [experiment]
    kind = "single-cls"        # single-cls, single-sdf, multi or multi-unseen
    out = "runs/single_cls"
    seed = 0

    [loss]
    temperature = 4.0
    alpha = 0.9

    [zoo]
    counts = { ResNet8 = 24 }

Tables ``[zoo]``, ``[dataset]``, ``[encoder]``, ``[decoder]``,
``[train]``, ``[sweep]``, ``[lso]``, ``[sdf]`` and ``[teacher]`` are
optional; ``[loss]`` and ``experiment.kind`` are required.  Problems
with any field are collected and reported together in one
:class:`~wsl.exceptions.ConfigError`.

:class:`Experiment` runs the pipeline: zoo, teacher, training,
fidelity evaluation, sweeps, unseen-architecture samples,
latent-space optimization and the report.  Every artifact carries the
hash of the resolved configuration.
"""

import dataclasses
import json
import logging
import os
from typing import Optional

import numpy
import pandas
import torch

try:
    import tomllib
except ImportError:  # python < 3.11
    import tomli as tomllib

from wsl import archs, codec, explore, report, sdf, storage, train, zoo
from wsl.conf import config_hash, from_table, settings, to_plain
from wsl.datasets import (DatasetConfig, dataset_info, get_loaders, holdout_split,
                          make_loader)
from wsl.exceptions import ConfigError, LsoAborted, ZooError
from wsl.explore import LsoConfig, SweepConfig
from wsl.losses import LossConfig
from wsl.models import DecoderConfig, EncoderConfig, WeightSpaceModel, load_model
from wsl.sdf import FitConfig
from wsl.train import TrainConfig
from wsl.zoo import TeacherConfig, ZooConfig

__all__ = ['ExperimentConfig', 'KINDS', 'load_config', 'parse_config', 'Experiment', 'run']

logger = logging.getLogger(__name__)

SINGLE_CLS = 'single-cls'
SINGLE_SDF = 'single-sdf'
MULTI = 'multi'
MULTI_UNSEEN = 'multi-unseen'
KINDS = (SINGLE_CLS, SINGLE_SDF, MULTI, MULTI_UNSEEN)

CONFIG_NAME = 'config.json'

# toml table -> dataclass; each becomes the ExperimentConfig field of the same name
_TABLES = {
    'zoo': ZooConfig,
    'dataset': DatasetConfig,
    'encoder': EncoderConfig,
    'decoder': DecoderConfig,
    'loss': LossConfig,
    'train': TrainConfig,
    'sweep': SweepConfig,
    'lso': LsoConfig,
    'sdf': FitConfig,
    'teacher': TeacherConfig,
}


@dataclasses.dataclass
class _Header:
    kind: str
    out: str = 'runs/wsl'
    seed: int = 0
    device: str = 'cpu'
    eval_batches: Optional[int] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError('kind must be one of %s' % ', '.join(KINDS))


@dataclasses.dataclass
class ExperimentConfig:
    """A fully resolved experiment.

    :param kind: ``single-cls``, ``single-sdf``, ``multi`` or ``multi-unseen``
    :param out: artifact directory
    :param seed: global seed every random choice derives from
    :param device: torch device
    :param eval_batches: cap on test batches for accuracy measurements
    """
    kind: str
    loss: LossConfig
    out: str = 'runs/wsl'
    seed: int = 0
    device: str = 'cpu'
    eval_batches: Optional[int] = None
    zoo: ZooConfig = dataclasses.field(default_factory=ZooConfig)
    dataset: DatasetConfig = dataclasses.field(default_factory=DatasetConfig)
    encoder: EncoderConfig = dataclasses.field(default_factory=EncoderConfig)
    decoder: DecoderConfig = dataclasses.field(default_factory=DecoderConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    sweep: SweepConfig = dataclasses.field(default_factory=SweepConfig)
    lso: LsoConfig = dataclasses.field(default_factory=LsoConfig)
    sdf: FitConfig = dataclasses.field(default_factory=FitConfig)
    teacher: TeacherConfig = dataclasses.field(default_factory=TeacherConfig)

    @property
    def multi_arch(self):
        return self.kind in (MULTI, MULTI_UNSEEN)

    @property
    def classification(self):
        return self.kind != SINGLE_SDF

    def config_hash(self):
        "SHA-1 of the canonical JSON form of this configuration."
        return config_hash(self)

    def to_dict(self):
        return to_plain(self)


def _check_kind(cfg, errors):
    counts = cfg.zoo.counts
    if cfg.kind == SINGLE_SDF:
        if cfg.zoo.registry != 'sdf':
            errors.append(('zoo.registry', 'single-sdf experiments use the sdf registry'))
        if cfg.zoo.shapes < 2 and cfg.zoo.path is None:
            errors.append(('zoo.shapes', 'an SDF zoo needs at least 2 shapes'))
        if cfg.loss.pred_loss != 'mse':
            errors.append(('loss.pred_loss', 'single-sdf experiments regress outputs (mse)'))
        return
    if cfg.zoo.registry != 'classification':
        errors.append(('zoo.registry', '%s experiments use the classification registry' %
                       cfg.kind))
    registry = archs.CLASSIFICATION
    for name in counts:
        if name not in registry:
            errors.append(('zoo.counts', 'unknown architecture %s' % name))
    if cfg.kind == SINGLE_CLS and len(counts) != 1:
        errors.append(('zoo.counts', 'single-cls experiments train one architecture'))
    if cfg.multi_arch and cfg.zoo.path is None:
        names = set(counts)
        boundary = set([registry.list_architectures()[0].name,
                        registry.list_architectures()[-1].name])
        if not boundary <= names:
            errors.append(('zoo.counts', 'multi-architecture zoos need %s' %
                           ' and '.join(sorted(boundary))))
        if cfg.kind == MULTI_UNSEEN and names != boundary:
            errors.append(('zoo.counts', 'multi-unseen zoos hold only %s' %
                           ' and '.join(sorted(boundary))))
    if cfg.lso.objective == 'kd+class' and not cfg.multi_arch:
        errors.append(('lso.objective', 'kd+class requires a multi-architecture experiment'))


def parse_config(data, source='<config>', **overrides):
    """Build an :class:`ExperimentConfig` from parsed TOML.

    :param overrides: ``seed``, ``out`` or ``device`` values replacing
        the file's (None values are ignored); without a device anywhere
        the :attr:`WSL_DEVICE` setting is used
    :raises ConfigError: listing every problem found
    """
    errors = []
    for key in sorted(set(data) - set(_TABLES) - set(['experiment'])):
        errors.append((key, 'unknown table'))
    header = dict(data.get('experiment') or {})
    header.update((k, v) for k, v in overrides.items() if v is not None)
    header.setdefault('device', settings.WSL_DEVICE)
    values = {}
    head = from_table(_Header, header, 'experiment', errors)
    if head is not None:
        values.update(dataclasses.asdict(head))
    for table, cls in _TABLES.items():
        if table == 'loss' or table in data:
            obj = from_table(cls, data.get(table), table, errors)
            if obj is not None:
                values[table] = obj
    cfg = None
    if not errors:
        cfg = ExperimentConfig(**values)
        _check_kind(cfg, errors)
    if errors:
        raise ConfigError('Invalid configuration in %s' % source, errors)
    return cfg


def load_config(path, **overrides):
    """Read an experiment TOML file.

    :raises ConfigError: when the file cannot be read or parsed, or holds
        invalid fields
    """
    try:
        with open(path, 'rb') as config_file:
            data = tomllib.load(config_file)
    except OSError as err:
        raise ConfigError('Cannot read %s' % path, [(path, err.strerror or str(err))])
    except tomllib.TOMLDecodeError as err:
        raise ConfigError('Cannot parse %s' % path, [(path, str(err))])
    return parse_config(data, path, **overrides)


class Experiment(object):
    """One experiment run, step by step.

    Each step can be called on its own (the command line does so for
    ``zoo``, ``train``, ``eval``, ``sweep`` and ``lso``); later steps load
    what earlier ones wrote to the artifact directory.

    :param cfg: :class:`ExperimentConfig`
    :param resume: continue an interrupted run
    """

    def __init__(self, cfg, resume=False):
        self.cfg = cfg
        self.resume = resume
        self.out = os.path.abspath(cfg.out)
        self.hash = cfg.config_hash()
        self.device = cfg.device
        self._loaders = None
        self._manifest = None
        self._teacher = None
        self._teacher_metric = None
        self._model = None
        if cfg.classification:
            num_classes, image_size = dataset_info(cfg.dataset.name)
            self.registry = archs.get_registry('classification', num_classes, image_size)
        else:
            self.registry = archs.SDF

    def path(self, *parts):
        return os.path.join(self.out, *parts)

    def write_config(self):
        os.makedirs(self.out, exist_ok=True)
        with storage.atomic_write(self.path(CONFIG_NAME), 'w') as out:
            json.dump({'config': self.cfg.to_dict(), 'config_hash': self.hash}, out,
                      indent=2, sort_keys=True)

    @property
    def loaders(self):
        if self._loaders is None:
            self._loaders = get_loaders(self.cfg.dataset, self.cfg.seed)
        return self._loaders

    @property
    def train_loader(self):
        return self.loaders[0]

    @property
    def test_loader(self):
        return self.loaders[1]

    # zoo

    def build_zoo(self):
        "Build (or find) the zoo, split it and check every record."
        zcfg = self.cfg.zoo
        if zcfg.path is not None:
            manifest = zoo.ZooManifest.load(zcfg.path)
        elif self.cfg.kind == SINGLE_SDF:
            manifest_path = self.path('zoo', zoo.MANIFEST_NAME)
            if self.resume and os.path.exists(manifest_path):
                manifest = zoo.ZooManifest.load(manifest_path)
            else:
                rng = numpy.random.default_rng(self.cfg.seed)
                shapes = [sdf.synthetic_chair(rng) for _ in range(zcfg.shapes)]
                os.makedirs(self.path('zoo'), exist_ok=True)
                sdf.save_shape_catalog(self.path('zoo', 'shapes.json'), shapes)
                manifest = zoo.build_sdf_zoo(shapes, self.cfg.sdf, self.path('zoo'),
                                             self.cfg.seed, self.hash, self.device)
        else:
            specs = [self.registry.get(name) for name in zcfg.counts]
            manifest = zoo.build_classification_zoo(
                specs, zcfg.counts, self.train_loader, self.test_loader, self.path('zoo'),
                self.cfg.seed, zcfg.mode, zcfg.min_steps, zcfg.max_steps, zcfg.recipe,
                self.cfg.dataset.name, 'classification', self.hash, self.device,
                self.cfg.eval_batches)
        manifest = zoo.split_manifest(manifest, zcfg.split_sizes(self.registry), self.cfg.seed,
                                      zcfg.include_flagged)
        if zcfg.path is None:
            manifest.save()
        problems = zoo.verify_manifest(manifest, self.registry)
        if problems:
            raise ZooError('zoo check failed: %s' % '; '.join(
                '%s: %s' % problem for problem in problems))
        self._manifest = manifest
        logger.info('zoo ready: %s', zoo.manifest_stats(manifest)['splits'])
        return manifest

    @property
    def manifest(self):
        if self._manifest is None:
            path = self.cfg.zoo.path or self.path('zoo', zoo.MANIFEST_NAME)
            if not os.path.exists(path):
                return self.build_zoo()
            manifest = zoo.ZooManifest.load(path)
            self._manifest = zoo.split_manifest(manifest, self.cfg.zoo.split_sizes(self.registry),
                                                self.cfg.seed, self.cfg.zoo.include_flagged)
        return self._manifest

    def targets(self, split):
        return [train.Target(r, zoo.load_instance(self.manifest, r, self.registry, self.device))
                for r in self.manifest.filter(split=split).order_by('id')]

    # teacher

    def teacher(self):
        "Distillation teacher and its accuracy; built once and reused."
        if self._teacher is not None or not self.cfg.classification:
            return self._teacher, self._teacher_metric
        tcfg = self.cfg.teacher
        num_classes, image_size = dataset_info(self.cfg.dataset.name)
        registry = tcfg.registry(num_classes, image_size)
        path = tcfg.path or self.path('teacher', 'teacher.prep')
        if os.path.exists(path):
            self._teacher, self._teacher_metric = zoo.load_teacher(path, registry, self.device)
        else:
            self._teacher, record = zoo.build_teacher(
                registry.get(tcfg.arch), self.train_loader, self.test_loader,
                self.path('teacher'), tcfg.steps, zoo.TrainRecipe(lr=tcfg.lr), self.cfg.seed,
                self.device, self.hash)
            self._teacher_metric = record.metric
        return self._teacher, self._teacher_metric

    # model

    def model_specs(self):
        if self.cfg.multi_arch:
            # unseen architectures stay decodable
            return self.registry.list_architectures()
        names = set(r.arch_name for r in self.manifest.records if r.split != 'teacher')
        return [self.registry.get(name) for name in sorted(names)]

    def new_model(self):
        return WeightSpaceModel(self.cfg.encoder, self.cfg.decoder, self.model_specs(),
                                codec.LayoutConfig())

    def checkpoint_path(self):
        best = self.path('train', train.BEST_CHECKPOINT)
        return best if os.path.exists(best) else self.path('train', train.LAST_CHECKPOINT)

    @property
    def model(self):
        if self._model is None:
            self._model, header = load_model(self.checkpoint_path(), self.registry, self.device)
            if header.get('config_hash') != self.hash:
                logger.warning('checkpoint was written by a different configuration')
        return self._model

    def run_training(self):
        "Train the weight-space model; returns the best checkpoint path."
        cfg = self.cfg
        model = self.new_model()
        train_targets, val_targets = self.targets('train'), self.targets('val')
        out_dir = self.path('train')
        common = dict(seed=cfg.seed, device=self.device, config_hash=self.hash,
                      resume=self.resume)
        if cfg.kind == SINGLE_SDF:
            path = train.train_single_arch_sdf(model, train_targets, val_targets, cfg.train,
                                               cfg.loss, out_dir, **common)
        elif cfg.kind == SINGLE_CLS:
            path = train.train_single_arch_classification(
                model, train_targets, val_targets, self.train_loader, self.test_loader,
                cfg.train, cfg.loss, out_dir, **common)
        else:
            teacher, teacher_metric = self.teacher()
            path = train.train_multi_arch(
                model, train_targets, val_targets, self.train_loader, self.test_loader,
                teacher, cfg.train, cfg.loss, out_dir, teacher_metric=teacher_metric, **common)
        self._model = None
        return path

    # evaluation

    def evaluate(self):
        "Fidelity on the test split, written to ``fidelity.csv``."
        loader = self.test_loader if self.cfg.classification else None
        fidelity = train.evaluate_fidelity(self.model, self.targets('test'), loader, self.device,
                                           self.cfg.eval_batches, self.cfg.sdf.grid_res)
        train.write_fidelity_csv(self.path('fidelity.csv'), fidelity, self.hash)
        with storage.atomic_write(self.path('fidelity.json'), 'w') as out:
            json.dump(dict(fidelity.summary(), config_hash=self.hash), out, indent=2)
        return fidelity

    def _anchors(self):
        pool = self.targets('test') or self.targets('train')
        if self.cfg.multi_arch:
            ids = [t.instance.arch.class_id for t in pool]
            low = [t for t in pool if t.instance.arch.class_id == min(ids)]
            high = [t for t in pool if t.instance.arch.class_id == max(ids)]
            best = lambda group: max(group, key=lambda t: t.record.metric or 0.0)
            return best(low), best(high)
        if self.cfg.kind == SINGLE_SDF:
            return pool[0], pool[1]
        ordered = sorted(pool, key=lambda t: t.record.metric or 0.0)
        return ordered[0], ordered[-1]

    def sweeps(self):
        "Latent and weight-space sweeps between two anchors."
        scfg = self.cfg.sweep
        anchor_a, anchor_b = self._anchors()
        os.makedirs(self.path('sweeps'), exist_ok=True)
        if self.cfg.classification:
            metric = explore.accuracy_metric(self.test_loader, self.device, scfg.max_batches)
        else:
            shape = sdf.shape_from_dict(anchor_a.record.shape)
            metric = explore.sdf_metric(shape, self.cfg.sdf.grid_res, 'sign_iou')
        results = {}
        results['latent'] = explore.latent_sweep(self.model, anchor_a.instance,
                                                 anchor_b.instance, metric, scfg.steps)
        if anchor_a.instance.arch.name == anchor_b.instance.arch.name:
            results['weight-space'] = explore.weight_space_sweep(
                anchor_a.instance, anchor_b.instance, metric, scfg.steps)
        for mode, result in results.items():
            explore.write_sweep_csv(self.path('sweeps', '%s.csv' % mode), result, self.hash)
        with storage.atomic_write(self.path('sweeps', 'anchors.json'), 'w') as out:
            json.dump({'anchor_a': anchor_a.record.id, 'anchor_b': anchor_b.record.id,
                       'gamma_set': self.cfg.loss.gammas(len(self.model.specs))
                       if self.model.multi_arch else [],
                       'config_hash': self.hash}, out, indent=2)
        if self.cfg.kind == SINGLE_SDF:
            self.sdf_interpolation(anchor_a, anchor_b)
        return results

    def sdf_interpolation(self, anchor_a, anchor_b):
        "Sign IoU of latent and weight-space midpoints against both anchors; midpoint meshes."
        grid_res = self.cfg.sdf.grid_res
        points = sdf.grid_points(grid_res)
        field_a = sdf.field_values(anchor_a.instance, points)
        field_b = sdf.field_values(anchor_b.instance, points)
        model = self.model
        with explore.frozen(model):
            e_a = model.encode(codec.flatten(anchor_a.instance.params,
                                             model.layout(anchor_a.instance.arch)))
            e_b = model.encode(codec.flatten(anchor_b.instance.params,
                                             model.layout(anchor_b.instance.arch)))
        rows = []
        midpoints = {}
        for gamma in (0.25, 0.5, 0.75):
            with explore.frozen(model):
                latent = explore.decode_instance(model, (1 - gamma) * e_a + gamma * e_b)
            weight = archs.NetworkInstance(anchor_a.instance.arch, archs.blend_params(
                anchor_a.instance.params, anchor_b.instance.params, gamma))
            for mode, instance in (('latent', latent), ('weight-space', weight)):
                field = sdf.field_values(instance, points)
                rows.append({'gamma': gamma, 'mode': mode,
                             'sign_iou_a': sdf.sign_iou(field, field_a),
                             'sign_iou_b': sdf.sign_iou(field, field_b),
                             'config_hash': self.hash})
                if gamma == 0.5:
                    midpoints[mode] = instance
        with storage.atomic_write(self.path('sdf_interp.csv'), 'w') as out:
            pandas.DataFrame(rows).to_csv(out, index=False)
        os.makedirs(self.path('meshes'), exist_ok=True)
        for mode, instance in midpoints.items():
            sdf.extract_mesh(instance, path=self.path('meshes', '%s_mid.obj' % mode))
        for name, anchor in (('anchor_a', anchor_a), ('anchor_b', anchor_b)):
            sdf.extract_mesh(anchor.instance, path=self.path('meshes', '%s.obj' % name))
        return rows

    def unseen(self):
        "Instances of the architectures held out of a multi-unseen zoo."
        model = self.model
        anchor_a, anchor_b = self._anchors()
        present = set(r.class_id for r in self.manifest.records)
        rows = []
        for spec in model.specs:
            if spec.class_id in present:
                continue
            instance = explore.sample_unseen(model, anchor_a.instance, anchor_b.instance,
                                             spec.class_id)
            accuracy = archs.evaluate_accuracy(instance, self.test_loader, self.device,
                                               self.cfg.eval_batches)
            gamma = explore.unseen_gamma(anchor_a.instance.arch.class_id,
                                         anchor_b.instance.arch.class_id, spec.class_id)
            rows.append({'arch_name': spec.name, 'class_id': spec.class_id, 'gamma': gamma,
                         'accuracy': accuracy, 'config_hash': self.hash})
            storage.write_prep(self.path('unseen_%s.prep' % spec.name),
                               codec.flatten(instance.to('cpu').params, instance.layout),
                               {'config_hash': self.hash, 'metric': accuracy})
        with storage.atomic_write(self.path('unseen.csv'), 'w') as out:
            pandas.DataFrame(rows, columns=['arch_name', 'class_id', 'gamma', 'accuracy',
                                            'config_hash']).to_csv(out, index=False)
        return rows

    def lso_loaders(self):
        """Loaders for LSO: training batches to optimize on and a held-out
        part of the training set to select checkpoints with.

        :rtype: tuple of (fit loader, validation loader)
        """
        dcfg = self.cfg.dataset
        size = (self.cfg.lso.val_batches or 1) * dcfg.eval_batch_size
        fit, held = holdout_split(self.train_loader.dataset, size, self.cfg.seed)
        return (make_loader(fit, dcfg.batch_size, shuffle=True, seed=self.cfg.seed,
                            num_workers=dcfg.num_workers),
                make_loader(held, dcfg.eval_batch_size, seed=self.cfg.seed,
                            num_workers=dcfg.num_workers))

    def run_lso(self):
        """Latent-space optimization of the weakest test instance of each
        architecture.

        Checkpoints are selected on held-out training images; ``lso.csv``
        holds the test accuracy of the decoded starting instance and of
        the selected one, so a harmful run shows as a drop.
        """
        lcfg = self.cfg.lso
        model = self.model
        teacher, _ = self.teacher()
        fit_loader, val_loader = self.lso_loaders()
        val_metric = explore.accuracy_metric(val_loader, self.device)
        test_metric = explore.accuracy_metric(self.test_loader, self.device)
        os.makedirs(self.path('lso'), exist_ok=True)
        pool = self.targets('test') or self.targets('train')
        rows = []
        for class_id in sorted(set(t.instance.arch.class_id for t in pool)):
            initial = min((t for t in pool if t.instance.arch.class_id == class_id),
                          key=lambda t: t.record.metric or 0.0)
            run_cfg = dataclasses.replace(lcfg, target_class_id=class_id) \
                if model.multi_arch else lcfg
            trace_path = self.path('lso', '%s.csv' % initial.record.id)
            try:
                result = explore.lso(model, initial.instance, teacher, fit_loader, run_cfg,
                                     self.cfg.loss, val_metric, self.device, self.cfg.seed,
                                     test_metric)
            except LsoAborted as err:
                logger.error('lso %s aborted: %s', initial.record.id, err)
                explore.write_trace_csv(trace_path, err.trace, self.hash)
                continue
            explore.write_trace_csv(trace_path, result.trace, self.hash)
            rows.append({'arch_name': initial.instance.arch.name, 'class_id': class_id,
                         'record': initial.record.id, 'initial': result.initial_test,
                         'optimized': result.best_test, 'config_hash': self.hash})
        with storage.atomic_write(self.path('lso.csv'), 'w') as out:
            pandas.DataFrame(rows, columns=['arch_name', 'class_id', 'record', 'initial',
                                            'optimized', 'config_hash']).to_csv(out, index=False)
        return rows

    def run(self):
        "Every step in order; returns the artifact directory."
        torch.manual_seed(self.cfg.seed)
        self.write_config()
        self.build_zoo()
        if self.cfg.multi_arch:
            self.teacher()
        self.run_training()
        self.evaluate()
        self.sweeps()
        if self.cfg.kind == MULTI_UNSEEN:
            self.unseen()
        if self.cfg.classification:
            self.run_lso()
        report.write_report(self.out)
        logger.info('experiment %s finished in %s', self.cfg.kind, self.out)
        return self.out


def run(config_path, resume=False, **overrides):
    "Load a config file and run the whole experiment."
    cfg = load_config(config_path, **overrides)
    return Experiment(cfg, resume).run()
