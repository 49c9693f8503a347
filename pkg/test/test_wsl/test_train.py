# file test_wsl/test_train.py
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

from collections import Counter
import math
import os
import unittest

from mock import patch
import pandas
import torch

from wsl import archs, train
from wsl.exceptions import ConfigError, DivergenceError, TrainingError
from wsl.losses import LossConfig
from wsl.models import load_model, model_hash
from wsl.testutil import TestCase, tiny_loader, tiny_model, tiny_registry, \
    tiny_sdf_registry, tiny_zoo
from wsl.train import FidelityReport, FidelityRow, InstanceBatcher, Target, TrainConfig
from wsl.zoo import load_instance

LOSS = LossConfig(temperature=4.0, alpha=0.9)


def targets_of(manifest, registry, **kwargs):
    return [Target(r, load_instance(manifest, r, registry))
            for r in manifest.filter(**kwargs).order_by('id')]


class TrainConfigTest(unittest.TestCase):

    def test_validation(self):
        self.assertRaises(ValueError, TrainConfig, instance_batch=0)
        self.assertRaises(ValueError, TrainConfig, schedule='step')
        self.assertRaises(ValueError, TrainConfig, lr=0.0)


class InstanceBatcherTest(TestCase):

    def setUp(self):
        self.registry = tiny_registry()
        manifest = tiny_zoo(self.tmpdir(), self.registry, {'TinyConv': 3, 'TinyDeep': 2})
        self.targets = targets_of(manifest, self.registry)

    def visits(self, batcher, epoch):
        return Counter(t.record.id for batch in batcher.epoch(epoch) for t in batch)

    def test_every_instance_visited(self):
        batcher = InstanceBatcher(self.targets, 4, seed=1, repeats=2)
        self.assertEqual(3, len(batcher))
        self.assertEqual(set([2]), set(self.visits(batcher, 0).values()))
        self.assertEqual(5, len(self.visits(batcher, 0)))

    def test_class_weights(self):
        batcher = InstanceBatcher(self.targets, 4, repeats=1, class_weights={3: 3})
        visits = self.visits(batcher, 0)
        self.assertEqual(1, visits['TinyConv-000'])
        self.assertEqual(3, visits['TinyDeep-001'])
        self.assertEqual(3, len(batcher))

    def test_seeded_per_epoch(self):
        batcher = InstanceBatcher(self.targets, 2, seed=5, repeats=3)
        order = lambda epoch: [t.record.id for b in batcher.epoch(epoch) for t in b]
        self.assertEqual(order(0), order(0))
        self.assertNotEqual(order(0), order(1))


class FidelityTest(TestCase):

    def test_rank_correlations(self):
        spearman, kendall = train.rank_correlations([0.1, 0.2, 0.3], [0.5, 0.6, 0.9])
        self.assertAlmostEqual(1.0, spearman)
        self.assertAlmostEqual(1.0, kendall)
        spearman, kendall = train.rank_correlations([0.1, 0.2, 0.3], [0.3, 0.2, 0.1])
        self.assertAlmostEqual(-1.0, spearman)
        self.assertAlmostEqual(-1.0, kendall)
        for pair in (([0.1], [0.2]), ([0.1, 0.2], [0.5, 0.5]), ([0.3, 0.3], [0.1, 0.2])):
            self.assertTrue(all(math.isnan(v) for v in train.rank_correlations(*pair)))

    def test_report(self):
        report = FidelityReport([
            FidelityRow('a', 0, 0.5, 0.4, 0, float('nan')),
            FidelityRow('b', 1, 0.7, 0.7, 2, float('nan')),
            FidelityRow('c', 1, 0.9, 0.6, 1, float('nan')),
        ])
        self.assertAlmostEqual((0.1 + 0.0 + 0.3) / 3, report.mean_abs_gap)
        self.assertAlmostEqual(2 / 3.0, report.class_accuracy)
        self.assertEqual(3, report.summary()['count'])
        self.assertEqual(list(FidelityRow._fields), list(report.to_frame().columns))
        empty = FidelityReport([])
        self.assertTrue(math.isnan(empty.mean_abs_gap))

    def test_evaluate_and_write(self):
        registry = tiny_registry()
        manifest = tiny_zoo(self.tmpdir(), registry, {'TinyLinear': 3})
        model = tiny_model([registry.get('TinyLinear')])
        before = model_hash(model)
        report = train.evaluate_fidelity(model, targets_of(manifest, registry), tiny_loader(),
                                         max_batches=2)
        self.assertEqual(before, model_hash(model))
        self.assertEqual(3, len(report.rows))
        self.assertEqual(1.0, report.class_accuracy)
        for row in report.rows:
            self.assertTrue(0.0 <= row.target_metric <= 1.0)
            self.assertTrue(0.0 <= row.predicted_metric <= 1.0)
        path = os.path.join(self.tmpdir(), 'fidelity.csv')
        train.write_fidelity_csv(path, report, 'cafe')
        frame = pandas.read_csv(path)
        self.assertEqual(['TinyLinear-000', 'TinyLinear-001', 'TinyLinear-002'],
                         list(frame['id']))
        self.assertEqual(set(['cafe']), set(frame['config_hash']))


class SingleArchTrainingTest(TestCase):

    def setUp(self):
        torch.manual_seed(0)
        self.registry = tiny_registry()
        split = dict(('TinyLinear-%03d' % i, 'val') for i in (4, 5))
        manifest = tiny_zoo(self.tmpdir(), self.registry, {'TinyLinear': 6}, split=split)
        self.train_targets = targets_of(manifest, self.registry, split='train')
        self.val_targets = targets_of(manifest, self.registry, split='val')
        self.loader = tiny_loader(size=16, batch_size=8)
        self.out = self.tmpdir()
        self.cfg = TrainConfig(epochs=2, instance_repeats=1, instance_batch=2, val_batches=1,
                               lr=1e-3)

    def trainer(self, cfg=None, model=None):
        return train.Trainer(model or tiny_model([self.registry.get('TinyLinear')]),
                             self.train_targets, self.val_targets, cfg or self.cfg, LOSS,
                             self.out, self.loader, self.loader, seed=0, config_hash='beef')

    def test_train(self):
        model = tiny_model([self.registry.get('TinyLinear')])
        before = model_hash(model)
        path = train.train_single_arch_classification(
            model, self.train_targets, self.val_targets, self.loader, self.loader, self.cfg,
            LOSS, self.out, config_hash='beef')
        self.assertEqual(os.path.join(self.out, train.BEST_CHECKPOINT), path)
        self.assertNotEqual(before, model_hash(model))
        self.assertTrue(os.path.exists(os.path.join(self.out, train.LAST_CHECKPOINT)))
        self.assertTrue(os.path.exists(os.path.join(self.out, train.OPTIMIZER_STATE)))
        metrics = pandas.read_csv(os.path.join(self.out, train.METRICS_NAME))
        self.assertEqual([1, 2], list(metrics['epoch']))
        self.assertEqual([2, 4], list(metrics['step']))
        for column in ('loss', 'pred', 'task', 'class', 'interp', 'val_loss', 'val_fidelity'):
            self.assertIn(column, metrics.columns)
        loaded, header = load_model(os.path.join(self.out, train.LAST_CHECKPOINT), self.registry)
        self.assertEqual('beef', header['config_hash'])
        self.assertEqual(4, header['step'])
        self.assertEqual(model_hash(model), model_hash(loaded))

    def test_resume(self):
        self.trainer().run()
        cfg = TrainConfig(epochs=3, instance_repeats=1, instance_batch=2, val_batches=1, lr=1e-3)
        trainer = self.trainer(cfg)
        trainer.run(resume=True)
        self.assertEqual(3, trainer.epoch)
        self.assertEqual(6, trainer.step)
        metrics = pandas.read_csv(os.path.join(self.out, train.METRICS_NAME))
        self.assertEqual([1, 2, 3], list(metrics['epoch']))

    def test_resume_without_checkpoint(self):
        self.assertFalse(self.trainer().resume())

    def test_early_stopping(self):
        cfg = TrainConfig(epochs=5, instance_repeats=1, instance_batch=2, val_batches=1,
                          patience=1)
        trainer = self.trainer(cfg)
        with patch.object(train.Trainer, 'validation_fidelity', return_value=0.5):
            trainer.run()
        self.assertEqual(2, trainer.epoch)
        self.assertEqual(0.5, trainer.best_fidelity)

    def test_divergence(self):
        cfg = TrainConfig(divergence_factor=10.0, divergence_patience=2)
        trainer = self.trainer(cfg)
        trainer.check_divergence(1.0)
        trainer.check_divergence(11.0)
        trainer.check_divergence(2.0)
        trainer.check_divergence(11.0)
        self.assertRaises(DivergenceError, trainer.check_divergence, 12.0)
        self.assertRaises(DivergenceError, self.trainer().check_divergence, float('nan'))

    def test_non_finite_training_loss(self):
        with patch('wsl.train.total_batch_loss', return_value=torch.tensor(float('inf'))):
            trainer = self.trainer()
            trainer.initial_val_loss = 1.0
            with patch.object(train.Trainer, 'validation_loss', return_value=1.0):
                self.assertRaises(DivergenceError, trainer.run)

    def test_no_targets(self):
        self.assertRaises(TrainingError, train.Trainer, tiny_model([self.registry.get('TinyLinear')]),
                          [], [], self.cfg, LOSS, self.out)

    def test_mixed_architectures(self):
        mixed = self.train_targets + [Target(self.train_targets[0].record,
                                             archs.instantiate(self.registry.get('TinyMLP')))]
        self.assertRaises(TrainingError, train.train_single_arch_classification,
                          tiny_model([self.registry.get('TinyLinear')]), mixed, [], self.loader,
                          self.loader, self.cfg, LOSS, self.out)

    def test_unknown_class_weight(self):
        cfg = TrainConfig(class_weights={'ResNet8': 2})
        self.assertRaises(ConfigError, self.trainer, cfg)


class MultiArchTrainingTest(TestCase):

    def setUp(self):
        torch.manual_seed(0)
        self.registry = tiny_registry()
        self.manifest = tiny_zoo(self.tmpdir(), self.registry, {'TinyConv': 2, 'TinyDeep': 2})
        self.targets = targets_of(self.manifest, self.registry)
        self.teacher = archs.instantiate(self.registry.get('TinyMLP'), seed=9)
        self.loader = tiny_loader(size=16, batch_size=8)
        self.cfg = TrainConfig(epochs=1, instance_repeats=1, instance_batch=4, val_batches=1)

    def run_training(self, targets=None, teacher='default', teacher_metric=None, cfg=None):
        teacher = self.teacher if teacher == 'default' else teacher
        return train.train_multi_arch(tiny_model(self.registry.list_architectures()),
                                      targets or self.targets, [], self.loader, self.loader,
                                      teacher, cfg or self.cfg, LOSS, self.tmpdir(),
                                      teacher_metric=teacher_metric)

    def test_train(self):
        path = self.run_training(teacher_metric=0.9)
        self.assertTrue(path.endswith(train.LAST_CHECKPOINT))
        model, header = load_model(path, self.registry)
        self.assertEqual(['TinyConv', 'TinyLinear', 'TinyMLP', 'TinyDeep'], header['arch_names'])
        self.assertEqual(1, header['step'])

    def test_boundary_architectures_required(self):
        only_low = [t for t in self.targets if t.instance.arch.class_id == 0]
        self.assertRaises(TrainingError, self.run_training, only_low)

    def test_teacher_required(self):
        self.assertRaises(TrainingError, self.run_training, teacher=None)

    def test_weak_teacher(self):
        # zoo metrics reach 0.11
        self.assertRaises(TrainingError, self.run_training, teacher_metric=0.05)
        cfg = TrainConfig(epochs=1, instance_repeats=1, instance_batch=4, val_batches=1,
                          allow_weak_teacher=True)
        self.assertTrue(os.path.exists(self.run_training(teacher_metric=0.05, cfg=cfg)))

    def test_single_arch_model_rejected(self):
        self.assertRaises(TrainingError, train.train_multi_arch,
                          tiny_model([self.registry.get('TinyConv')]), self.targets, [],
                          self.loader, self.loader, self.teacher, self.cfg, LOSS, self.tmpdir())


class SdfTrainingTest(TestCase):

    def test_train(self):
        torch.manual_seed(0)
        registry = tiny_sdf_registry()
        manifest = tiny_zoo(self.tmpdir(), registry, {'SirenMLP': 3},
                            split={'SirenMLP-002': 'val'})
        out = self.tmpdir()
        cfg = TrainConfig(epochs=1, instance_repeats=1, instance_batch=2, sdf_points=64)
        model = tiny_model(registry.list_architectures())
        path = train.train_single_arch_sdf(model, targets_of(manifest, registry, split='train'),
                                           targets_of(manifest, registry, split='val'), cfg,
                                           LOSS, out)
        self.assertTrue(path.endswith(train.BEST_CHECKPOINT))
        metrics = pandas.read_csv(os.path.join(out, train.METRICS_NAME))
        self.assertLessEqual(metrics['val_fidelity'][0], 0.0)
        self.assertEqual(0.0, metrics['task'][0])

    def test_needs_siren_instances(self):
        registry = tiny_registry()
        manifest = tiny_zoo(self.tmpdir(), registry, {'TinyLinear': 2})
        self.assertRaises(TrainingError, train.train_single_arch_sdf,
                          tiny_model([registry.get('TinyLinear')]),
                          targets_of(manifest, registry), [], TrainConfig(), LOSS, self.tmpdir())


if __name__ == '__main__':
    unittest.main()
