# file test_wsl/test_experiment.py
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

import json
import os
import unittest

from mock import Mock, patch
import pandas
import torch

from wsl import archs, experiment, explore, train, zoo
from wsl.conf import settings
from wsl.exceptions import ConfigError
from wsl.experiment import Experiment, load_config, parse_config
from wsl.testutil import TestCase, tiny_loader, tiny_registry

from test_wsl import ACCEPTANCE


def single_cls(**tables):
    data = {
        'experiment': {'kind': 'single-cls', 'out': 'runs/x'},
        'loss': {'temperature': 4.0, 'alpha': 0.9},
        'zoo': {'counts': {'ResNet8': 6}, 'split': {'train': 4, 'val': 1, 'test': 1}},
    }
    data.update(tables)
    return data


def multi(**tables):
    data = single_cls(**tables)
    data['experiment']['kind'] = 'multi'
    data['zoo'] = {'counts': {'LeNetLike': 4, 'VanillaCNN': 4, 'ResNet32': 4}}
    data.update(tables)
    return data


class ParseConfigTest(TestCase):

    def assertFields(self, expected, data, **overrides):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(data, 'test.toml', **overrides)
        fields = [field for field, problem in ctx.exception.fields]
        for field in expected:
            self.assertIn(field, fields)
        self.assertPattern('Invalid configuration in test.toml', ctx.exception.message())
        return ctx.exception

    def test_minimal(self):
        cfg = parse_config(single_cls())
        self.assertEqual('single-cls', cfg.kind)
        self.assertEqual(0.9, cfg.loss.alpha)
        self.assertEqual({'ResNet8': 6}, cfg.zoo.counts)
        self.assertFalse(cfg.multi_arch)
        self.assertTrue(cfg.classification)
        # tables left out take their defaults
        self.assertEqual('cifar10', cfg.dataset.name)
        self.assertEqual(256, cfg.encoder.embedding_dim)

    def test_overrides(self):
        cfg = parse_config(single_cls(), seed=7, out='elsewhere', device=None)
        self.assertEqual(7, cfg.seed)
        self.assertEqual('elsewhere', cfg.out)
        self.assertEqual('cpu', cfg.device)

    def test_device_setting(self):
        with settings.override(WSL_DEVICE='cuda:1'):
            self.assertEqual('cuda:1', parse_config(single_cls()).device)
            self.assertEqual('cpu', parse_config(single_cls(), device='cpu').device)
            data = single_cls()
            data['experiment']['device'] = 'mps'
            self.assertEqual('mps', parse_config(data).device)
        with patch.dict(os.environ, {'WSL_DEVICE': 'cuda'}):
            self.assertEqual('cuda', parse_config(single_cls()).device)

    def test_missing_alpha(self):
        data = single_cls(loss={'temperature': 4.0})
        err = self.assertFields(['loss.alpha'], data)
        self.assertIn(('loss.alpha', 'required field missing'), err.fields)

    def test_missing_loss_and_kind(self):
        data = single_cls()
        del data['loss']
        data['experiment'] = {}
        self.assertFields(['loss.alpha', 'loss.temperature', 'experiment.kind'], data)

    def test_errors_collected(self):
        data = single_cls(loss={'temperature': 4.0, 'alpha': 0.9, 'alhpa': 1},
                          train={'epochs': 'many'}, extra={'a': 1})
        err = self.assertFields(['loss.alhpa', 'train.epochs', 'extra'], data)
        self.assertIn(('extra', 'unknown table'), err.fields)
        self.assertIn(('loss.alhpa', 'unknown field'), err.fields)

    def test_bad_kind(self):
        data = single_cls()
        data['experiment']['kind'] = 'both'
        self.assertFields(['experiment'], data)

    def test_single_cls_one_architecture(self):
        data = single_cls(zoo={'counts': {'ResNet8': 4, 'ResNet32': 4}})
        self.assertFields(['zoo.counts'], data)
        self.assertFields(['zoo.counts'], single_cls(zoo={'counts': {'ResNet9000': 4}}))

    def test_single_sdf(self):
        data = single_cls(loss={'temperature': 1.0, 'alpha': 1.0, 'pred_loss': 'mse'},
                          zoo={'registry': 'sdf', 'shapes': 8})
        data['experiment']['kind'] = 'single-sdf'
        cfg = parse_config(data)
        self.assertFalse(cfg.classification)
        data['loss']['pred_loss'] = 'kl'
        data['zoo'] = {'registry': 'classification', 'shapes': 1}
        self.assertFields(['loss.pred_loss', 'zoo.registry', 'zoo.shapes'], data)

    def test_multi_needs_boundary_architectures(self):
        self.assertTrue(parse_config(multi()).multi_arch)
        data = multi()
        data['zoo'] = {'counts': {'VanillaCNN': 4, 'ResNet32': 4}}
        err = self.assertFields(['zoo.counts'], data)
        self.assertPattern('LeNetLike and ResNet32', err.message())

    def test_multi_unseen_only_boundary(self):
        data = multi()
        data['experiment']['kind'] = 'multi-unseen'
        self.assertFields(['zoo.counts'], data)
        data['zoo'] = {'counts': {'LeNetLike': 4, 'ResNet32': 8}}
        self.assertEqual('multi-unseen', parse_config(data).kind)

    def test_existing_zoo_skips_count_checks(self):
        data = multi()
        data['zoo'] = {'counts': {'ResNet32': 4}, 'path': '/data/zoo/manifest.json'}
        self.assertEqual('/data/zoo/manifest.json', parse_config(data).zoo.path)

    def test_kd_class_lso(self):
        self.assertFields(['lso.objective'], single_cls(lso={'objective': 'kd+class'}))
        cfg = parse_config(multi(lso={'objective': 'kd+class'}))
        self.assertEqual('kd+class', cfg.lso.objective)

    def test_config_hash(self):
        first, second = parse_config(single_cls()), parse_config(single_cls())
        self.assertEqual(first.config_hash(), second.config_hash())
        self.assertEqual(40, len(first.config_hash()))
        other = parse_config(single_cls(), seed=1)
        self.assertNotEqual(first.config_hash(), other.config_hash())


class LoadConfigTest(TestCase):

    def test_load(self):
        path = os.path.join(self.tmpdir(), 'exp.toml')
        with open(path, 'w') as out:
            out.write('[experiment]\nkind = "single-cls"\n\n'
                      '[loss]\ntemperature = 4.0\nalpha = 0.5\n\n'
                      '[zoo]\ncounts = { ResNet8 = 6 }\n')
        cfg = load_config(path, seed=3)
        self.assertEqual(0.5, cfg.loss.alpha)
        self.assertEqual(3, cfg.seed)

    def test_missing_file(self):
        path = os.path.join(self.tmpdir(), 'nope.toml')
        with self.assertRaises(ConfigError) as ctx:
            load_config(path)
        self.assertPattern('Cannot read', ctx.exception.message())
        self.assertEqual(path, ctx.exception.fields[0][0])

    def test_not_toml(self):
        path = os.path.join(self.tmpdir(), 'bad.toml')
        with open(path, 'w') as out:
            out.write('[experiment\nkind = \n')
        with self.assertRaises(ConfigError) as ctx:
            load_config(path)
        self.assertPattern('Cannot parse', ctx.exception.message())


class ShippedConfigTest(TestCase):
    configs = os.path.join(os.path.dirname(__file__), os.pardir, os.pardir, 'configs')

    def test_all_valid(self):
        kinds = {}
        for name in sorted(os.listdir(self.configs)):
            cfg = load_config(os.path.join(self.configs, name))
            kinds[cfg.kind] = name
        self.assertEqual(sorted(experiment.KINDS), sorted(kinds))

    def test_multi_proportions(self):
        cfg = load_config(os.path.join(self.configs, 'multi_desk.toml'))
        counts = cfg.zoo.counts
        self.assertEqual(counts['LeNetLike'], counts['ResNet8'])
        self.assertLess(counts['VanillaCNN'], counts['LeNetLike'])
        self.assertGreater(counts['ResNet32'], counts['ResNet8'])
        for name, sizes in cfg.zoo.class_split.items():
            self.assertEqual(counts[name], sum(sizes.values()), name)

    def test_zoo_modes(self):
        modes = {}
        for name in sorted(os.listdir(self.configs)):
            cfg = load_config(os.path.join(self.configs, name))
            modes[cfg.kind] = cfg.zoo.mode
        self.assertEqual(zoo.CONVERGED, modes[experiment.MULTI])
        self.assertEqual(zoo.CONVERGED, modes[experiment.MULTI_UNSEEN])
        self.assertEqual(zoo.PERFORMANCE_DIVERSE, modes[experiment.SINGLE_CLS])


class ExperimentTest(TestCase):

    def test_write_config(self):
        cfg = parse_config(single_cls(), out=self.tmpdir())
        run = Experiment(cfg)
        run.write_config()
        with open(run.path(experiment.CONFIG_NAME)) as data:
            written = json.load(data)
        self.assertEqual(cfg.config_hash(), written['config_hash'])
        self.assertEqual('single-cls', written['config']['kind'])
        self.assertEqual({'ResNet8': 6}, written['config']['zoo']['counts'])

    def test_registries(self):
        cfg = parse_config(single_cls(dataset={'name': 'fake'}), out=self.tmpdir())
        self.assertEqual(4, len(Experiment(cfg).registry))
        sdf_data = single_cls(loss={'temperature': 1.0, 'alpha': 1.0, 'pred_loss': 'mse'},
                              zoo={'registry': 'sdf', 'shapes': 4})
        sdf_data['experiment']['kind'] = 'single-sdf'
        run = Experiment(parse_config(sdf_data, out=self.tmpdir()))
        self.assertEqual(['SirenMLP'], [spec.name for spec in run.registry])

    def test_lso_reports_test_accuracy(self):
        data = single_cls(dataset={'name': 'fake', 'eval_batch_size': 4, 'num_workers': 0},
                          lso={'val_batches': 2})
        run = Experiment(parse_config(data, out=self.tmpdir()))
        instance = archs.instantiate(tiny_registry().get('TinyLinear'), seed=1)
        target = train.Target(Mock(id='TinyLinear-000', metric=0.5), instance)
        run._model = Mock(multi_arch=False)
        run._loaders = (tiny_loader(size=32), tiny_loader(size=16, seed=1))
        # held-out scores improve while the test set gets worse
        result = explore.LsoResult(torch.zeros(8), instance, [(0, None, 0.2), (1, 1.0, 0.6)],
                                   0.2, 0.6, 0.8, 0.3)
        with patch.object(run, 'targets', return_value=[target]), \
                patch.object(run, 'teacher', return_value=(None, None)), \
                patch('wsl.experiment.explore.lso', return_value=result) as lso:
            rows = run.run_lso()
        self.assertEqual(0.8, rows[0]['initial'])
        self.assertEqual(0.3, rows[0]['optimized'])
        self.assertLess(rows[0]['optimized'], rows[0]['initial'])
        # optimization batches exclude the 2 x 4 held-out images
        fit_loader = lso.call_args[0][3]
        self.assertEqual(24, len(fit_loader.dataset))
        self.assertIsNotNone(lso.call_args[0][9])
        frame = pandas.read_csv(run.path('lso.csv'))
        self.assertEqual([0.3], list(frame['optimized']))


@unittest.skipUnless(ACCEPTANCE, 'set WSL_ACCEPTANCE to run whole experiments')
class SingleClassificationRunTest(TestCase):
    # small LeNetLike zoo on generated images; minutes on a cpu

    def test_run(self):
        out = self.tmpdir()
        data = single_cls(
            zoo={'counts': {'LeNetLike': 6}, 'split': {'train': 4, 'val': 1, 'test': 1},
                 'min_steps': 2, 'max_steps': 8},
            dataset={'name': 'fake', 'fake_size': 64, 'batch_size': 16,
                     'eval_batch_size': 32, 'augment': False, 'num_workers': 0},
            encoder={'embedding_dim': 16},
            decoder={'embedding_dim': 16, 'base_channels': 8, 'blocks': 2},
            train={'epochs': 2, 'instance_repeats': 1, 'instance_batch': 2, 'val_batches': 1},
            sweep={'steps': 3, 'max_batches': 1},
            lso={'steps': 2, 'eval_every': 1, 'val_batches': 1},
            teacher={'arch': 'LeNetLike', 'steps': 4})
        cfg = parse_config(data, out=out)
        self.assertEqual(out, Experiment(cfg).run())
        for name in ('config.json', 'fidelity.csv', 'lso.csv', 'report.md',
                     os.path.join('sweeps', 'latent.csv'), os.path.join('zoo', 'manifest.json')):
            self.assertTrue(os.path.exists(os.path.join(out, name)), name)
        with open(os.path.join(out, 'report.md')) as report:
            self.assertPattern(cfg.config_hash(), report.read())


if __name__ == '__main__':
    unittest.main()
