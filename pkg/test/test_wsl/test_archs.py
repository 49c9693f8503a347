# file test_wsl/test_archs.py
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

import unittest

import torch
from torch import nn

from wsl import archs
from wsl.exceptions import RegistryError, ShapeError
from wsl.testutil import TestCase, TINY_IMAGE, tiny_loader, tiny_registry


class RegistryTest(TestCase):

    def test_classification_order(self):
        names = [spec.name for spec in archs.list_architectures('classification')]
        self.assertEqual(['LeNetLike', 'VanillaCNN', 'ResNet8', 'ResNet32'], names)
        counts = [spec.param_count for spec in archs.CLASSIFICATION]
        self.assertEqual(sorted(counts), counts)
        self.assertEqual(len(set(counts)), len(counts))
        self.assertEqual([0, 1, 2, 3], [spec.class_id for spec in archs.CLASSIFICATION])

    def test_param_count_matches_module(self):
        spec = archs.CLASSIFICATION.get('ResNet8')
        module = spec.build()
        expected = sum(p.numel() for p in module.parameters())
        expected += sum(b.numel() for name, b in module.named_buffers()
                        if not name.endswith('num_batches_tracked'))
        self.assertEqual(expected, spec.param_count)

    def test_lookup(self):
        self.assertEqual('ResNet8', archs.get_arch('ResNet8').name)
        self.assertEqual('SirenMLP', archs.get_arch('SirenMLP').name)
        self.assertEqual('ResNet56', archs.get_arch('ResNet56', archs.TEACHERS).name)
        self.assertEqual('VanillaCNN', archs.CLASSIFICATION.by_class_id(1).name)
        self.assertRaises(RegistryError, archs.get_arch, 'ResNet9000')
        self.assertRaises(RegistryError, archs.CLASSIFICATION.by_class_id, 7)
        self.assertRaises(RegistryError, archs.get_registry, 'nope')
        self.assertIn('ResNet32', archs.CLASSIFICATION)
        self.assertEqual(4, len(archs.CLASSIFICATION))

    def test_error_message_unquoted(self):
        try:
            archs.get_arch('Missing')
        except RegistryError as err:
            self.assertEqual('unknown architecture Missing', str(err))

    def test_register_rejects_bad_order(self):
        registry = archs.Registry('test')
        registry.register(archs.ArchSpec('Big', 0, (4,), 2, lambda: nn.Linear(4, 20)))
        # larger ClassId with fewer parameters
        self.assertRaises(RegistryError, registry.register,
                          archs.ArchSpec('Small', 1, (4,), 2, lambda: nn.Linear(4, 2)))
        self.assertRaises(RegistryError, registry.register,
                          archs.ArchSpec('Big', 2, (4,), 2, lambda: nn.Linear(4, 40)))
        self.assertRaises(RegistryError, registry.register,
                          archs.ArchSpec('Other', 0, (4,), 2, lambda: nn.Linear(4, 40)))
        self.assertEqual(1, len(registry))

    def test_subset_keeps_class_ids(self):
        sub = archs.CLASSIFICATION.subset(['LeNetLike', 'ResNet32'])
        self.assertEqual([0, 3], [spec.class_id for spec in sub])
        self.assertNotEqual(sub.registry_hash(), archs.CLASSIFICATION.registry_hash())

    def test_dataset_registries(self):
        mnist = archs.get_registry('classification', num_classes=10, image_size=28)
        self.assertIsNot(mnist, archs.CLASSIFICATION)
        self.assertIs(mnist, archs.get_registry('classification', 10, 28))
        self.assertEqual(archs.CLASSIFICATION.get('LeNetLike').input_shape, (3, 32, 32))
        self.assertEqual(mnist.get('LeNetLike').input_shape, (3, 28, 28))


class InstanceTest(TestCase):

    def test_forward_shape(self):
        for spec in archs.CLASSIFICATION:
            instance = archs.instantiate(spec, seed=0)
            with torch.no_grad():
                logits = archs.forward_logits(instance, torch.randn(2, 3, 32, 32))
            self.assertEqual((2, 10), tuple(logits.shape), spec.name)

    def test_siren_output(self):
        instance = archs.instantiate(archs.SDF.get('SirenMLP'), seed=0)
        with torch.no_grad():
            values = archs.forward_logits(instance, torch.rand(5, 3))
        self.assertEqual((5, 1), tuple(values.shape))
        self.assertEqual((256, 3), tuple(instance.params['hidden.weight'].shape))
        self.assertEqual(['hidden.weight', 'hidden.bias', 'out.weight', 'out.bias'],
                         list(instance.params))

    def test_zero_parameters_constant_logits(self):
        spec = archs.CLASSIFICATION.get('LeNetLike')
        zeros = dict((e.tensor_name, torch.zeros(e.tensor_shape)) for e in spec.layout().entries)
        instance = archs.instantiate(spec, zeros)
        with torch.no_grad():
            logits = archs.forward_logits(instance, torch.randn(4, 3, 32, 32))
        self.assertTensorEqual(torch.zeros(4, 10), logits)

    def test_shape_error(self):
        instance = archs.instantiate(archs.CLASSIFICATION.get('LeNetLike'), seed=0)
        self.assertRaises(ShapeError, archs.forward_logits, instance, torch.randn(2, 3, 28, 28))

    def test_seeded_instantiation(self):
        spec = tiny_registry().get('TinyMLP')
        state = torch.random.get_rng_state()
        first = archs.instantiate(spec, seed=5)
        self.assertTrue(torch.equal(state, torch.random.get_rng_state()))
        second = archs.instantiate(spec, seed=5)
        other = archs.instantiate(spec, seed=6)
        self.assertTensorEqual(first.prep().values, second.prep().values)
        self.assertFalse(torch.equal(first.prep().values, other.prep().values))

    def test_forward_is_differentiable(self):
        spec = tiny_registry().get('TinyConv')
        instance = archs.instantiate(spec, seed=0)
        params = dict((name, t.clone().requires_grad_(True)) for name, t in instance.params.items())
        logits = archs.forward_logits(archs.NetworkInstance(spec, params), torch.randn(2, *TINY_IMAGE))
        logits.sum().backward()
        self.assertIsNotNone(params['5.weight'].grad)
        # evaluation mode: running statistics are used, not updated
        self.assertTensorEqual(instance.params['1.running_mean'], params['1.running_mean'].detach())

    def test_blend(self):
        a = {'w': torch.zeros(3)}
        b = {'w': torch.ones(3)}
        self.assertTensorEqual(torch.full((3,), 0.25), archs.blend_params(a, b, 0.25)['w'])
        self.assertTensorEqual(a['w'], archs.blend_params(a, b, 0.0)['w'])

    def test_accuracy_range(self):
        instance = archs.instantiate(tiny_registry().get('TinyLinear'), seed=0)
        accuracy = archs.evaluate_accuracy(instance, tiny_loader())
        self.assertGreaterEqual(accuracy, 0.0)
        self.assertLessEqual(accuracy, 1.0)
        preds, labels = archs.predictions(instance, tiny_loader(), max_batches=2)
        self.assertEqual(16, len(preds))
        self.assertEqual(16, len(labels))


if __name__ == '__main__':
    unittest.main()
