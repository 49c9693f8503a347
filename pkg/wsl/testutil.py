# file wsl/testutil.py
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
"""
:mod:`wsl.testutil` provides utilities for writing tests against code
that makes use of :mod:`wsl` without downloading data or training real
networks.

:class:`TestCase` adds a few assertions and a temporary directory per
test.  The fixtures build tiny stand-ins for the real setting: a
four-architecture registry on ``3 x 4 x 4`` images, image loaders of
random tensors, small weight-space models and zoos of untrained
instances::

    registry = tiny_registry()
    loader = tiny_loader()
    manifest = tiny_zoo(self.tmpdir(), registry, {'TinyConv': 4, 'TinyDeep': 4})

----

"""

import os
import re
import shutil
import tempfile
import unittest

import torch
from torch import nn
from torch.utils.data import DataLoader, TensorDataset

from wsl import archs, codec, storage
from wsl.models import DecoderConfig, EncoderConfig, WeightSpaceModel
from wsl.zoo import InstanceRecord, ZooManifest

__all__ = ['TestCase', 'TINY_IMAGE', 'tiny_registry', 'tiny_sdf_registry', 'tiny_loader',
           'tiny_point_loader', 'tiny_model', 'tiny_zoo']

TINY_IMAGE = (3, 4, 4)
TINY_CLASSES = 10


class TestCase(unittest.TestCase):
    "Customization of :class:`unittest.TestCase` with tensor assertions and scratch space."

    def assertPattern(self, regex, text, msg_prefix=''):
        """Assert that a string matches a regular expression (regex compiled as multiline).
           Allows for more flexible matching than assertIn.
         """
        if msg_prefix != '':
            msg_prefix += '.  '
        self.assertTrue(re.search(re.compile(regex, re.DOTALL), text),
                        msg_prefix + "Should match '%s'" % regex)

    def assertTensorEqual(self, first, second, msg=None):
        "Same shape and bitwise identical values."
        self.assertEqual(tuple(first.shape), tuple(second.shape), msg)
        self.assertTrue(torch.equal(first, second), msg or 'tensors differ')

    def assertTensorClose(self, first, second, rtol=1e-5, atol=1e-6, msg=None):
        self.assertEqual(tuple(first.shape), tuple(second.shape), msg)
        self.assertTrue(torch.allclose(first, second, rtol=rtol, atol=atol),
                        msg or 'tensors differ by up to %g' % float((first - second).abs().max()))

    def tmpdir(self):
        "A temporary directory removed after the test."
        path = tempfile.mkdtemp(prefix='wsl-test-')
        self.addCleanup(shutil.rmtree, path, True)
        return path


def _tiny_conv():
    return nn.Sequential(nn.Conv2d(3, 8, 3, padding=1), nn.BatchNorm2d(8), nn.ReLU(),
                         nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(8, TINY_CLASSES))


def _tiny_linear():
    return nn.Sequential(nn.Flatten(), nn.Linear(48, TINY_CLASSES))


def _tiny_mlp(hidden):
    return nn.Sequential(nn.Flatten(), nn.Linear(48, hidden), nn.ReLU(),
                         nn.Linear(hidden, TINY_CLASSES))


def tiny_registry(name='tiny'):
    """Four small classifiers with increasing parameter counts.

    ``TinyConv`` (ClassId 0, with batch normalization), ``TinyLinear`` (1),
    ``TinyMLP`` (2) and ``TinyDeep`` (3).
    """
    registry = archs.Registry(name)
    registry.register(archs.ArchSpec('TinyConv', 0, TINY_IMAGE, TINY_CLASSES, _tiny_conv))
    registry.register(archs.ArchSpec('TinyLinear', 1, TINY_IMAGE, TINY_CLASSES, _tiny_linear))
    registry.register(archs.ArchSpec('TinyMLP', 2, TINY_IMAGE, TINY_CLASSES,
                                     lambda: _tiny_mlp(16)))
    registry.register(archs.ArchSpec('TinyDeep', 3, TINY_IMAGE, TINY_CLASSES,
                                     lambda: _tiny_mlp(32)))
    return registry


def tiny_sdf_registry():
    "A single narrow SirenMLP."
    registry = archs.Registry('sdf')
    registry.register(archs.ArchSpec('SirenMLP', 0, (3,), 1, lambda: archs.SirenMLP(16)))
    return registry


def tiny_loader(size=32, batch_size=8, seed=0):
    "Random images with random labels."
    generator = torch.Generator().manual_seed(seed)
    images = torch.randn((size,) + TINY_IMAGE, generator=generator)
    labels = torch.randint(0, TINY_CLASSES, (size,), generator=generator)
    return DataLoader(TensorDataset(images, labels), batch_size=batch_size, shuffle=False)


def tiny_point_loader(size=64, batch_size=16, seed=0):
    "Random 3-D points with zero targets."
    generator = torch.Generator().manual_seed(seed)
    points = torch.rand((size, 3), generator=generator) * 2 - 1
    return DataLoader(TensorDataset(points, torch.zeros(size, dtype=torch.long)),
                      batch_size=batch_size)


def tiny_model(specs, embedding_dim=8, layout_config=None):
    "A small :class:`~wsl.models.WeightSpaceModel` over ``specs``."
    encoder = EncoderConfig(embedding_dim=embedding_dim, horizontal_channels=(2,),
                            vertical_channels=(2,), kernel_size=3, pooled_shape=(2, 2))
    decoder = DecoderConfig(embedding_dim=embedding_dim, base_channels=4, blocks=1)
    return WeightSpaceModel(encoder, decoder, specs, layout_config)


def tiny_zoo(root, registry, counts, seed=0, split=None, metrics=None):
    """Write a zoo of untrained instances.

    :param counts: instances per architecture name
    :param split: optional ``{record id: split}``; records default to ``train``
    :param metrics: optional ``{record id: metric}``; defaults to a value
        increasing with the record index
    :rtype: :class:`~wsl.zoo.ZooManifest`, saved under ``root``
    """
    manifest = ZooManifest('tiny', registry.name, [], None, root)
    for spec in registry.list_architectures():
        for index in range(counts.get(spec.name, 0)):
            record_id = '%s-%03d' % (spec.name, index)
            instance = archs.instantiate(spec, seed=seed * 1000 + spec.class_id * 100 + index)
            record = InstanceRecord(
                id=record_id, arch_name=spec.name, class_id=spec.class_id,
                weights_path=os.path.join('weights', record_id + '.prep'),
                seed=seed * 1000 + index, steps=index + 1,
                metric=(metrics or {}).get(record_id, 0.1 + 0.01 * index),
                split=(split or {}).get(record_id, 'train'))
            storage.write_prep(manifest.weights_file(record),
                               codec.flatten(instance.params, instance.layout))
            manifest.add(record)
    manifest.save()
    return manifest
