# file wsl/archs.py
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

"""Catalog of target architectures.

Architectures are grouped into registries.  Within a registry each
architecture has a ClassId, and ClassIds are assigned in strictly
increasing order of parameter count; :meth:`Registry.register` refuses
any spec that would break that ordering.  Three registries are
available by default:

 * :data:`CLASSIFICATION` -- LeNetLike, VanillaCNN, ResNet8 and ResNet32
   for 32x32 RGB images and 10 classes
 * :data:`SDF` -- SirenMLP, a single hidden layer of 256 periodic units
 * :data:`TEACHERS` -- ResNet56, the distillation teacher

Instances are evaluated functionally: a :class:`NetworkInstance` is an
architecture plus a named tensor map, and :func:`forward_logits` runs a
shared template module in evaluation mode with those tensors swapped
in.  Nothing is copied into the template, so instances stay immutable
and gradients flow back into the tensors (decoded parameter matrices
included).
"""

from collections import OrderedDict
import hashlib
import logging
import math

import torch
from torch import nn
import torch.nn.functional as F

from wsl import codec
from wsl.exceptions import RegistryError, ShapeError

__all__ = ['ArchSpec', 'Registry', 'NetworkInstance', 'CLASSIFICATION', 'SDF',
           'TEACHERS', 'get_registry', 'get_arch', 'list_architectures',
           'instantiate', 'forward_logits', 'extract_params', 'blend_params',
           'evaluate_accuracy', 'predictions', 'archs_hash', 'classification_registry']

logger = logging.getLogger(__name__)


class LeNetLike(nn.Module):
    "Two 5x5 convolution + pooling stages followed by two linear layers."

    def __init__(self, num_classes=10, image_size=32, in_channels=3):
        super(LeNetLike, self).__init__()
        self.conv1 = nn.Conv2d(in_channels, 6, kernel_size=5)
        self.conv2 = nn.Conv2d(6, 16, kernel_size=5)
        side = ((image_size - 4) // 2 - 4) // 2
        self.fc1 = nn.Linear(16 * side * side, 120)
        self.fc2 = nn.Linear(120, num_classes)

    def forward(self, x):
        out = F.max_pool2d(F.relu(self.conv1(x)), 2)
        out = F.max_pool2d(F.relu(self.conv2(out)), 2)
        out = torch.flatten(out, 1)
        out = F.relu(self.fc1(out))
        return self.fc2(out)


class VanillaCNN(nn.Module):
    "Four 3x3 convolution stages followed by one linear layer."

    widths = (16, 32, 64, 64)

    def __init__(self, num_classes=10, image_size=32, in_channels=3):
        super(VanillaCNN, self).__init__()
        layers = []
        channels = in_channels
        for width in self.widths:
            layers.extend([
                nn.Conv2d(channels, width, kernel_size=3, padding=1, bias=False),
                nn.BatchNorm2d(width),
                nn.ReLU(),
                nn.MaxPool2d(2),
            ])
            channels = width
        self.features = nn.Sequential(*layers)
        side = image_size // 2 ** len(self.widths)
        self.fc = nn.Linear(channels * side * side, num_classes)

    def forward(self, x):
        return self.fc(torch.flatten(self.features(x), 1))


class ResidualBlock(nn.Module):
    "Two 3x3 convolutions with a skip connection; 1x1 projection when the shape changes."

    def __init__(self, in_channels, out_channels, stride=1):
        super(ResidualBlock, self).__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=stride,
                               padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, kernel_size=3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, kernel_size=1, stride=stride, bias=False),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return F.relu(out + self.shortcut(x))


class ResNet(nn.Module):
    """CIFAR-style residual network of depth ``6n + 2``.

    :param depth: 8, 32, 56, ...
    :param widths: channels of the three stages
    """

    def __init__(self, depth, num_classes=10, widths=(20, 40, 80), in_channels=3):
        super(ResNet, self).__init__()
        if (depth - 2) % 6:
            raise ValueError('ResNet depth must be 6n+2, got %d' % depth)
        blocks = (depth - 2) // 6
        self.conv1 = nn.Conv2d(in_channels, widths[0], kernel_size=3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(widths[0])
        stages = []
        channels = widths[0]
        for index, width in enumerate(widths):
            stride = 1 if index == 0 else 2
            stage = []
            for block in range(blocks):
                stage.append(ResidualBlock(channels, width, stride if block == 0 else 1))
                channels = width
            stages.append(nn.Sequential(*stage))
        self.stages = nn.Sequential(*stages)
        self.fc = nn.Linear(channels, num_classes)

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.stages(out)
        out = F.adaptive_avg_pool2d(out, 1)
        return self.fc(torch.flatten(out, 1))


class Sine(nn.Module):
    "Sine activation with frequency multiplier ``w0``."

    def __init__(self, w0=30.0):
        super(Sine, self).__init__()
        self.w0 = w0

    def forward(self, x):
        return torch.sin(self.w0 * x)


class SirenMLP(nn.Module):
    """Coordinate MLP with one periodic hidden layer, regressing a signed distance.

    :param hidden: hidden layer width
    :param w0: frequency multiplier of the first layer
    """

    def __init__(self, hidden=256, w0=30.0, in_features=3):
        super(SirenMLP, self).__init__()
        self.hidden = nn.Linear(in_features, hidden)
        self.activation = Sine(w0)
        self.out = nn.Linear(hidden, 1)
        with torch.no_grad():
            self.hidden.weight.uniform_(-1.0 / in_features, 1.0 / in_features)
            bound = math.sqrt(6.0 / hidden) / w0
            self.out.weight.uniform_(-bound, bound)

    def forward(self, x):
        return self.out(self.activation(self.hidden(x)))


class ArchSpec(object):
    """A registered architecture.

    :param name: architecture name
    :param class_id: ClassId within its registry
    :param input_shape: shape of one input sample (no batch dimension)
    :param output_dim: number of outputs per sample
    :param builder: callable returning a freshly initialized module
    """

    def __init__(self, name, class_id, input_shape, output_dim, builder):
        self.name = name
        self.class_id = class_id
        self.input_shape = tuple(input_shape)
        self.output_dim = output_dim
        self.builder = builder
        self._templates = {}

    def build(self):
        "Return a new randomly initialized module."
        return self.builder()

    def layout(self, config=None):
        return codec.build_layout(self, config)

    @property
    def param_count(self):
        "Number of values in the layout (learnable tensors and running statistics)."
        return self.layout().total_params

    def template(self, device=None):
        "Shared evaluation-mode module used for functional forward passes."
        key = str(torch.device(device or 'cpu'))
        if key not in self._templates:
            module = self.build().to(key)
            module.eval()
            for param in module.parameters():
                param.requires_grad_(False)
            self._templates[key] = module
        return self._templates[key]

    def __repr__(self):
        return '<%s %s:%d>' % (self.__class__.__name__, self.name, self.class_id)


class Registry(object):
    """An ordered catalog of architectures.

    :param name: registry name (``classification``, ``sdf``, ...)
    """

    def __init__(self, name):
        self.name = name
        self._specs = OrderedDict()

    def register(self, spec):
        """Add an architecture.

        :raises RegistryError: on duplicate names or ClassIds, or when
            ClassIds would not be strictly increasing in parameter count
        """
        if spec.name in self._specs:
            raise RegistryError('%s already registered in %s' % (spec.name, self.name))
        specs = list(self._specs.values()) + [spec]
        if len(set(s.class_id for s in specs)) != len(specs):
            raise RegistryError('ClassId %d already used in %s' % (spec.class_id, self.name))
        ordered = sorted(specs, key=lambda s: s.class_id)
        for smaller, larger in zip(ordered, ordered[1:]):
            if not smaller.param_count < larger.param_count:
                raise RegistryError(
                    'ClassId order violates parameter count order in %s: %s (%d) >= %s (%d)' % (
                        self.name, smaller.name, smaller.param_count,
                        larger.name, larger.param_count))
        self._specs[spec.name] = spec
        logger.debug('register %s in %s (%d params)', spec.name, self.name, spec.param_count)
        return spec

    def get(self, name):
        try:
            return self._specs[name]
        except KeyError:
            raise RegistryError('unknown architecture %s in %s registry' % (name, self.name))

    def by_class_id(self, class_id):
        for spec in self._specs.values():
            if spec.class_id == class_id:
                return spec
        raise RegistryError('no architecture with ClassId %s in %s registry' % (class_id, self.name))

    def list_architectures(self):
        "Architectures sorted by ClassId."
        return sorted(self._specs.values(), key=lambda s: s.class_id)

    def subset(self, names):
        "A new registry holding only the named architectures (ClassIds kept)."
        sub = Registry(self.name)
        for name in names:
            sub.register(self.get(name))
        return sub

    def registry_hash(self):
        return archs_hash(self.list_architectures())

    def __contains__(self, name):
        return name in self._specs

    def __iter__(self):
        return iter(self.list_architectures())

    def __len__(self):
        return len(self._specs)


def archs_hash(specs):
    "SHA-1 over names, ClassIds and layouts of a list of architectures."
    sha = hashlib.sha1()
    for spec in sorted(specs, key=lambda s: s.class_id):
        sha.update(('%s:%d:%s;' % (spec.name, spec.class_id,
                                   codec.layout_hash(spec.layout()))).encode('utf-8'))
    return sha.hexdigest()


def classification_registry(num_classes=10, image_size=32):
    "Registry of the four classification architectures for a dataset."
    shape = (3, image_size, image_size)
    registry = Registry('classification')
    registry.register(ArchSpec('LeNetLike', 0, shape, num_classes,
                               lambda: LeNetLike(num_classes, image_size)))
    registry.register(ArchSpec('VanillaCNN', 1, shape, num_classes,
                               lambda: VanillaCNN(num_classes, image_size)))
    registry.register(ArchSpec('ResNet8', 2, shape, num_classes,
                               lambda: ResNet(8, num_classes)))
    registry.register(ArchSpec('ResNet32', 3, shape, num_classes,
                               lambda: ResNet(32, num_classes)))
    return registry


def teacher_registry(num_classes=10, image_size=32):
    "Registry of distillation teachers."
    shape = (3, image_size, image_size)
    registry = Registry('teachers')
    registry.register(ArchSpec('ResNet56', 0, shape, num_classes,
                               lambda: ResNet(56, num_classes)))
    return registry


def sdf_registry():
    registry = Registry('sdf')
    registry.register(ArchSpec('SirenMLP', 0, (3,), 1, lambda: SirenMLP(256)))
    return registry


CLASSIFICATION = classification_registry()
SDF = sdf_registry()
TEACHERS = teacher_registry()

_registries = {
    'classification': CLASSIFICATION,
    'sdf': SDF,
    'teachers': TEACHERS,
}
_dataset_registries = {}


def get_registry(name, num_classes=10, image_size=32):
    """Find a registry by name.

    Classification and teacher registries for datasets other than
    CIFAR-10 are built on request.
    """
    if name not in _registries:
        raise RegistryError('unknown registry %s' % name)
    if (num_classes, image_size) == (10, 32) or name == 'sdf':
        return _registries[name]
    key = (name, num_classes, image_size)
    if key not in _dataset_registries:
        factory = classification_registry if name == 'classification' else teacher_registry
        _dataset_registries[key] = factory(num_classes, image_size)
    return _dataset_registries[key]


def get_arch(name, registry=None):
    """Find an architecture by name.

    :param registry: registry to search; defaults to searching all
    :raises RegistryError: if not found
    """
    if registry is not None:
        return registry.get(name)
    for reg in _registries.values():
        if name in reg:
            return reg.get(name)
    raise RegistryError('unknown architecture %s' % name)


def list_architectures(registry='classification'):
    "Architectures of a registry sorted by ClassId."
    if not isinstance(registry, Registry):
        registry = get_registry(registry)
    return registry.list_architectures()


class NetworkInstance(object):
    """An architecture with specific parameter values.

    :param arch: :class:`ArchSpec`
    :param params: ordered map of tensor name to tensor, conforming to
        the architecture layout
    """

    def __init__(self, arch, params):
        self.arch = arch
        self.params = params

    @property
    def layout(self):
        return self.arch.layout()

    @property
    def device(self):
        return next(iter(self.params.values())).device

    def to(self, device):
        return NetworkInstance(self.arch, OrderedDict(
            (name, t.to(device)) for name, t in self.params.items()))

    def detach(self):
        return NetworkInstance(self.arch, OrderedDict(
            (name, t.detach()) for name, t in self.params.items()))

    def prep(self):
        "The instance parameter matrix."
        return codec.flatten(self.params, self.layout)

    def __repr__(self):
        return '<%s %s>' % (self.__class__.__name__, self.arch.name)


def extract_params(module, layout):
    "Snapshot the layout tensors of a module as detached float32 copies."
    tensors = dict(module.named_parameters())
    tensors.update(module.named_buffers())
    return OrderedDict((e.tensor_name, tensors[e.tensor_name].detach().clone().float())
                       for e in layout.entries)


def instantiate(spec, params=None, seed=None):
    """Create an instance of an architecture.

    :param spec: :class:`ArchSpec`
    :param params: optional tensor map; checked against the layout
    :param seed: optional seed for random initialization; the global
        random state is left untouched when given
    :rtype: :class:`NetworkInstance`
    """
    layout = spec.layout()
    if params is not None:
        codec.check_params(params, layout)
        return NetworkInstance(spec, OrderedDict(
            (e.tensor_name, params[e.tensor_name]) for e in layout.entries))
    if seed is None:
        return NetworkInstance(spec, extract_params(spec.build(), layout))
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        module = spec.build()
    return NetworkInstance(spec, extract_params(module, layout))


def forward_logits(instance, batch):
    """Evaluate an instance on a batch in inference mode.

    Gradients are not disabled here; wrap in :func:`torch.no_grad` when
    they are not needed.

    :param instance: :class:`NetworkInstance`
    :param batch: tensor of shape ``(N,) + input_shape``
    :rtype: tensor of shape ``(N, output_dim)``
    """
    spec = instance.arch
    if tuple(batch.shape[1:]) != spec.input_shape:
        raise ShapeError('%s expects inputs of shape %s, got %s' % (
            spec.name, spec.input_shape, tuple(batch.shape[1:])))
    module = spec.template(batch.device)
    return torch.func.functional_call(module, dict(instance.params), (batch,))


def blend_params(params_a, params_b, gamma):
    "Linear blend ``(1 - gamma) * a + gamma * b`` of two tensor maps."
    return OrderedDict((name, (1.0 - gamma) * params_a[name] + gamma * params_b[name])
                       for name in params_a)


def predictions(instance, loader, device=None, max_batches=None):
    """Predicted labels and ground truth over a loader.

    :rtype: tuple of two 1-D tensors ``(predicted, labels)``
    """
    device = device or instance.device
    preds, labels = [], []
    with torch.no_grad():
        for index, (images, targets) in enumerate(loader):
            if max_batches is not None and index >= max_batches:
                break
            logits = forward_logits(instance, images.to(device))
            preds.append(logits.argmax(dim=1).cpu())
            labels.append(targets.cpu())
    return torch.cat(preds), torch.cat(labels)


def evaluate_accuracy(instance, loader, device=None, max_batches=None):
    "Fraction of correctly classified samples in ``loader``."
    preds, labels = predictions(instance, loader, device, max_batches)
    if not len(labels):
        return 0.0
    return (preds == labels).float().mean().item()
