# file wsl/models.py
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

"""Encoder, decoder and architecture classifier over parameter matrices.

The :class:`Encoder` maps a parameter matrix of any size to an embedding
of fixed length: horizontal ``1 x k`` convolutions first, then vertical
``k x 1`` convolutions, each followed by 2x max-pooling along the
convolved axis, then adaptive average pooling and a linear map.

The :class:`Decoder` maps an embedding back to one matrix of the largest
registered shape: a linear map to a small ``64 x h0 x w0`` volume, then
blocks that quadruple channels with a 3x3 convolution and rearrange
depth into 2x spatial resolution, a final 1-channel convolution, a crop
and an independent scale and bias per output cell.  Every architecture
reads its parameters from the row-major prefix of that matrix.

:class:`WeightSpaceModel` bundles both with the optional
:class:`ArchClassifier` head used when several architectures share one
latent space.
"""

from collections import OrderedDict
import dataclasses
import hashlib
import logging
import math
from typing import Optional, Tuple

import torch
from torch import nn
import torch.nn.functional as F

from wsl import archs, codec, storage
from wsl.conf import from_table, to_plain
from wsl.exceptions import ConfigError, FormatError, PRepSizeError

__all__ = ['EncoderConfig', 'DecoderConfig', 'Encoder', 'Decoder', 'ElementwiseAffine',
           'ArchClassifier', 'WeightSpaceModel', 'max_prep_shape', 'model_hash',
           'save_model', 'load_model']

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class EncoderConfig:
    """Encoder hyperparameters.

    :param embedding_dim: embedding length E
    :param horizontal_channels: output channels of the ``1 x k`` stages
    :param vertical_channels: output channels of the ``k x 1`` stages
    :param kernel_size: k
    :param pooled_shape: adaptive pooling output before the linear map
    """
    embedding_dim: int = 256
    horizontal_channels: Tuple[int, ...] = (8, 16, 32)
    vertical_channels: Tuple[int, ...] = (32, 32, 32)
    kernel_size: int = 9
    pooled_shape: Tuple[int, int] = (4, 4)

    def __post_init__(self):
        if self.embedding_dim < 1:
            raise ValueError('embedding_dim must be positive')
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError('kernel_size must be a positive odd number')
        if not self.horizontal_channels or not self.vertical_channels:
            raise ValueError('encoder needs at least one horizontal and one vertical stage')


@dataclasses.dataclass
class DecoderConfig:
    """Decoder hyperparameters.

    :param embedding_dim: embedding length E, equal to the encoder's
    :param base_channels: channels of the volume produced by the linear map
    :param blocks: number of depth-to-space blocks (each doubles H and W
        and keeps ``base_channels``)
    :param max_prep_shape: output ``(H, W)``; defaults to the largest
        matrix among the decoded architectures
    :param affine_scale_init: initial per-cell scale
    """
    embedding_dim: int = 256
    base_channels: int = 64
    blocks: int = 5
    max_prep_shape: Optional[Tuple[int, int]] = None
    affine_scale_init: float = 0.01

    def __post_init__(self):
        if self.embedding_dim < 1 or self.base_channels < 1:
            raise ValueError('decoder sizes must be positive')
        if self.blocks < 0:
            raise ValueError('blocks must not be negative')


def max_prep_shape(specs, layout_config=None):
    "``(max H, max W)`` over the layouts of ``specs``."
    shapes = [codec.build_layout(spec, layout_config).shape for spec in specs]
    return (max(s[0] for s in shapes), max(s[1] for s in shapes))


def _as_matrix(prep):
    values = prep.values if isinstance(prep, codec.PRep) else prep
    if values.dim() != 2:
        raise PRepSizeError('expected a 2-D parameter matrix, got shape %s' % (tuple(values.shape),))
    if values.shape[0] == 0 or values.shape[1] == 0:
        raise PRepSizeError('cannot encode an empty parameter matrix')
    return values


class Encoder(nn.Module):
    "Parameter matrix of any size to a fixed-length embedding."

    def __init__(self, config):
        super(Encoder, self).__init__()
        self.config = config
        pad = config.kernel_size // 2
        channels = 1
        self.horizontal = nn.ModuleList()
        for width in config.horizontal_channels:
            self.horizontal.append(nn.Conv2d(channels, width, (1, config.kernel_size),
                                             padding=(0, pad)))
            channels = width
        self.vertical = nn.ModuleList()
        for width in config.vertical_channels:
            self.vertical.append(nn.Conv2d(channels, width, (config.kernel_size, 1),
                                           padding=(pad, 0)))
            channels = width
        self.pool = nn.AdaptiveAvgPool2d(config.pooled_shape)
        rows, cols = config.pooled_shape
        self.linear = nn.Linear(channels * rows * cols, config.embedding_dim)

    def forward(self, prep):
        """Embed one matrix.

        :param prep: :class:`~wsl.codec.PRep` or ``H x W`` tensor
        :rtype: tensor of length E
        """
        x = _as_matrix(prep)[None, None]
        for conv in self.horizontal:
            x = F.silu(conv(x))
            # pooling is skipped once an axis is down to one cell
            if x.shape[-1] > 1:
                x = F.max_pool2d(x, (1, 2), ceil_mode=True)
        for conv in self.vertical:
            x = F.silu(conv(x))
            if x.shape[-2] > 1:
                x = F.max_pool2d(x, (2, 1), ceil_mode=True)
        x = self.pool(x)
        return self.linear(torch.flatten(x, 1))[0]


class ElementwiseAffine(nn.Module):
    """``y = a * z + b`` with an independent ``a`` and ``b`` per cell.

    :param shape: ``(H, W)``
    :param scale_init: initial value of every ``a``
    """

    def __init__(self, shape, scale_init=0.01):
        super(ElementwiseAffine, self).__init__()
        self.scale = nn.Parameter(torch.full(tuple(shape), float(scale_init)))
        self.bias = nn.Parameter(torch.zeros(tuple(shape)))

    def forward(self, z):
        return z * self.scale + self.bias


class DepthToSpaceBlock(nn.Module):
    """3x3 convolution quadrupling the channels, then a 2x pixel shuffle
    back to ``channels`` at twice the height and width."""

    def __init__(self, channels):
        super(DepthToSpaceBlock, self).__init__()
        self.conv = nn.Conv2d(channels, 4 * channels, kernel_size=3, padding=1)
        self.shuffle = nn.PixelShuffle(2)

    def forward(self, x):
        return self.shuffle(F.silu(self.conv(x)))


class Decoder(nn.Module):
    """Embedding to a ``max_prep_shape`` parameter matrix.

    :param config: :class:`DecoderConfig` with ``max_prep_shape`` set
    """

    def __init__(self, config):
        super(Decoder, self).__init__()
        if config.max_prep_shape is None:
            raise ConfigError('decoder.max_prep_shape must be resolved before building a decoder')
        self.config = config
        rows, cols = config.max_prep_shape
        scale = 2 ** config.blocks
        self.seed_shape = (int(math.ceil(rows / float(scale))), int(math.ceil(cols / float(scale))))
        self.linear = nn.Linear(config.embedding_dim,
                                config.base_channels * self.seed_shape[0] * self.seed_shape[1])
        self.blocks = nn.Sequential(*[DepthToSpaceBlock(config.base_channels)
                                      for _ in range(config.blocks)])
        self.head = nn.Conv2d(config.base_channels, 1, kernel_size=3, padding=1)
        self.affine = ElementwiseAffine((rows, cols), config.affine_scale_init)

    def forward(self, embedding):
        """Decode one embedding (``E``) or a batch (``B x E``).

        :rtype: ``H x W`` or ``B x H x W`` tensor
        """
        single = embedding.dim() == 1
        if single:
            embedding = embedding[None]
        rows, cols = self.config.max_prep_shape
        x = self.linear(embedding).view(-1, self.config.base_channels, *self.seed_shape)
        x = self.head(self.blocks(F.silu(x)))
        z = x[:, 0, :rows, :cols]
        out = self.affine(z)
        return out[0] if single else out


class ArchClassifier(nn.Module):
    "Linear head from an embedding to ClassId logits."

    def __init__(self, embedding_dim, num_classes):
        super(ArchClassifier, self).__init__()
        self.linear = nn.Linear(embedding_dim, num_classes)

    def forward(self, embedding):
        return self.linear(embedding)


class WeightSpaceModel(nn.Module):
    """Encoder, decoder and (multi-architecture) classifier.

    :param encoder_config: :class:`EncoderConfig`
    :param decoder_config: :class:`DecoderConfig`
    :param specs: architectures the model decodes into, in ClassId order;
        a single spec gives a single-architecture model
    :param layout_config: optional :class:`~wsl.codec.LayoutConfig`
    """

    def __init__(self, encoder_config, decoder_config, specs, layout_config=None):
        super(WeightSpaceModel, self).__init__()
        if encoder_config.embedding_dim != decoder_config.embedding_dim:
            raise ConfigError('Embedding sizes differ', [
                ('decoder.embedding_dim', 'must equal encoder.embedding_dim (%d)' %
                 encoder_config.embedding_dim)])
        self.specs = sorted(specs, key=lambda s: s.class_id)
        if not self.specs:
            raise ConfigError('a weight-space model needs at least one architecture')
        self.layout_config = layout_config
        if decoder_config.max_prep_shape is None:
            decoder_config = dataclasses.replace(
                decoder_config, max_prep_shape=max_prep_shape(self.specs, layout_config))
        else:
            needed = max(self.layout(s).total_params for s in self.specs)
            rows, cols = decoder_config.max_prep_shape
            if rows * cols < needed:
                raise ConfigError('Decoder output too small', [
                    ('decoder.max_prep_shape', '%dx%d holds %d values, %d needed' % (
                        rows, cols, rows * cols, needed))])
        self.encoder_config = encoder_config
        self.decoder_config = decoder_config
        self.encoder = Encoder(encoder_config)
        self.decoder = Decoder(decoder_config)
        self.classifier = None
        if self.multi_arch:
            self.classifier = ArchClassifier(encoder_config.embedding_dim, len(self.specs))
        self._class_index = dict((s.class_id, i) for i, s in enumerate(self.specs))

    @property
    def multi_arch(self):
        return len(self.specs) > 1

    @property
    def class_ids(self):
        return [s.class_id for s in self.specs]

    def layout(self, spec):
        return codec.build_layout(spec, self.layout_config)

    def spec_for(self, class_id):
        return self.specs[self._class_index[class_id]]

    def spec_for_name(self, name):
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise ConfigError('%s is not decoded by this model' % name,
                          [('train.class_weights', 'unknown architecture %s' % name)])

    def class_index(self, class_id):
        "Classifier output index of a ClassId."
        return self._class_index[class_id]

    def encode(self, prep):
        """Embed a parameter matrix.

        :param prep: :class:`~wsl.codec.PRep` or ``H x W`` tensor
        :rtype: tensor of length E
        """
        return self.encoder(prep)

    def embed_instances(self, instances):
        "Embed a list of :class:`~wsl.archs.NetworkInstance` (sizes may differ); ``B x E``."
        return torch.stack([self.encode(codec.flatten(inst.params, self.layout(inst.arch)))
                            for inst in instances])

    def decode(self, embedding):
        "Embedding(s) to ``max_prep_shape`` matrices."
        return self.decoder(embedding)

    def classify_arch(self, embedding):
        """ClassId logits of an embedding.

        :raises ConfigError: on a single-architecture model
        """
        if self.classifier is None:
            raise ConfigError('classify_arch requires a multi-architecture model')
        return self.classifier(embedding)

    def predicted_spec(self, embedding):
        "Architecture an embedding decodes into (classifier argmax when multi-architecture)."
        if not self.multi_arch:
            return self.specs[0]
        with torch.no_grad():
            index = int(self.classify_arch(embedding).argmax(dim=-1))
        return self.specs[index]

    def predicted_params(self, embedding, spec=None):
        """Differentiable parameter map decoded from one embedding.

        :param spec: architecture to load; defaults to :meth:`predicted_spec`
        :rtype: tuple of (:class:`~wsl.archs.ArchSpec`, ordered tensor map)
        """
        spec = spec or self.predicted_spec(embedding)
        return spec, codec.load(self.decode(embedding), self.layout(spec))

    def predict_instance(self, target, detach=True):
        """Rebuild an instance through the latent space.

        :param target: :class:`~wsl.archs.NetworkInstance`
        :rtype: :class:`~wsl.archs.NetworkInstance`
        """
        embedding = self.encode(codec.flatten(target.params, self.layout(target.arch)))
        spec, params = self.predicted_params(embedding)
        instance = archs.NetworkInstance(spec, params)
        return instance.detach() if detach else instance

    def header(self):
        "Description stored in checkpoints."
        return {
            'encoder': to_plain(self.encoder_config),
            'decoder': to_plain(self.decoder_config),
            'arch_names': [s.name for s in self.specs],
            'registry_hash': archs.archs_hash(self.specs),
            'include_running_stats': (self.layout_config or codec.DEFAULT_LAYOUT_CONFIG)
            .include_running_stats,
        }


def model_hash(model):
    "SHA-1 over a module's state; unchanged when nothing was trained."
    sha = hashlib.sha1()
    for name, tensor in model.state_dict().items():
        sha.update(name.encode('utf-8'))
        sha.update(tensor.detach().to('cpu').contiguous().numpy().tobytes())
    return sha.hexdigest()


def save_model(path, model, **extra):
    """Write a model checkpoint.

    :param extra: additional header entries (``config_hash``, ``step``, ...)
    """
    header = model.header()
    header.update(extra)
    storage.write_checkpoint(path, model.state_dict(), header)


def load_model(path, registry, device=None):
    """Rebuild a :class:`WeightSpaceModel` from a checkpoint.

    :param registry: :class:`~wsl.archs.Registry` holding the architectures
    :rtype: tuple of (model, header)
    :raises FormatError: when the stored architectures no longer match
    """
    tensors, header = storage.read_checkpoint(path)
    try:
        specs = [registry.get(name) for name in header['arch_names']]
        encoder_config = from_table(EncoderConfig, header['encoder'], 'encoder')
        decoder_config = from_table(DecoderConfig, header['decoder'], 'decoder')
    except (KeyError, ConfigError) as err:
        raise FormatError('%s: incomplete checkpoint header (%s)' % (path, err))
    if archs.archs_hash(specs) != header.get('registry_hash'):
        raise FormatError('%s: architectures changed since the checkpoint was written' % path)
    layout_config = codec.LayoutConfig(header.get('include_running_stats', True))
    model = WeightSpaceModel(encoder_config, decoder_config, specs, layout_config)
    model.load_state_dict(OrderedDict(tensors))
    if device is not None:
        model.to(device)
    model.eval()
    logger.debug('load_model %s: %s', path, ', '.join(header['arch_names']))
    return model, header
