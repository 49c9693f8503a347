# file wsl/codec.py
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

"""Convert instance parameters to and from parameter matrices.

A :class:`ParamLayout` fixes where each named tensor of an architecture
lives inside a 2-D matrix of width ``W``: tensors are unrolled row-major
one after the other, in module definition order (weight before bias,
normalization running mean and variance after the affine parameters),
and the matrix is filled row by row.  ``W`` is the smallest power of two
not below the square root of the parameter count, so matrices are close
to square; the unused tail of the last row is zero.

:func:`flatten` and :func:`load` are exact inverses on 32-bit floats and
are pure, so they may be called from any number of workers.
:func:`load` slices without copying and is differentiable, which is
what lets decoded matrices be evaluated as networks during training.
"""

from collections import OrderedDict, namedtuple
import dataclasses
import hashlib
import json
import logging
import math

import torch

from wsl.exceptions import LayoutMismatch, PRepSizeError

__all__ = ['LayoutEntry', 'LayoutConfig', 'ParamLayout', 'PRep',
           'build_layout', 'layout_from_module', 'row_width_for',
           'flatten', 'load', 'check_params', 'layout_hash']

logger = logging.getLogger(__name__)

# integer bookkeeping buffers that are not part of any layout
SKIPPED_BUFFERS = ('num_batches_tracked',)


LayoutEntry = namedtuple('LayoutEntry',
                         ['tensor_name', 'tensor_shape', 'flat_offset', 'flat_length'])


@dataclasses.dataclass(frozen=True)
class LayoutConfig:
    """Options controlling which tensors a layout enumerates.

    :param include_running_stats: include normalization running mean and
        variance, so loaded instances evaluate without recomputing them
    """
    include_running_stats: bool = True


DEFAULT_LAYOUT_CONFIG = LayoutConfig()


def row_width_for(total_params):
    "Smallest power of two ``W`` with ``W * W >= total_params``."
    if total_params < 1:
        raise ValueError('total_params must be positive')
    width = 1
    while width * width < total_params:
        width *= 2
    return width


class ParamLayout(object):
    """Mapping from an architecture's named tensors to matrix positions.

    :param arch_name: architecture name
    :param entries: ordered list of :class:`LayoutEntry`
    """

    def __init__(self, arch_name, entries):
        self.arch_name = arch_name
        self.entries = tuple(entries)
        self.total_params = sum(e.flat_length for e in self.entries)
        self.row_width = row_width_for(self.total_params)
        self.row_count = int(math.ceil(self.total_params / float(self.row_width)))
        self._by_name = dict((e.tensor_name, e) for e in self.entries)

    @property
    def shape(self):
        "``(H, W)`` of the parameter matrix."
        return (self.row_count, self.row_width)

    @property
    def padding(self):
        "Number of trailing zero cells."
        return self.row_count * self.row_width - self.total_params

    def __getitem__(self, name):
        return self._by_name[name]

    def __contains__(self, name):
        return name in self._by_name

    def names(self):
        return [e.tensor_name for e in self.entries]

    def __eq__(self, other):
        return isinstance(other, ParamLayout) and \
            self.arch_name == other.arch_name and self.entries == other.entries

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash((self.arch_name, self.entries))

    def __repr__(self):
        return '<%s %s: %d params, %dx%d>' % (self.__class__.__name__, self.arch_name,
                                             self.total_params, self.row_count, self.row_width)


def layout_from_module(module, arch_name, config=None):
    """Enumerate the tensors of an instantiated module.

    Traverses modules in definition order; for each module its own
    parameters come first (in registration order, so weight before bias),
    followed by its floating-point buffers when running statistics are
    included.

    :param module: :class:`torch.nn.Module`
    :param arch_name: name recorded in the layout
    :param config: :class:`LayoutConfig`
    :rtype: :class:`ParamLayout`
    """
    config = config or DEFAULT_LAYOUT_CONFIG
    entries = []
    offset = 0
    for prefix, submodule in module.named_modules():
        named = list(submodule.named_parameters(recurse=False))
        if config.include_running_stats:
            named.extend((name, buf) for name, buf in submodule.named_buffers(recurse=False)
                         if name not in SKIPPED_BUFFERS and buf.is_floating_point())
        for name, tensor in named:
            full_name = '%s.%s' % (prefix, name) if prefix else name
            length = tensor.numel()
            entries.append(LayoutEntry(full_name, tuple(tensor.shape), offset, length))
            offset += length
    return ParamLayout(arch_name, entries)


def build_layout(arch_spec, config=None):
    """Build the layout for a registered architecture.

    Layouts are cached on the spec; two builds for the same architecture
    and config are identical.

    :param arch_spec: :class:`wsl.archs.ArchSpec`
    :param config: optional :class:`LayoutConfig`
    :rtype: :class:`ParamLayout`
    """
    config = config or DEFAULT_LAYOUT_CONFIG
    cache = arch_spec.__dict__.setdefault('_layouts', {})
    if config not in cache:
        cache[config] = layout_from_module(arch_spec.build(), arch_spec.name, config)
        logger.debug('build_layout %r', cache[config])
    return cache[config]


def layout_hash(layout):
    "SHA-1 identifying a layout (names, shapes, offsets and matrix shape)."
    desc = {
        'arch_name': layout.arch_name,
        'entries': [[e.tensor_name, list(e.tensor_shape), e.flat_offset, e.flat_length]
                    for e in layout.entries],
        'H': layout.row_count,
        'W': layout.row_width,
    }
    return hashlib.sha1(json.dumps(desc, sort_keys=True).encode('utf-8')).hexdigest()


class PRep(object):
    """Parameter matrix of one instance.

    :param values: ``H x W`` float32 tensor
    :param layout: the :class:`ParamLayout` the values follow
    """

    def __init__(self, values, layout):
        self.values = values
        self.layout = layout

    @property
    def shape(self):
        return tuple(self.values.shape)

    def __repr__(self):
        return '<%s %s %dx%d>' % (self.__class__.__name__, self.layout.arch_name,
                                  self.values.shape[0], self.values.shape[1])


def check_params(params, layout):
    """Check that a named tensor map matches a layout exactly.

    :raises LayoutMismatch: naming the first missing, extra or misshapen tensor
    """
    for entry in layout.entries:
        if entry.tensor_name not in params:
            raise LayoutMismatch('missing tensor %s for %s' % (entry.tensor_name, layout.arch_name),
                                 entry.tensor_name)
        shape = tuple(params[entry.tensor_name].shape)
        if shape != entry.tensor_shape:
            raise LayoutMismatch('tensor %s has shape %s, layout expects %s' % (
                entry.tensor_name, shape, entry.tensor_shape), entry.tensor_name)
    for name in params:
        if name not in layout:
            raise LayoutMismatch('unexpected tensor %s for %s' % (name, layout.arch_name), name)


def flatten(params, layout):
    """Unroll a named tensor map into its parameter matrix.

    :param params: dict of tensor name to tensor
    :param layout: :class:`ParamLayout`
    :rtype: :class:`PRep` whose row-major cell ``i`` holds parameter ``i``
        and whose trailing cells are zero
    """
    check_params(params, layout)
    parts = [params[e.tensor_name].reshape(-1).to(torch.float32) for e in layout.entries]
    device = parts[0].device if parts else None
    if layout.padding:
        parts.append(torch.zeros(layout.padding, dtype=torch.float32, device=device))
    values = torch.cat(parts).view(layout.row_count, layout.row_width)
    return PRep(values, layout)


def load(prep, layout):
    """Reassemble the named tensors of a layout from a parameter matrix.

    The matrix may be larger than the layout requires (decoders emit one
    maximum-size matrix for every architecture); only its row-major
    prefix is read.  Returned tensors are views of ``prep``.

    :param prep: :class:`PRep` or a tensor holding the matrix values
    :param layout: :class:`ParamLayout`
    :rtype: :class:`collections.OrderedDict` of tensor name to tensor
    """
    values = prep.values if isinstance(prep, PRep) else prep
    if values.dim() == 0 or values.shape[0] == 0:
        raise PRepSizeError('empty parameter matrix for %s' % layout.arch_name)
    flat = values.reshape(-1)
    if flat.numel() < layout.total_params:
        raise PRepSizeError('parameter matrix %s holds %d values, %s needs %d' % (
            tuple(values.shape), flat.numel(), layout.arch_name, layout.total_params))
    params = OrderedDict()
    for entry in layout.entries:
        params[entry.tensor_name] = flat[entry.flat_offset:entry.flat_offset + entry.flat_length] \
            .view(entry.tensor_shape)
    return params
