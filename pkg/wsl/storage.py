# file wsl/storage.py
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

"""Binary files for parameter matrices and model checkpoints.

Both file kinds share one framing::

    magic       8 bytes   b'WSLPREP1' or b'WSLCKPT1'
    length      4 bytes   little-endian unsigned header length
    header      length    UTF-8 JSON
    payload     rest      little-endian float32 values

A parameter matrix header records ``arch_name``, ``layout_hash``, ``H``,
``W`` and ``dtype``; the payload holds ``H * W`` values row-major.  A
checkpoint header adds a ``tensors`` directory of ``[name, shape,
offset, dtype]`` rows locating each tensor in the payload.

Writes are atomic: data goes to a temporary file in the target
directory, which is then renamed over the destination.
"""

from collections import OrderedDict
from contextlib import contextmanager
from functools import wraps
import json
import logging
import os
import struct
import tempfile

import numpy
import torch

from wsl import codec
from wsl.exceptions import FormatError, WSLException

__all__ = ['PREP_MAGIC', 'CHECKPOINT_MAGIC', 'atomic_write', 'write_prep',
           'read_prep', 'write_checkpoint', 'read_checkpoint', 'read_header']

logger = logging.getLogger(__name__)

PREP_MAGIC = b'WSLPREP1'
CHECKPOINT_MAGIC = b'WSLCKPT1'

_LENGTH = struct.Struct('<I')
_FLOAT = numpy.dtype('<f4')


def _wrap_io_fault(f):
    @wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as err:
            raise FormatError('malformed header: %s' % err)
        except OSError as err:
            raise WSLException(err)
    return wrapper


@contextmanager
def atomic_write(path, mode='wb'):
    """Open a temporary sibling of ``path`` for writing and move it into
    place when the block exits without error.

    :param path: destination file
    :param mode: ``wb`` or ``w``
    """
    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=dirname, prefix='.%s.' % os.path.basename(path),
                                    suffix='.tmp')
    try:
        kwargs = {} if 'b' in mode else {'encoding': 'utf-8', 'newline': ''}
        with os.fdopen(fd, mode, **kwargs) as out:
            yield out
            out.flush()
            os.fsync(out.fileno())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def _write_framed(path, magic, header, payload):
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    with atomic_write(path) as out:
        out.write(magic)
        out.write(_LENGTH.pack(len(header_bytes)))
        out.write(header_bytes)
        out.write(payload)


def _read_framed(path, magic, header_only=False):
    with open(path, 'rb') as data:
        found = data.read(len(magic))
        if found != magic:
            raise FormatError('%s: bad magic %r, expected %r' % (path, found, magic))
        raw_length = data.read(_LENGTH.size)
        if len(raw_length) != _LENGTH.size:
            raise FormatError('%s: truncated header length' % path)
        length = _LENGTH.unpack(raw_length)[0]
        raw_header = data.read(length)
        if len(raw_header) != length:
            raise FormatError('%s: truncated header' % path)
        header = json.loads(raw_header.decode('utf-8'))
        if not isinstance(header, dict):
            raise FormatError('%s: header is not a JSON object' % path)
        payload = None if header_only else data.read()
    return header, payload


def _to_bytes(tensor):
    return tensor.detach().to('cpu', torch.float32).contiguous().numpy().astype(_FLOAT).tobytes()


def _from_bytes(payload, count, offset=0):
    values = numpy.frombuffer(payload, dtype=_FLOAT, count=count, offset=offset * _FLOAT.itemsize)
    return torch.from_numpy(values.astype(numpy.float32))


@_wrap_io_fault
def write_prep(path, prep, meta=None):
    """Write a parameter matrix file.

    :param path: destination path
    :param prep: :class:`wsl.codec.PRep`
    :param meta: optional dict of extra header entries (seed, metric, ...)
    """
    layout = prep.layout
    header = dict(meta or {})
    header.update({
        'arch_name': layout.arch_name,
        'layout_hash': codec.layout_hash(layout),
        'H': layout.row_count,
        'W': layout.row_width,
        'dtype': 'float32',
    })
    if tuple(prep.values.shape) != layout.shape:
        raise FormatError('matrix shape %s does not match layout %s' % (
            tuple(prep.values.shape), layout.shape))
    logger.debug('write_prep %s (%s)', path, layout.arch_name)
    _write_framed(path, PREP_MAGIC, header, _to_bytes(prep.values))


@_wrap_io_fault
def read_prep(path, layout=None):
    """Read a parameter matrix file.

    :param path: file to read
    :param layout: optional :class:`wsl.codec.ParamLayout` the file must
        have been written with
    :rtype: tuple of (``H x W`` float32 tensor, header dict)
    :raises FormatError: on bad framing, truncated payload or a layout
        that does not match
    """
    header, payload = _read_framed(path, PREP_MAGIC)
    try:
        rows, cols = int(header['H']), int(header['W'])
    except (KeyError, TypeError, ValueError):
        raise FormatError('%s: header lacks matrix dimensions' % path)
    if header.get('dtype') != 'float32':
        raise FormatError('%s: unsupported dtype %s' % (path, header.get('dtype')))
    if len(payload) != rows * cols * _FLOAT.itemsize:
        raise FormatError('%s: payload holds %d bytes, expected %d' % (
            path, len(payload), rows * cols * _FLOAT.itemsize))
    if layout is not None and header.get('layout_hash') != codec.layout_hash(layout):
        raise FormatError('%s: written for a different %s layout' % (path, header.get('arch_name')))
    logger.debug('read_prep %s (%s %dx%d)', path, header.get('arch_name'), rows, cols)
    return _from_bytes(payload, rows * cols).view(rows, cols), header


@_wrap_io_fault
def write_checkpoint(path, tensors, header):
    """Write a checkpoint holding named tensors.

    :param path: destination path
    :param tensors: ordered map of name to tensor (a module ``state_dict``)
    :param header: JSON-serializable dict stored alongside
    """
    header = dict(header)
    directory = []
    parts = []
    offset = 0
    for name, tensor in tensors.items():
        directory.append([name, list(tensor.shape), offset, str(tensor.dtype).replace('torch.', '')])
        parts.append(_to_bytes(tensor.reshape(-1)))
        offset += tensor.numel()
    header['tensors'] = directory
    header['dtype'] = 'float32'
    logger.debug('write_checkpoint %s (%d tensors, %d values)', path, len(directory), offset)
    _write_framed(path, CHECKPOINT_MAGIC, header, b''.join(parts))


@_wrap_io_fault
def read_checkpoint(path):
    """Read a checkpoint file.

    :rtype: tuple of (:class:`collections.OrderedDict` of tensors, header dict)
    """
    header, payload = _read_framed(path, CHECKPOINT_MAGIC)
    total = len(payload) // _FLOAT.itemsize
    if len(payload) % _FLOAT.itemsize:
        raise FormatError('%s: payload is not a whole number of floats' % path)
    tensors = OrderedDict()
    try:
        for name, shape, offset, dtype in header['tensors']:
            count = 1
            for dim in shape:
                count *= dim
            if offset + count > total:
                raise FormatError('%s: truncated payload at tensor %s' % (path, name))
            value = _from_bytes(payload, count, offset).view(*shape) if shape \
                else _from_bytes(payload, count, offset).view(())
            tensors[name] = value.to(getattr(torch, dtype))
    except (KeyError, TypeError, ValueError, AttributeError) as err:
        raise FormatError('%s: bad tensor directory (%s)' % (path, err))
    logger.debug('read_checkpoint %s (%d tensors)', path, len(tensors))
    return tensors, header


@_wrap_io_fault
def read_header(path):
    "JSON header of a parameter matrix or checkpoint file, without its payload."
    with open(path, 'rb') as data:
        magic = data.read(len(PREP_MAGIC))
    if magic not in (PREP_MAGIC, CHECKPOINT_MAGIC):
        raise FormatError('%s: not a parameter matrix or checkpoint file' % path)
    return _read_framed(path, magic, header_only=True)[0]
