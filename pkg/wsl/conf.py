# file wsl/conf.py
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

"""Process settings and configuration-table parsing.

Settings are looked up in the following order: a value configured
explicitly with :meth:`Settings.configure`, then an environment
variable of the same name, then the module default.  Available
settings::

  WSL_CACHE             # dataset cache directory (default ~/.cache/wsl)
  WSL_DEVICE            # torch device used when none is given (default cpu)
  WSL_DOWNLOAD_TIMEOUT  # seconds; unset uses the global socket default
  WSL_NUM_WORKERS       # data loader worker processes (default 0)

Experiment configuration files are TOML; each table is parsed into a
dataclass with :func:`from_table`, which collects field-level
diagnostics instead of stopping at the first problem.
"""

from contextlib import contextmanager
import dataclasses
import hashlib
import json
import logging
import os
import typing

from wsl.exceptions import ConfigError

logger = logging.getLogger(__name__)

__all__ = ['settings', 'Settings', 'from_table', 'to_plain', 'config_hash']


class Settings(object):
    """Layered process settings.

    Construction doesn't read anything; values are resolved on
    attribute access so environment changes are picked up.
    """

    defaults = {
        'WSL_CACHE': os.path.join('~', '.cache', 'wsl'),
        'WSL_DEVICE': 'cpu',
        'WSL_DOWNLOAD_TIMEOUT': None,
        'WSL_NUM_WORKERS': 0,
    }

    # settings whose environment values need conversion
    _converters = {
        'WSL_DOWNLOAD_TIMEOUT': float,
        'WSL_NUM_WORKERS': int,
    }

    def __init__(self):
        self._configured = {}

    def __getattr__(self, name):
        if name.startswith('_') or name not in self.defaults:
            raise AttributeError(name)
        if name in self._configured:
            return self._configured[name]
        if name in os.environ:
            value = os.environ[name]
            convert = self._converters.get(name)
            return convert(value) if convert else value
        return self.defaults[name]

    def configure(self, **kwargs):
        "Explicitly set one or more settings."
        for key, val in kwargs.items():
            if key not in self.defaults:
                raise ConfigError('Unknown setting %s' % key)
            self._configured[key] = val

    @contextmanager
    def override(self, **kwargs):
        "Temporarily override settings inside a ``with`` block."
        old_vals = dict(self._configured)
        self.configure(**kwargs)
        try:
            yield self
        finally:
            self._configured = old_vals

    @property
    def cache_dir(self):
        "Expanded :attr:`WSL_CACHE` path."
        return os.path.abspath(os.path.expanduser(self.WSL_CACHE))


settings = Settings()


def _type_name(ftype):
    return getattr(ftype, '__name__', str(ftype))


def _coerce(value, ftype):
    # returns the coerced value or raises TypeError
    if ftype is typing.Any:
        return value
    origin = typing.get_origin(ftype)
    if origin is typing.Union:
        args = typing.get_args(ftype)
        if value is None and type(None) in args:
            return None
        for arg in args:
            if arg is type(None):
                continue
            try:
                return _coerce(value, arg)
            except TypeError:
                pass
        raise TypeError('expected %s, got %s' % (
            ' or '.join(_type_name(a) for a in args if a is not type(None)),
            type(value).__name__))
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise TypeError('expected list, got %s' % type(value).__name__)
        args = typing.get_args(ftype)
        if args and args[-1] is not Ellipsis and origin is tuple:
            if len(args) != len(value):
                raise TypeError('expected %d values, got %d' % (len(args), len(value)))
            return tuple(_coerce(v, a) for v, a in zip(value, args))
        if args:
            value = [_coerce(v, args[0]) for v in value]
        return origin(value)
    if origin is dict:
        if not isinstance(value, dict):
            raise TypeError('expected table, got %s' % type(value).__name__)
        return dict(value)
    if ftype is float:
        # toml integers are acceptable where floats are expected
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError('expected float, got %s' % type(value).__name__)
        return float(value)
    if ftype is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError('expected int, got %s' % type(value).__name__)
        return value
    if ftype in (str, bool):
        if not isinstance(value, ftype):
            raise TypeError('expected %s, got %s' % (ftype.__name__, type(value).__name__))
        return value
    if dataclasses.is_dataclass(ftype):
        if isinstance(value, ftype):
            return value
        raise TypeError('expected table, got %s' % type(value).__name__)
    return value


def from_table(cls, table, section, errors=None):
    """Build dataclass ``cls`` from a parsed TOML table.

    :param cls: dataclass type
    :param table: dict of values (may be None for a missing table)
    :param section: table name used in diagnostics, e.g. ``loss``
    :param errors: optional list collecting ``(field, problem)`` tuples;
        when not given, problems raise :class:`ConfigError` immediately
    :rtype: instance of ``cls``, or None if the table had errors
    """
    collect = errors is not None
    if errors is None:
        errors = []
    table = dict(table or {})
    hints = typing.get_type_hints(cls)
    kwargs = {}
    problems_before = len(errors)
    known = set()
    for field in dataclasses.fields(cls):
        if not field.init:
            continue
        known.add(field.name)
        name = '%s.%s' % (section, field.name)
        if field.name not in table:
            if field.default is dataclasses.MISSING and \
                    field.default_factory is dataclasses.MISSING:
                errors.append((name, 'required field missing'))
            continue
        try:
            kwargs[field.name] = _coerce(table[field.name], hints.get(field.name, typing.Any))
        except TypeError as err:
            errors.append((name, str(err)))
    for key in sorted(set(table) - known):
        errors.append(('%s.%s' % (section, key), 'unknown field'))

    obj = None
    if len(errors) == problems_before:
        try:
            obj = cls(**kwargs)
        except (ValueError, TypeError) as err:
            # dataclass __post_init__ validation
            errors.append((section, str(err)))
    if not collect and errors:
        raise ConfigError('Invalid configuration in [%s]' % section, errors)
    return obj


def to_plain(obj):
    "Convert (nested) config dataclasses to JSON-serializable values."
    if dataclasses.is_dataclass(obj):
        return dict((f.name, to_plain(getattr(obj, f.name)))
                    for f in dataclasses.fields(obj))
    if isinstance(obj, dict):
        return dict((str(k), to_plain(v)) for k, v in obj.items())
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    return obj


def config_hash(obj):
    "SHA-1 of the canonical JSON serialization of a config."
    canonical = json.dumps(to_plain(obj), sort_keys=True, separators=(',', ':'))
    return hashlib.sha1(canonical.encode('utf-8')).hexdigest()
