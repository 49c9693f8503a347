# file wsl/exceptions.py
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

import socket

import requests


class WSLException(Exception):
    """A handy wrapper for all errors raised by :mod:`wsl`."""

    def message(self):
        "Rough conversion of a wrapped error into something human-readable."
        try:
            orig_except = self.args[0]
        except IndexError:
            orig_except = ''

        if isinstance(orig_except, (socket.timeout, requests.exceptions.Timeout)):
            # timeout error text is not very informative
            message = 'Request Timed Out'
        elif isinstance(orig_except, requests.exceptions.HTTPError) and \
                orig_except.response is not None:
            message = 'HTTP Error at %(url)s: %(code)s %(msg)s' % {
                'url': orig_except.response.url,
                'code': orig_except.response.status_code,
                'msg': orig_except.response.reason
            }
        elif isinstance(orig_except, requests.exceptions.ConnectionError):
            message = 'Connection Error: %s' % orig_except
        elif isinstance(orig_except, OSError):
            message = 'I/O Error: %s' % (orig_except.strerror or orig_except)
        else:
            # if all else fails, display the exception as a string
            message = str(orig_except)
        return message


class RegistryError(WSLException, KeyError):
    "An architecture is unknown or violates the registry ordering."

    def __str__(self):
        # KeyError quotes its argument; keep plain messages
        return self.message()


class LayoutMismatch(WSLException, ValueError):
    """Parameters do not conform to an architecture layout.

    :param msg: description of the mismatch
    :param tensor_name: name of the offending tensor, if any
    """

    def __init__(self, msg, tensor_name=None):
        super(LayoutMismatch, self).__init__(msg)
        self.tensor_name = tensor_name


class PRepSizeError(WSLException, ValueError):
    "A parameter matrix is smaller than its layout requires."
    pass


class ShapeError(WSLException, ValueError):
    "An input batch does not match an architecture's input shape."
    pass


class FormatError(WSLException):
    "A stored instance or checkpoint file is malformed."
    pass


class ConfigError(WSLException):
    """Invalid configuration.

    :param msg: summary message
    :param fields: list of ``(field, problem)`` diagnostics
    """

    def __init__(self, msg, fields=None):
        super(ConfigError, self).__init__(msg)
        self.fields = list(fields or [])

    def message(self):
        if not self.fields:
            return super(ConfigError, self).message()
        return '%s\n%s' % (self.args[0], '\n'.join(
            '  %s: %s' % (field, problem) for field, problem in self.fields))


class DatasetUnavailable(WSLException):
    "A dataset could not be found in the cache or downloaded."
    pass


class DownloadTimeout(DatasetUnavailable):
    "A dataset download exceeded the configured timeout."
    pass


class LossError(WSLException, ValueError):
    "A loss was called with invalid arguments."
    pass


class TrainingError(WSLException):
    "Training preconditions are not met."
    pass


class DivergenceError(TrainingError):
    "Training diverged."
    pass


class LsoAborted(DivergenceError):
    """Latent-space optimization produced a non-finite loss.

    :param msg: description
    :param trace: list of ``(step, loss, accuracy)`` rows recorded so far
    """

    def __init__(self, msg, trace=None):
        super(LsoAborted, self).__init__(msg)
        self.trace = list(trace or [])


class DoesNotExist(WSLException):
    "The query returned no records when exactly one was expected."
    pass


class ReturnedMultiple(WSLException):
    "The query returned multiple records when only one was expected."
    pass


class ZooError(WSLException, ValueError):
    "A zoo cannot be built or split as requested."
    pass
