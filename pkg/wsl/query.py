# file wsl/query.py
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

"""Query zoo records with keyword lookups.

Example::

    manifest.records.filter(split='train', class_id__in=[0, 3]).order_by('-metric')
    manifest.records.get(id='ResNet8-007')
"""

import operator
import re

from wsl.exceptions import DoesNotExist, ReturnedMultiple

__all__ = ['RecordQuerySet']


def _contains(value, arg):
    return value is not None and arg in value


def _startswith(value, arg):
    return value is not None and str(value).startswith(arg)


def _compare(op):
    def lookup(value, arg):
        return value is not None and op(value, arg)
    return lookup


_LOOKUPS = {
    'exact': operator.eq,
    'contains': _contains,
    'startswith': _startswith,
    'in': lambda value, arg: value in arg,
    'isnull': lambda value, arg: (value is None) == bool(arg),
    'gt': _compare(operator.gt),
    'gte': _compare(operator.ge),
    'lt': _compare(operator.lt),
    'lte': _compare(operator.le),
}


class RecordQuerySet(object):
    """In-memory set of records with chained, copy-on-write filters.

    :param records: list of record objects (attribute access by field name)
    """

    # pull the sort direction flag off the beginning of a sort field
    _sort_field_re = re.compile(r'^(?P<flags>-?)(?P<field>.*)$')

    def __init__(self, records=None):
        self._records = list(records or [])

    def _getCopy(self, records=None):
        return RecordQuerySet(self._records if records is None else records)

    @staticmethod
    def _parse(arg):
        field, _, lookup = arg.partition('__')
        lookup = lookup or 'exact'
        if lookup not in _LOOKUPS:
            raise TypeError('unsupported lookup %s' % lookup)
        return field, _LOOKUPS[lookup]

    def _matcher(self, kwargs):
        tests = [(self._parse(arg), value) for arg, value in kwargs.items()]

        def matches(record):
            return all(test(getattr(record, field), value) for (field, test), value in tests)
        return matches

    def filter(self, **kwargs):
        """Filter the records.

        Arguments take the form ``field`` or ``field__lookuptype``, where
        ``lookuptype`` is one of ``exact``, ``contains``, ``startswith``,
        ``in``, ``isnull``, ``gt``, ``gte``, ``lt`` or ``lte``.  All
        arguments must match.  Returns a filtered copy.
        """
        matches = self._matcher(kwargs)
        return self._getCopy([r for r in self._records if matches(r)])

    def exclude(self, **kwargs):
        "Records matching none of the :meth:`filter` arguments (combined with AND)."
        matches = self._matcher(kwargs)
        return self._getCopy([r for r in self._records if not matches(r)])

    def order_by(self, field):
        """Order records by a field; prefix with ``-`` for descending order.

        Records where the field is unset sort last.
        """
        match = self._sort_field_re.match(field).groupdict()
        name = match['field']
        present = [r for r in self._records if getattr(r, name) is not None]
        missing = [r for r in self._records if getattr(r, name) is None]
        present.sort(key=lambda r: getattr(r, name), reverse=match['flags'] == '-')
        return self._getCopy(present + missing)

    def all(self):
        return self._getCopy()

    def count(self):
        return len(self._records)

    def values_list(self, field):
        return [getattr(r, field) for r in self._records]

    def get(self, **kwargs):
        """Exactly one record matching :meth:`filter` arguments.

        :raises DoesNotExist: if nothing matches
        :raises ReturnedMultiple: if more than one record matches
        """
        fqs = self.filter(**kwargs)
        if fqs.count() == 1:
            return fqs[0]
        elif fqs.count() == 0:
            raise DoesNotExist('no match found with params %s' % kwargs)
        else:
            raise ReturnedMultiple('returned %s with params %s' % (fqs.count(), kwargs))

    def __getitem__(self, k):
        if isinstance(k, slice):
            return self._getCopy(self._records[k])
        return self._records[k]

    def __iter__(self):
        return iter(self._records)

    def __len__(self):
        return self.count()
