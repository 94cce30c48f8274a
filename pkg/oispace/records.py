"""Typed tables of records and their CSV form

Every table the workbench emits (sweeps, curves, correlation reports,
projections) is a `Table`: a `Header` of typed fields plus a list of
records.  Tables are the single source of truth for figures, so the CSV
text must be byte-stable for identical records.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import csv
import io

from . import file
from . import general


class RecordError(Exception):
    pass


class Field:
    """A (name, type) pair with sauce."""

    _parsers = {
        int: int,
        float: float,
        str: str,
    }

    def __init__(self, name, type_=str):
        if type_ not in self._parsers:
            raise ValueError('Unsupported field type: {!r}'.format(type_))
        self._name = name
        self._type = type_

    @staticmethod
    def make_from(field):
        if isinstance(field, Field):
            return field
        elif isinstance(field, str):
            return Field(field)
        elif hasattr(field, '__iter__'):
            field_tup = tuple(field)
            if len(field_tup) != 2:
                raise ValueError(
                    'Could not interpret as a field: {!r}'
                    .format(field_tup))
            return Field(*field_tup)
        raise ValueError(
            'Could not interpret as a field: {!r}'.format(field))

    @property
    def name(self):
        return self._name

    @property
    def type(self):
        return self._type

    def format(self, value):
        if self._type is float:
            # `repr` round-trips floats exactly
            return repr(float(value))
        return str(self._type(value))

    def parse(self, text):
        return self._parsers[self._type](text)

    def __repr__(self):
        return '{}({!r}, {})'.format(
            type(self).__qualname__, self.name, self.type.__name__)

    def __eq__(self, other):
        return (type(self) == type(other)
                and self.name == other.name
                and self.type == other.type)

    def __hash__(self):
        return hash((type(self), self.name, self.type))


class Header:
    """An ordered collection of fields accessible by name or index."""

    def __init__(self, *fields):
        self._fields = tuple(Field.make_from(f) for f in fields)
        if not self._fields:
            raise ValueError('No fields were specified')
        self._names2idxs = {f.name: i for (i, f) in enumerate(self._fields)}
        if len(self._names2idxs) != len(self._fields):
            raise ValueError('Duplicate field names: {}'.format(
                [f.name for f in self._fields]))

    def names(self):
        return [f.name for f in self._fields]

    def fields(self):
        return iter(self._fields)

    def index_of(self, name):
        if isinstance(name, int):
            return name
        return self._names2idxs[name]

    def __len__(self):
        return len(self._fields)

    def __getitem__(self, index):
        return self._fields[self.index_of(index)]

    def __contains__(self, name):
        return name in self._names2idxs

    def __eq__(self, other):
        return type(self) == type(other) and self._fields == other._fields

    def __repr__(self):
        return '{}({})'.format(
            general.fq_typename(self),
            ', '.join(repr(f) for f in self._fields))


class Table:
    """A named list of records conforming to a header."""

    def __init__(self, header, records=(), name=None):
        if not isinstance(header, Header):
            header = Header(*header)
        self._header = header
        self._name = name
        self._records = []
        for record in records:
            self.add(record)

    @property
    def name(self):
        return self._name if self._name is not None else '<unknown>'

    @property
    def header(self):
        return self._header

    def add(self, record):
        record = tuple(record)
        if len(record) != len(self._header):
            raise RecordError('{}: Expected {} values, got: {!r}'.format(
                self.name, len(self._header), record))
        self._records.append(record)

    def column(self, name):
        idx = self._header.index_of(name)
        return [r[idx] for r in self._records]

    def __iter__(self):
        return iter(self._records)

    def __len__(self):
        return len(self._records)

    def __getitem__(self, index):
        return self._records[index]

    def as_dicts(self):
        names = self._header.names()
        return [dict(zip(names, r)) for r in self._records]

    def to_csv_text(self):
        strio = io.StringIO()
        writer = csv.writer(strio, lineterminator='\n')
        writer.writerow(self._header.names())
        fields = list(self._header.fields())
        for record in self._records:
            writer.writerow([f.format(v) for (f, v) in zip(fields, record)])
        return strio.getvalue()

    def write_csv(self, path):
        return file.write_atomic(path, self.to_csv_text())

    @staticmethod
    def read_csv(path, header, name=None):
        """Read a CSV written by `write_csv`, checking its header."""
        if not isinstance(header, Header):
            header = Header(*header)
        with file.open(path, 'rt') as csv_file:
            reader = csv.reader(csv_file)
            names = next(reader, None)
            if names != header.names():
                raise RecordError('{}: Unexpected header: {}'.format(
                    path, names))
            fields = list(header.fields())
            records = [tuple(f.parse(t) for (f, t) in zip(fields, row))
                       for row in reader]
        return Table(header, records, name=name)
