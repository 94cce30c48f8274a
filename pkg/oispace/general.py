"""General-purpose functionality, utilities, errors, and other things
that don't fit elsewhere

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import hashlib
import json


class InputError(ValueError):
    """Arguments that violate an operation's preconditions"""
    pass


class NumericError(ArithmeticError):
    """A numeric procedure that failed to converge or degenerated"""
    pass


class FormatError(ValueError):
    """A binary or text artifact that does not have the expected layout"""
    pass


def fq_typename(obj):
    """Return the fully-qualified type name of an object or type."""
    typ = type(obj) if not isinstance(obj, type) else obj
    return '{}.{}'.format(typ.__module__, typ.__qualname__)


def check_count(value, name, minimum=0):
    """Check that a value is an integer of at least `minimum`."""
    if (isinstance(value, bool) or not isinstance(value, int)
            or value < minimum):
        raise InputError('{}: Not an integer >= {}: {!r}'
                         .format(name, minimum, value))
    return value


def sha256_bytes(data):
    return hashlib.sha256(data).hexdigest()


def sha256_json(obj):
    """Hash an object through its canonical JSON text."""
    text = json.dumps(obj, sort_keys=True, separators=(',', ':'))
    return sha256_bytes(text.encode('utf-8'))


def derived_seed(seed, *labels):
    """A 32-bit seed derived from a seed and labels, so that streams
    drawn for different purposes never coincide

    """
    text = '|'.join(str(x) for x in (seed,) + labels)
    return int(sha256_bytes(text.encode('utf-8'))[:8], 16)
