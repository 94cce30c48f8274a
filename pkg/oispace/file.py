"""File utilities"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import hashlib
import importlib
import io
import os
import pathlib
import re
import tempfile

from .general import InputError


class Fingerprint:
    """Content fingerprint of a file: size and SHA-256 digest.

    Stages compare fingerprints to decide whether an upstream artifact
    is the one they were built from.

    """

    @staticmethod
    def from_path(path, block_size=2 ** 20):
        digest = hashlib.sha256()
        size = 0
        with io.open(str(path), 'rb') as binary_file:
            while True:
                block = binary_file.read(block_size)
                if not block:
                    break
                size += len(block)
                digest.update(block)
        return Fingerprint(size, digest.hexdigest())

    def __init__(self, size, sha256):
        self._size = size
        self._sha256 = sha256

    @property
    def size(self):
        return self._size

    @property
    def sha256(self):
        return self._sha256

    def as_yaml_object(self):
        return {'size': self.size, 'sha256': self.sha256}

    @staticmethod
    def from_yaml_object(obj):
        return Fingerprint(obj['size'], obj['sha256'])

    def __eq__(self, other):
        return (type(self) == type(other)
                and self.size == other.size
                and self.sha256 == other.sha256)

    def __hash__(self):
        return hash((type(self), self.size, self.sha256))

    def __repr__(self):
        return '{}(size={!r}, sha256={!r})'.format(
            type(self).__qualname__, self.size, self.sha256)


# Path helpers


def _as_path(file):
    if isinstance(file, str):
        return pathlib.Path(file)
    elif isinstance(file, pathlib.Path):
        return file
    raise TypeError('Not a file: {}'.format(file))


# Compression modules by the names and suffixes that select them
_codecs = {
    'gz': 'gzip', 'gzip': 'gzip',
    'bz2': 'bz2', 'bzip2': 'bz2',
    'xz': 'lzma', 'lzma': 'lzma',
}


def open(file, mode='rt', compression='auto'):
    """Open a file, compressed or not.

    `compression` is None, 'auto', or a codec name or suffix in
    `_codecs`.  With 'auto' the suffix of the filename decides and an
    unknown suffix means plain I/O.

    """
    path = _as_path(file)
    if compression == 'auto':
        codec = _codecs.get(path.suffix.lstrip('.'))
    elif compression is None:
        codec = None
    elif compression in _codecs:
        codec = _codecs[compression]
    else:
        raise ValueError(
            'Unrecognized compression type: {}'.format(compression))
    if codec is None:
        return io.open(str(path), mode=mode)
    return importlib.import_module(codec).open(str(path), mode=mode)


def read_lines(file, compression='auto'):
    with open(file, 'rt', compression) as text_file:
        yield from text_file


_comment_line = re.compile(r'\s*#')


def read_content_lines(file, compression='auto'):
    """Yield the stripped lines of a word list, skipping blanks and
    `#` comments.

    """
    for line in read_lines(file, compression):
        if line.isspace() or _comment_line.match(line):
            continue
        yield line.strip()


def write_atomic(file, data, compression='auto'):
    """Write bytes or text to a file so that readers never see a partial
    file.

    The data goes to a temporary sibling which then replaces the
    target.  Parent directories are created as needed.

    """
    path = _as_path(file)
    path.parent.mkdir(parents=True, exist_ok=True)
    binary = isinstance(data, (bytes, bytearray))
    fd, tmp_name = tempfile.mkstemp(
        prefix='.' + path.name + '.', dir=str(path.parent))
    os.close(fd)
    # Keep the target's suffix on the temporary name so that automatic
    # compression detection applies to the written bytes
    tmp_path = pathlib.Path(tmp_name + path.suffix)
    os.replace(tmp_name, str(tmp_path))
    try:
        with open(tmp_path, mode=('wb' if binary else 'wt'),
                  compression=compression) as out:
            out.write(data)
        os.replace(str(tmp_path), str(path))
    except BaseException:
        if tmp_path.exists():
            tmp_path.unlink()
        raise
    return path


def require_file(file, what='file'):
    path = _as_path(file)
    if not path.is_file():
        raise InputError('Not a readable {}: {}'.format(what, path))
    return path
