"""
Workbench for finding and steering ordering-ID subspaces in small
language models

OISpace generates entity-attribute binding datasets, trains a small
decoder-only transformer on them, captures the residual stream at
entity and attribute tokens, and finds the low-dimensional subspace
that encodes the order in which each entity or attribute appeared in
the context.  Editing and steering along that subspace shows whether
the model uses it to bind entities to attributes, and a report bundle
of CSV tables and SVG figures records the results with their
acceptance checks.

Copyright (c) 2026 OISpace developers.

This is free software released under the MIT License.  See `LICENSE.txt`
for details.
"""
# The above text gets used for descriptions in `setup.py`.


# Version
__version__ = '0.1.0'
