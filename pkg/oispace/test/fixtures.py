"""Small shared fixtures for tests"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


from .. import acceptance
from .. import toylm


objects = list(acceptance.golden_objects)
names = list(acceptance.golden_names)


def small_vocab():
    return acceptance.golden_vocabulary()


def tiny_model(vocab, n_layers=2, d_model=16, seed=0, **fields):
    fields.setdefault('n_heads', 2)
    fields.setdefault('d_ff', 32)
    fields.setdefault('max_seq_len', 128)
    return toylm.init_model(toylm.ModelConfig(
        len(vocab), d_model=d_model, n_layers=n_layers, seed=seed,
        **fields))
