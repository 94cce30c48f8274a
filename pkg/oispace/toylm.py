"""Toy decoder-only transformer

A small pre-norm transformer with learned absolute positions, trained
from scratch on the synthetic entity-tracking grammar.  Forward hooks
read (trace) or overwrite (edit) the residual stream at chosen (layer,
position) sites.  The residual stream of layer `l` is the output of
block `l` by default (site 'post') or its input (site 'pre').

Checkpoints are binary: magic "OILM", u32 version, the model config and
training metadata as YAML, then named tensors as little-endian float32.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import contextlib
import copy
import io
import math
import struct
import time

from barnapy import logging
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
import yaml

from . import config
from . import datagen
from . import file
from .general import InputError, NumericError, FormatError


checkpoint_magic = b'OILM'
checkpoint_version = 1

roles = ('query-entity', 'query-attribute', 'final')
sites = ('post', 'pre')
loss_kinds = ('all', 'answer')

_ignore = -100


class TrainingError(NumericError):
    pass


# Configuration


class ModelConfig:

    defaults = dict(
        d_model=128,
        n_layers=8,
        n_heads=4,
        d_ff=512,
        max_seq_len=128,
        tie_weights=False,
        seed=0,
    )

    def __init__(self, vocab_size, *contexts, **fields):
        unknown = set(fields) - set(self.defaults)
        if unknown:
            raise config.ConfigError(
                'Unknown model fields', sorted(unknown), *contexts)
        values = dict(self.defaults)
        values.update(fields)
        for name in ('d_model', 'n_layers', 'n_heads', 'd_ff',
                     'max_seq_len'):
            value = values[name]
            if (isinstance(value, bool) or not isinstance(value, int)
                    or value < 1):
                raise config.ConfigError(
                    'Not a positive integer', value, name, *contexts)
        if (isinstance(vocab_size, bool) or not isinstance(vocab_size, int)
                or vocab_size < 1):
            raise config.ConfigError(
                'Not a positive integer', vocab_size, 'vocab_size',
                *contexts)
        if values['d_model'] % values['n_heads'] != 0:
            raise config.ConfigError(
                'd_model is not divisible by n_heads',
                (values['d_model'], values['n_heads']), *contexts)
        if not isinstance(values['tie_weights'], bool):
            raise config.ConfigError(
                'Not a boolean', values['tie_weights'], 'tie_weights',
                *contexts)
        if not isinstance(values['seed'], int):
            raise config.ConfigError(
                'Not an integer', values['seed'], 'seed', *contexts)
        self._vocab_size = vocab_size
        self._values = values

    @property
    def vocab_size(self):
        return self._vocab_size

    @property
    def d_model(self):
        return self._values['d_model']

    @property
    def n_layers(self):
        return self._values['n_layers']

    @property
    def n_heads(self):
        return self._values['n_heads']

    @property
    def d_ff(self):
        return self._values['d_ff']

    @property
    def max_seq_len(self):
        return self._values['max_seq_len']

    @property
    def tie_weights(self):
        return self._values['tie_weights']

    @property
    def seed(self):
        return self._values['seed']

    def n_parameters(self):
        """Parameter count by formula"""
        d = self.d_model
        f = self.d_ff
        v = self.vocab_size
        per_block = 4 * d * d + 2 * d * f + 9 * d + f
        head = 0 if self.tie_weights else v * d
        return (v * d + self.max_seq_len * d + self.n_layers * per_block
                + 2 * d + head)

    def as_yaml_object(self):
        obj = {'vocab_size': self._vocab_size}
        obj.update(self._values)
        return obj

    @staticmethod
    def from_yaml_object(obj, *contexts):
        fields = dict(obj)
        vocab_size = fields.pop('vocab_size', None)
        return ModelConfig(vocab_size, *contexts, **fields)

    def __eq__(self, other):
        return (type(self) == type(other)
                and self.as_yaml_object() == other.as_yaml_object())

    def __repr__(self):
        return '{}({})'.format(type(self).__qualname__, ', '.join(
            '{}={!r}'.format(k, v)
            for (k, v) in sorted(self.as_yaml_object().items())))


class TrainingConfig:

    defaults = dict(
        steps=20000,
        batch_size=64,
        lr=3e-4,
        weight_decay=0.01,
        warmup=200,
        grad_clip=1.0,
        log_every=500,
        loss='all',
        seed=0,
    )

    def __init__(self, *contexts, **fields):
        unknown = set(fields) - set(self.defaults)
        if unknown:
            raise config.ConfigError(
                'Unknown training fields', sorted(unknown), *contexts)
        values = dict(self.defaults)
        values.update(fields)
        for name in ('steps', 'batch_size', 'log_every'):
            if (isinstance(values[name], bool)
                    or not isinstance(values[name], int)
                    or values[name] < 1):
                raise config.ConfigError(
                    'Not a positive integer', values[name], name, *contexts)
        if not isinstance(values['warmup'], int) or values['warmup'] < 0:
            raise config.ConfigError(
                'Not a nonnegative integer', values['warmup'], 'warmup',
                *contexts)
        for name in ('lr', 'weight_decay', 'grad_clip'):
            if (not isinstance(values[name], (int, float))
                    or values[name] < 0):
                raise config.ConfigError(
                    'Not a nonnegative number', values[name], name,
                    *contexts)
        if values['loss'] not in loss_kinds:
            raise config.ConfigError(
                'Unknown loss', values['loss'], 'loss', *contexts)
        self._values = values

    def __getattr__(self, name):
        values = self.__dict__.get('_values', {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def as_yaml_object(self):
        return dict(self._values)


# Model


class Attention(nn.Module):

    def __init__(self, d_model, n_heads, max_seq_len):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.register_buffer(
            'mask',
            torch.tril(torch.ones(max_seq_len, max_seq_len,
                                  dtype=torch.bool)),
            persistent=False)

    def forward(self, x):
        b, t, c = x.shape
        qkv = self.qkv(x).reshape(b, t, 3, self.n_heads, c // self.n_heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        att = (q @ k.transpose(-2, -1)) / math.sqrt(c // self.n_heads)
        att = att.masked_fill(~self.mask[:t, :t], float('-inf'))
        att = F.softmax(att, dim=-1)
        y = (att @ v).transpose(1, 2).reshape(b, t, c)
        return self.out(y)


class Block(nn.Module):
    """Pre-norm decoder block"""

    def __init__(self, d_model, n_heads, d_ff, max_seq_len):
        super().__init__()
        self.ln1 = nn.LayerNorm(d_model)
        self.attn = Attention(d_model, n_heads, max_seq_len)
        self.ln2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, d_ff), nn.GELU(), nn.Linear(d_ff, d_model))

    def forward(self, x):
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class ToyLM(nn.Module):

    def __init__(self, model_config):
        super().__init__()
        cfg = model_config
        self.config = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.pos = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        self.blocks = nn.ModuleList(
            Block(cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.max_seq_len)
            for _ in range(cfg.n_layers))
        self.ln_f = nn.LayerNorm(cfg.d_model)
        self.head = nn.Linear(cfg.d_model, cfg.vocab_size, bias=False)
        if cfg.tie_weights:
            self.head.weight = self.embed.weight

    def forward(self, tokens):
        t = tokens.shape[1]
        if t > self.config.max_seq_len:
            raise InputError('Sequence length {} exceeds {}'.format(
                t, self.config.max_seq_len))
        positions = torch.arange(t, device=tokens.device)
        x = self.embed(tokens) + self.pos(positions)[None]
        for block in self.blocks:
            x = block(x)
        return self.head(self.ln_f(x))


def _init_weights(module):
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.normal_(module.weight, mean=0.0, std=0.02)
    if isinstance(module, nn.Linear) and module.bias is not None:
        nn.init.zeros_(module.bias)


def init_model(model_config):
    """Build a model with seeded initialization.  The global torch
    random state is left untouched.

    """
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(model_config.seed)
        model = ToyLM(model_config)
        model.apply(_init_weights)
    model.eval()
    return model


def n_parameters(model):
    return sum(p.numel() for p in model.parameters())


# Inputs


def as_batch(tokens):
    """Return tokens as a 2-D long tensor (one row per sequence)."""
    if isinstance(tokens, torch.Tensor):
        batch = tokens.long()
    else:
        batch = torch.as_tensor(np.asarray(tokens, dtype=np.int64))
    if batch.dim() == 1:
        batch = batch[None]
    if batch.dim() != 2:
        raise InputError('Tokens must be 1-D or 2-D: shape {}'.format(
            tuple(batch.shape)))
    return batch


def pad_batch(sequences, pad):
    """Right-pad sequences into a long tensor.  Returns (batch,
    lengths).

    """
    lengths = [len(s) for s in sequences]
    if not lengths or min(lengths) < 1:
        raise InputError('Empty sequence in batch')
    batch = torch.full((len(sequences), max(lengths)), pad,
                       dtype=torch.long)
    for row, seq in enumerate(sequences):
        batch[row, :len(seq)] = torch.as_tensor(seq, dtype=torch.long)
    return batch, lengths


def _check_tokens(model, batch):
    if batch.numel() and (batch.min() < 0
                          or batch.max() >= model.config.vocab_size):
        raise InputError('Token id out of range')
    if batch.shape[1] > model.config.max_seq_len:
        raise InputError('Sequence length {} exceeds {}'.format(
            batch.shape[1], model.config.max_seq_len))


def role_position(sample, role):
    """Model input position of a named role in a sample"""
    if role == 'query-entity':
        if sample.query_kind != 'entity':
            raise InputError('Not an entity query: {!r}'.format(sample))
        return sample.input_position(sample.query_pi)
    elif role == 'query-attribute':
        if sample.query_kind != 'attribute':
            raise InputError('Not an attribute query: {!r}'.format(sample))
        return sample.input_position(sample.query_pi)
    elif role == 'final':
        return sample.input_position(len(sample.tokens) - 1)
    raise InputError('Unknown role: {!r}'.format(role))


# Trace and edit


class TraceSpec:
    """Residual-stream sites to capture.

    positions: Token positions shared by every row, or None for all
        positions.  Per-row positions are given with `row_positions`,
        one position per row.

    """

    def __init__(self, layers, positions=None, row_positions=None,
                 site='post'):
        self._layers = tuple(sorted(set(int(l) for l in layers)))
        if not self._layers:
            raise InputError('No layers to trace')
        if positions is not None and row_positions is not None:
            raise InputError('Give either shared or per-row positions')
        self._positions = (tuple(int(p) for p in positions)
                           if positions is not None else None)
        self._row_positions = (tuple(int(p) for p in row_positions)
                               if row_positions is not None else None)
        if site not in sites:
            raise InputError('Unknown site: {!r}'.format(site))
        self._site = site

    @property
    def layers(self):
        return self._layers

    @property
    def positions(self):
        return self._positions

    @property
    def row_positions(self):
        return self._row_positions

    @property
    def site(self):
        return self._site

    def check(self, n_layers, n_rows, seq_len):
        for layer in self._layers:
            if not 0 <= layer < n_layers:
                raise InputError('Layer out of range: {}'.format(layer))
        positions = self._positions or ()
        if self._row_positions is not None:
            if len(self._row_positions) != n_rows:
                raise InputError('Expected {} row positions, got {}'
                                 .format(n_rows, len(self._row_positions)))
            positions = self._row_positions
        for pos in positions:
            if not 0 <= pos < seq_len:
                raise InputError('Position out of range: {}'.format(pos))


@contextlib.contextmanager
def _hooks(model, site, layer_fns):
    handles = []
    try:
        for layer, fn in layer_fns.items():
            block = model.blocks[layer]
            if site == 'post':
                handles.append(block.register_forward_hook(
                    lambda module, inputs, output, fn=fn: fn(output)))
            else:
                handles.append(block.register_forward_pre_hook(
                    lambda module, inputs, fn=fn:
                    (fn(inputs[0]),) + tuple(inputs[1:])))
        yield
    finally:
        for handle in handles:
            handle.remove()


def forward_with_trace(model, tokens, trace):
    """Run the model and capture residual-stream states.

    Returns (logits, captured) where `captured[layer]` has shape
    (rows, positions, d_model) for shared positions and (rows, d_model)
    for per-row positions.  Capture never changes the logits.

    """
    batch = as_batch(tokens)
    _check_tokens(model, batch)
    trace.check(model.config.n_layers, batch.shape[0], batch.shape[1])
    captured = {}
    rows = torch.arange(batch.shape[0])

    def make_reader(layer):
        def read(hidden):
            if trace.row_positions is not None:
                idx = torch.as_tensor(trace.row_positions)
                captured[layer] = hidden[rows, idx].detach().clone()
            elif trace.positions is not None:
                captured[layer] = (
                    hidden[:, list(trace.positions)].detach().clone())
            else:
                captured[layer] = hidden.detach().clone()
            return hidden
        return read

    with torch.no_grad(), _hooks(
            model, trace.site, {l: make_reader(l) for l in trace.layers}):
        logits = model(batch)
    return logits, captured


def _normalize_edits(model, batch, edits):
    by_layer = {}
    d_model = model.config.d_model
    for edit in edits:
        if len(edit) == 3:
            layer, position, value = edit
            rows = list(range(batch.shape[0]))
        elif len(edit) == 4:
            layer, row, position, value = edit
            rows = [row]
        else:
            raise InputError('Not an edit: {!r}'.format(edit))
        if not 0 <= layer < model.config.n_layers:
            raise InputError('Layer out of range: {}'.format(layer))
        if not 0 <= position < batch.shape[1]:
            raise InputError('Position out of range: {}'.format(position))
        value = torch.as_tensor(np.asarray(value, dtype=np.float32))
        if value.shape != (d_model,):
            raise InputError('Replacement width {} does not match {}'
                             .format(tuple(value.shape), d_model))
        for row in rows:
            if not 0 <= row < batch.shape[0]:
                raise InputError('Row out of range: {}'.format(row))
            by_layer.setdefault(layer, {})[(row, position)] = value
    return by_layer


def forward_with_edit(model, tokens, edits, site='post'):
    """Run the model replacing residual-stream states.

    edits: (layer, position, replacement) applied to every row, or
        (layer, row, position, replacement) for a single row.  Later
        edits of the same site win.

    """
    batch = as_batch(tokens)
    _check_tokens(model, batch)
    by_layer = _normalize_edits(model, batch, edits)

    def make_writer(sites_values):
        def write(hidden):
            edited = hidden.clone()
            for (row, position), value in sites_values.items():
                edited[row, position] = value.to(edited.dtype)
            return edited
        return write

    with torch.no_grad(), _hooks(
            model, site,
            {l: make_writer(v) for (l, v) in by_layer.items()}):
        return model(batch)


def final_logits(model, sequences, pad, batch_size=256):
    """Logits at the last position of every sequence (numpy, rows)"""
    out = []
    with torch.no_grad():
        for start in range(0, len(sequences), batch_size):
            chunk = sequences[start:start + batch_size]
            batch, lengths = pad_batch(chunk, pad)
            _check_tokens(model, batch)
            logits = model(batch)
            last = torch.as_tensor(lengths) - 1
            out.append(logits[torch.arange(len(chunk)), last].numpy())
    return (np.concatenate(out) if out
            else np.zeros((0, model.config.vocab_size), dtype=np.float32))


def evaluate_answers(model, samples, vocab, batch_size=256):
    """Top-1 accuracy of the answer token at the final query position
    over the samples that have an answer

    """
    answered = [s for s in samples if s.answer is not None]
    if not answered:
        raise InputError('No samples with an answer')
    logits = final_logits(
        model, [s.model_input(vocab) for s in answered], vocab.pad,
        batch_size)
    predictions = logits.argmax(axis=1)
    answers = np.array([s.answer for s in answered])
    return float(np.mean(predictions == answers))


# Corpus and training


class Corpus:
    """Training sequences: BOS, context, query, answer, EOS"""

    def __init__(self, sequences, answer_positions, labels=None):
        if len(sequences) != len(answer_positions):
            raise InputError('Sequences and answer positions differ in '
                             'length')
        self._sequences = [list(s) for s in sequences]
        self._answer_positions = list(answer_positions)
        self._labels = (list(labels) if labels is not None
                        else [''] * len(self._sequences))

    @staticmethod
    def from_samples(samples, vocab):
        sequences = []
        positions = []
        labels = []
        for sample in samples:
            if sample.answer is None:
                continue
            seq = sample.model_input(vocab)
            positions.append(len(seq))
            sequences.append(seq + [sample.answer, vocab.eos])
            labels.append(sample.variant_label)
        return Corpus(sequences, positions, labels)

    @property
    def sequences(self):
        return self._sequences

    @property
    def answer_positions(self):
        return self._answer_positions

    @property
    def labels(self):
        return self._labels

    def max_length(self):
        return max(len(s) for s in self._sequences)

    def __len__(self):
        return len(self._sequences)


def build_corpus(vocab, n, seed, relations=range(6), k_pairs=7,
                 pattern_fraction=0.1, filler_fraction=0.1,
                 interjection_fraction=0.05, first_id=0):
    """Mix base samples over all relations with pattern, filler, and
    interjection variants.  Sample ids (and so random draws) start at
    `first_id`.

    """
    relations = list(relations)
    n_pattern = int(round(n * pattern_fraction))
    n_filler = int(round(n * filler_fraction))
    n_inter = int(round(n * interjection_fraction))
    n_base = n - n_pattern - n_filler - n_inter
    if n_base < len(relations):
        raise InputError('Corpus too small for {} relations: {}'.format(
            len(relations), n))
    rng = np.random.default_rng(seed)
    samples = []
    next_id = first_id
    for idx, relation in enumerate(relations):
        count = n_base // len(relations) + (
            1 if idx < n_base % len(relations) else 0)
        samples += datagen.gen_base(relation, count, k_pairs, vocab, seed,
                                    first_id=next_id)
        next_id += count
    names = list(datagen.patterns)
    for i in range(n_pattern):
        samples += datagen.gen_pattern(
            names[i % len(names)], 1, vocab, seed,
            relation=relations[i % len(relations)], first_id=next_id)
        next_id += 1
    for i in range(n_filler):
        base = datagen.gen_base(relations[i % len(relations)], 1, k_pairs,
                                vocab, seed, first_id=next_id)
        next_id += 1
        length = int(rng.integers(1, len(datagen.fillers) + 1))
        samples += datagen.gen_filler(base, [length], vocab)
    for i in range(n_inter):
        base = datagen.gen_base(relations[i % len(relations)], 1, k_pairs,
                                vocab, seed, first_id=next_id)
        next_id += 1
        samples += datagen.gen_interjection(base, vocab)
    return Corpus.from_samples(samples, vocab)


class TrainingReport:

    def __init__(self, steps, losses, final_loss, accuracy=None,
                 seconds=None):
        self._steps = steps
        self._losses = list(losses)
        self._final_loss = final_loss
        self._accuracy = accuracy
        self._seconds = seconds

    @property
    def steps(self):
        return self._steps

    @property
    def losses(self):
        """(step, mean loss since the previous entry) pairs"""
        return self._losses

    @property
    def final_loss(self):
        return self._final_loss

    @property
    def accuracy(self):
        return self._accuracy

    @accuracy.setter
    def accuracy(self, value):
        self._accuracy = value

    @property
    def seconds(self):
        """CPU seconds spent in the training loop"""
        return self._seconds

    def as_yaml_object(self):
        return {
            'steps': self._steps,
            'losses': [[int(s), float(l)] for (s, l) in self._losses],
            'final_loss': float(self._final_loss),
            'seconds': (float(self._seconds)
                        if self._seconds is not None else None),
            'accuracy': (float(self._accuracy)
                         if self._accuracy is not None else None),
        }

    @staticmethod
    def from_yaml_object(obj):
        return TrainingReport(obj['steps'],
                              [tuple(x) for x in obj['losses']],
                              obj['final_loss'], obj.get('accuracy'),
                              obj.get('seconds'))


def lr_factor(step, warmup, steps):
    """Linear warmup then cosine decay to zero"""
    if warmup > 0 and step < warmup:
        return (step + 1) / warmup
    progress = (step - warmup) / max(1, steps - warmup)
    return 0.5 * (1.0 + math.cos(math.pi * min(1.0, progress)))


def _targets(batch, lengths, answer_positions, loss_kind):
    targets = batch[:, 1:].clone()
    for row, length in enumerate(lengths):
        targets[row, length - 1:] = _ignore
        if loss_kind == 'answer':
            keep = answer_positions[row] - 1
            value = targets[row, keep].item()
            targets[row] = _ignore
            targets[row, keep] = value
    return targets


def train(model, corpus, hyper, eval_fn=None):
    """Train by next-token cross entropy with AdamW and a warmup-cosine
    schedule.  Returns (model, report).

    eval_fn: Optional function of the model returning held-out answer
        accuracy for the report

    """
    logger = logging.getLogger(__name__)
    if not len(corpus):
        raise InputError('Empty corpus')
    if corpus.max_length() > model.config.max_seq_len:
        raise InputError('Corpus sequence length {} exceeds {}'.format(
            corpus.max_length(), model.config.max_seq_len))
    pad = 0  # padded targets are ignored
    generator = torch.Generator().manual_seed(hyper.seed)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=hyper.lr, weight_decay=hyper.weight_decay,
        betas=(0.9, 0.95))
    scheduler = torch.optim.lr_scheduler.LambdaLR(
        optimizer, lambda step: lr_factor(step, hyper.warmup, hyper.steps))
    logger.info('Training {} parameters on {} sequences for {} steps',
                n_parameters(model), len(corpus), hyper.steps)
    model.train()
    losses = []
    window = []
    start = time.process_time()
    for step in range(hyper.steps):
        idx = torch.randint(len(corpus), (hyper.batch_size,),
                            generator=generator).tolist()
        batch, lengths = pad_batch(
            [corpus.sequences[i] for i in idx], pad)
        targets = _targets(batch, lengths,
                           [corpus.answer_positions[i] for i in idx],
                           hyper.loss)
        logits = model(batch[:, :-1])
        loss = F.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), targets.reshape(-1),
            ignore_index=_ignore)
        if not torch.isfinite(loss):
            model.eval()
            raise TrainingError(
                'Non-finite loss at step {} (lr {}): {}'.format(
                    step, scheduler.get_last_lr()[0], loss.item()))
        optimizer.zero_grad()
        loss.backward()
        if hyper.grad_clip > 0:
            nn.utils.clip_grad_norm_(model.parameters(), hyper.grad_clip)
        optimizer.step()
        scheduler.step()
        window.append(loss.item())
        if (step + 1) % hyper.log_every == 0 or step + 1 == hyper.steps:
            mean = float(np.mean(window))
            losses.append((step + 1, mean))
            logger.info('Step {}: loss: {:.4f}, lr: {:.3g}',
                        step + 1, mean, scheduler.get_last_lr()[0])
            window = []
    model.eval()
    report = TrainingReport(hyper.steps, losses, losses[-1][1],
                            seconds=time.process_time() - start)
    if eval_fn is not None:
        report.accuracy = eval_fn(model)
        logger.info('Held-out answer accuracy: {:.4f}', report.accuracy)
    return model, report


def sequence_loss(model, tokens):
    """Mean next-token cross entropy of one or more sequences"""
    batch = as_batch(tokens)
    logits = model(batch[:, :-1])
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), batch[:, 1:].reshape(-1))


def gradient_check(model, tokens, eps=1e-4, per_group=4, seed=0):
    """Compare analytic gradients with central finite differences in
    float64.

    For every parameter group, the coordinates checked are the one with
    the largest analytic gradient plus `per_group - 1` random ones.
    Returns a mapping of parameter name to relative error
    ‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖).

    """
    model64 = copy.deepcopy(model).double()
    model64.eval()
    batch = as_batch(tokens)
    model64.zero_grad()
    sequence_loss(model64, batch).backward()
    rng = np.random.default_rng(seed)
    errors = {}
    with torch.no_grad():
        for name, param in model64.named_parameters():
            grad = param.grad.detach().reshape(-1).clone()
            flat = param.data.view(-1)
            coords = {int(torch.argmax(grad.abs()))}
            coords.update(int(i) for i in rng.integers(
                flat.numel(), size=max(per_group - 1, 0)))
            analytic = []
            numeric = []
            for coord in sorted(coords):
                original = flat[coord].item()
                flat[coord] = original + eps
                plus = sequence_loss(model64, batch).item()
                flat[coord] = original - eps
                minus = sequence_loss(model64, batch).item()
                flat[coord] = original
                analytic.append(grad[coord].item())
                numeric.append((plus - minus) / (2 * eps))
            analytic = np.array(analytic)
            numeric = np.array(numeric)
            scale = np.linalg.norm(analytic) + np.linalg.norm(numeric)
            errors[name] = (float(np.linalg.norm(analytic - numeric) / scale)
                            if scale > 1e-12 else 0.0)
    return errors


# Checkpoints


def _pack_text(text):
    data = text.encode('utf-8')
    return struct.pack('<I', len(data)) + data


def checkpoint_bytes(model, metadata=None):
    out = io.BytesIO()
    out.write(checkpoint_magic)
    out.write(struct.pack('<I', checkpoint_version))
    out.write(_pack_text(yaml.safe_dump(
        model.config.as_yaml_object(), sort_keys=True)))
    out.write(_pack_text(yaml.safe_dump(metadata or {}, sort_keys=True)))
    state = model.state_dict()
    out.write(struct.pack('<I', len(state)))
    for name, tensor in state.items():
        array = tensor.detach().cpu().numpy().astype('<f4')
        out.write(_pack_text(name))
        out.write(struct.pack('<I', array.ndim))
        out.write(struct.pack('<{}I'.format(array.ndim), *array.shape))
        out.write(array.tobytes(order='C'))
    return out.getvalue()


def save_checkpoint(model, path, metadata=None):
    return file.write_atomic(path, checkpoint_bytes(model, metadata))


class _Reader:

    def __init__(self, data, name):
        self._data = data
        self._offset = 0
        self._name = name

    def take(self, size):
        end = self._offset + size
        if end > len(self._data):
            raise FormatError('{}: Truncated at byte {}'.format(
                self._name, self._offset))
        chunk = self._data[self._offset:end]
        self._offset = end
        return chunk

    def u32(self):
        return struct.unpack('<I', self.take(4))[0]

    def u32s(self, count):
        return struct.unpack('<{}I'.format(count), self.take(4 * count))

    def text(self):
        try:
            return self.take(self.u32()).decode('utf-8')
        except UnicodeDecodeError as e:
            raise FormatError('{}: Bad text: {}'.format(self._name, e))

    def at_end(self):
        return self._offset == len(self._data)


def checkpoint_from_bytes(data, name='<checkpoint>'):
    """Returns (model, metadata)."""
    reader = _Reader(data, name)
    magic = reader.take(4)
    if magic != checkpoint_magic:
        raise FormatError('{}: Not a model checkpoint: magic {!r}'.format(
            name, magic))
    version = reader.u32()
    if version != checkpoint_version:
        raise FormatError('{}: Unsupported checkpoint version: {}'.format(
            name, version))
    try:
        model_config = ModelConfig.from_yaml_object(
            yaml.safe_load(reader.text()), name)
        metadata = yaml.safe_load(reader.text()) or {}
    except (yaml.YAMLError, config.ConfigError, TypeError) as e:
        raise FormatError('{}: Bad model config: {}'.format(name, e))
    model = ToyLM(model_config)
    state = {}
    for _ in range(reader.u32()):
        tensor_name = reader.text()
        ndim = reader.u32()
        shape = reader.u32s(ndim)
        size = int(np.prod(shape)) if shape else 1
        array = np.frombuffer(reader.take(4 * size), dtype='<f4')
        state[tensor_name] = torch.from_numpy(
            array.astype(np.float32).reshape(shape))
    if not reader.at_end():
        raise FormatError('{}: Trailing bytes'.format(name))
    expected = model.state_dict()
    if set(state) != set(expected):
        raise FormatError('{}: Tensor names do not match the config'
                          .format(name))
    for tensor_name, tensor in state.items():
        if tuple(tensor.shape) != tuple(expected[tensor_name].shape):
            raise FormatError('{}: Bad shape for {}: {}'.format(
                name, tensor_name, tuple(tensor.shape)))
    model.load_state_dict(state)
    model.eval()
    return model, metadata


def load_checkpoint(path):
    path = file.require_file(path, 'checkpoint')
    return checkpoint_from_bytes(path.read_bytes(), str(path))
