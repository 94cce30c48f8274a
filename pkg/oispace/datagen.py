"""Synthetic entity-tracking datasets

A context is a list of "attribute relation entity" clauses rendered from
one of six relation templates, followed by a query on one entity, as in

    The coffee is in Box Zo, the stone is in Box Mak. Box Zo contains the

Every entity and attribute is a single token of a closed, word-level
vocabulary.  Every sample records, for each entity-attribute pair, the
ordering index (OI: first-occurrence order of the distinct entity or
attribute) and the positional index (PI: index of the token in the
concatenated context and query).  Variants rearrange the same material
to move PIs without moving OIs: pseudo clauses, filler prefixes, and
interjections.  Non-related frames and binding patterns vary the
relation itself.

Generation is deterministic given the seed: sample `i` of a dataset
draws from a random generator seeded with `(seed, i)`.

"""

# Copyright (c) 2026 OISpace developers.  This is free software released
# under the MIT License.  See `LICENSE.txt` for details.


import collections
import json
import math
import pathlib
import re

from barnapy import logging
import numpy as np
import yaml

from . import file
from . import general
from .general import InputError, FormatError


# Templates

Template = collections.namedtuple(
    'Template', 'clause query attribute_query entity_word')

relations = (
    Template('the {a} is in Box {e}',
             'Box {e} contains the',
             'the {a} is in', 'Box'),
    Template('the {a} is sold by person {e}',
             'Person {e} is selling the',
             'the {a} is sold by', 'person'),
    Template('the {a} is applied by person {e}',
             'Person {e} applies the',
             'the {a} is applied by', 'person'),
    Template('the {a} is moved by person {e}',
             'Person {e} moved the',
             'the {a} is moved by', 'person'),
    Template('the {a} is brought by person {e}',
             'Person {e} brings the',
             'the {a} is brought by', 'person'),
    Template('the {a} is pushed by person {e}',
             'Person {e} pushes the',
             'the {a} is pushed by', 'person'),
)

# Clauses that mention an attribute and an entity without relating them
nonrelated_frames = (
    'I see {a}, somewhere else there is {E} {e}',
    'the {a} and {E} {e} are scattered around',
    'the {a} is here and {E} {e} is there',
    'the {a} and {E} {e} are in different place',
)

fillers = {
    1: 'OK',
    2: 'I see',
    3: 'I see that',
    4: 'It is known that',
    5: 'I will find out that',
    6: 'It can be seen now that',
    7: 'I am sure we will find that',
    8: 'There is no particular reason to say that',
    9: 'It can be seen from the list above that',
}
filler_pad_word = 'so'
interjection_word = 'ah'

pseudo_attribute_word = 'PC'
pseudo_entity_word = 'X0'

# Entity index of each of the 7 attributes
patterns = collections.OrderedDict((
    ('7A-7E', (0, 1, 2, 3, 4, 5, 6)),
    ('7A-3E', (0, 0, 0, 1, 1, 2, 2)),
    ('7A-2E', (0, 0, 0, 1, 1, 1, 1)),
    ('7A-5E', (0, 0, 0, 1, 2, 3, 4)),
))

special_tokens = ('<pad>', '<bos>', '<eos>')

variants = ('base', 'pseudo', 'filler', 'interjection', 'nonrelated',
            'pattern')
query_modes = ('any', 'first')
query_kinds = ('entity', 'attribute')

_word_pattern = re.compile(r'[,.]|[^\s,.]+')

_name_onsets = ('b', 'd', 'f', 'g', 'h', 'j', 'k', 'l', 'm', 'n', 'p',
                'r', 's', 't', 'v', 'w', 'z')
_name_vowels = ('a', 'e', 'i', 'o', 'u')
_name_codas = ('', 'n', 'r', 'l', 's', 'm')

_objects_path = pathlib.Path(__file__).parent / 'data' / 'objects.txt'


def split_words(text):
    """Split text into words with "," and "." as words of their own."""
    return _word_pattern.findall(text)


def _capitalize_first(words):
    if words and words[0] == 'the':
        return ['The'] + list(words[1:])
    return list(words)


def template_words():
    """Every fixed word the templates, frames, and fillers use"""
    texts = []
    for tmpl in relations:
        texts.extend((tmpl.clause, tmpl.query, tmpl.attribute_query))
    texts.extend(nonrelated_frames)
    texts.extend(fillers.values())
    texts.extend((filler_pad_word, interjection_word))
    words = set()
    for text in texts:
        text_words = [w for w in split_words(text) if not w.startswith('{')]
        words.update(text_words)
        words.update(_capitalize_first(text_words))
    return sorted(words)


def reserved_words():
    return (set(special_tokens) | set(template_words())
            | {pseudo_attribute_word, pseudo_entity_word})


# Vocabulary


class Vocabulary:
    """Closed word-level vocabulary with disjoint entity and attribute
    pools.

    Token ids are dense: special tokens, template words, the pseudo
    attribute and entity, the attribute pool, then the entity pool.

    """

    def __init__(self, tokens, entity_pool, attribute_pool):
        self._tokens = tuple(tokens)
        self._index = {t: i for (i, t) in enumerate(self._tokens)}
        if len(self._index) != len(self._tokens):
            raise InputError('Duplicate tokens in vocabulary')
        self._entity_pool = tuple(int(i) for i in entity_pool)
        self._attribute_pool = tuple(int(i) for i in attribute_pool)
        self._entity_set = frozenset(self._entity_pool)
        self._attribute_set = frozenset(self._attribute_pool)
        if self._entity_set & self._attribute_set:
            raise InputError('Entity and attribute pools overlap')
        for word in special_tokens + (
                pseudo_attribute_word, pseudo_entity_word):
            if word not in self._index:
                raise InputError('Missing reserved token: {}'.format(word))

    @property
    def tokens(self):
        return self._tokens

    @property
    def entity_pool(self):
        return self._entity_pool

    @property
    def attribute_pool(self):
        return self._attribute_pool

    @property
    def pad(self):
        return self._index['<pad>']

    @property
    def bos(self):
        return self._index['<bos>']

    @property
    def eos(self):
        return self._index['<eos>']

    @property
    def pseudo_attribute(self):
        return self._index[pseudo_attribute_word]

    @property
    def pseudo_entity(self):
        return self._index[pseudo_entity_word]

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, word):
        return word in self._index

    def id(self, word):
        if word not in self._index:
            raise InputError('Word not in vocabulary: {!r}'.format(word))
        return self._index[word]

    def ids(self, words):
        return [self.id(w) for w in words]

    def word(self, token_id):
        if not 0 <= token_id < len(self._tokens):
            raise InputError('Token id out of range: {}'.format(token_id))
        return self._tokens[token_id]

    def words(self, token_ids):
        return [self.word(int(t)) for t in token_ids]

    def is_entity(self, token_id):
        return token_id in self._entity_set or token_id == self.pseudo_entity

    def is_attribute(self, token_id):
        return (token_id in self._attribute_set
                or token_id == self.pseudo_attribute)

    def as_json_object(self):
        return {
            'tokens': list(self._tokens),
            'entity_pool': list(self._entity_pool),
            'attribute_pool': list(self._attribute_pool),
        }

    @staticmethod
    def from_json_object(obj):
        try:
            return Vocabulary(
                obj['tokens'], obj['entity_pool'], obj['attribute_pool'])
        except (KeyError, TypeError) as e:
            raise FormatError('Not a vocabulary object: {}'.format(e))

    def hash(self):
        return general.sha256_json(self.as_json_object())

    def __eq__(self, other):
        return (type(self) == type(other)
                and self._tokens == other._tokens
                and self._entity_pool == other._entity_pool
                and self._attribute_pool == other._attribute_pool)

    def __repr__(self):
        return '{}(size={}, entities={}, attributes={})'.format(
            type(self).__qualname__, len(self), len(self._entity_pool),
            len(self._attribute_pool))


def load_objects(path=_objects_path):
    """Return the unique object words of a word list, in file order,
    without any reserved word.

    """
    reserved = {w.casefold() for w in reserved_words()}
    objects = []
    seen = set()
    for word in file.read_content_lines(path):
        if word in seen or word.casefold() in reserved:
            continue
        seen.add(word)
        objects.append(word)
    return objects


def _make_names(num_names, rng, reserved):
    names = []
    seen = set()
    max_attempts = 100 * num_names + 1000
    for _ in range(max_attempts):
        if len(names) == num_names:
            break
        n_syllables = 1 + int(rng.integers(2))
        syllables = []
        for _ in range(n_syllables):
            syllables.append(
                _name_onsets[int(rng.integers(len(_name_onsets)))]
                + _name_vowels[int(rng.integers(len(_name_vowels)))]
                + _name_codas[int(rng.integers(len(_name_codas)))])
        name = ''.join(syllables).capitalize()
        if name in seen or name.casefold() in reserved:
            continue
        seen.add(name)
        names.append(name)
    else:
        raise InputError('Could not make {} distinct names'.format(
            num_names))
    return names


def build_vocabulary(num_objects=224, num_names=523, seed=0,
                     objects_path=_objects_path):
    """Build a vocabulary with pools of exactly the requested sizes.

    Objects are drawn from the shipped word list; names are made of
    random consonant-vowel syllables.  Objects are lower case and names
    are capitalized, so the pools cannot overlap.

    """
    general.check_count(num_objects, 'num_objects', 8)
    general.check_count(num_names, 'num_names', 8)
    rng = np.random.default_rng(seed)
    available = load_objects(objects_path)
    if num_objects > len(available):
        raise InputError('Requested {} objects but only {} are available'
                         .format(num_objects, len(available)))
    picks = rng.permutation(len(available))[:num_objects]
    objects = [available[int(i)] for i in picks]
    reserved = {w.casefold() for w in reserved_words()}
    reserved.update(o.casefold() for o in available)
    return word_vocabulary(objects, _make_names(num_names, rng, reserved))


def word_vocabulary(objects, names):
    """Vocabulary of the fixed words followed by the given attribute
    (object) and entity (name) words

    """
    tokens = (list(special_tokens) + template_words()
              + [pseudo_attribute_word, pseudo_entity_word])
    n_fixed = len(tokens)
    tokens += list(objects) + list(names)
    attribute_pool = range(n_fixed, n_fixed + len(objects))
    entity_pool = range(n_fixed + len(objects), len(tokens))
    return Vocabulary(tokens, entity_pool, attribute_pool)


# Tokenization


def tokenize(text, vocab):
    return vocab.ids(split_words(text))


def detokenize(token_ids, vocab):
    text = ' '.join(vocab.words(token_ids))
    return text.replace(' ,', ',').replace(' .', '.')


# Samples


Pair = collections.namedtuple(
    'Pair',
    'entity attribute entity_oi attribute_oi entity_pi attribute_pi')


class Sample:
    """One context and query with full provenance.

    `query_pair` indexes the pair whose entity (query kind 'entity') or
    attribute (query kind 'attribute') is mentioned in the query at
    offset `query_offset`.  `answer` is None where no attribute is the
    correct continuation.

    """

    def __init__(
            self,
            id,
            relation,
            context,
            query,
            pairs,
            query_pair,
            query_offset,
            answer,
            variant='base',
            variant_arg=None,
            query_kind='entity',
            seed=None,
            source_id=None,
    ):
        self._id = id
        self._relation = relation
        self._context = tuple(int(t) for t in context)
        self._query = tuple(int(t) for t in query)
        self._pairs = tuple(Pair(*(int(v) for v in p)) for p in pairs)
        self._query_pair = query_pair
        self._query_offset = query_offset
        self._answer = None if answer is None else int(answer)
        self._variant = variant
        self._variant_arg = variant_arg
        self._query_kind = query_kind
        self._seed = seed
        self._source_id = source_id

    @property
    def id(self):
        return self._id

    @property
    def relation(self):
        return self._relation

    @property
    def context(self):
        return self._context

    @property
    def query(self):
        return self._query

    @property
    def tokens(self):
        """Concatenated context and query"""
        return self._context + self._query

    @property
    def pairs(self):
        return self._pairs

    @property
    def query_pair(self):
        return self._query_pair

    @property
    def query_kind(self):
        return self._query_kind

    @property
    def query_pi(self):
        """Position of the queried token in the token stream"""
        return len(self._context) + self._query_offset

    @property
    def query_entity_oi(self):
        return self._pairs[self._query_pair].entity_oi

    @property
    def query_attribute_oi(self):
        return self._pairs[self._query_pair].attribute_oi

    @property
    def query_oi(self):
        """OI of the queried token, whatever its kind"""
        if self._query_kind == 'attribute':
            return self.query_attribute_oi
        return self.query_entity_oi

    @property
    def answer(self):
        return self._answer

    @property
    def variant(self):
        return self._variant

    @property
    def variant_arg(self):
        return self._variant_arg

    @property
    def variant_label(self):
        if self._variant_arg is None:
            return self._variant
        return '{}({})'.format(self._variant, self._variant_arg)

    @property
    def seed(self):
        return self._seed

    @property
    def source_id(self):
        return self._source_id

    @property
    def k_pairs(self):
        return len(self._pairs)

    def candidates(self):
        """Distinct attribute tokens of the context in OI order"""
        by_oi = {}
        for pair in self._pairs:
            by_oi.setdefault(pair.attribute_oi, pair.attribute)
        return [by_oi[oi] for oi in sorted(by_oi)]

    def model_input(self, vocab):
        """Tokens as fed to a model: BOS, then the token stream."""
        return [vocab.bos] + list(self.tokens)

    @staticmethod
    def input_position(pi):
        """Model input position of the token at stream position `pi`"""
        return pi + 1

    def text(self, vocab):
        return detokenize(self.tokens, vocab)

    def derive(self, **changes):
        fields = self.as_fields()
        fields.update(changes)
        return Sample(**fields)

    def as_fields(self):
        return dict(
            id=self._id,
            relation=self._relation,
            context=self._context,
            query=self._query,
            pairs=self._pairs,
            query_pair=self._query_pair,
            query_offset=self._query_offset,
            answer=self._answer,
            variant=self._variant,
            variant_arg=self._variant_arg,
            query_kind=self._query_kind,
            seed=self._seed,
            source_id=self._source_id,
        )

    def as_json_object(self):
        obj = self.as_fields()
        obj['context'] = list(self._context)
        obj['query'] = list(self._query)
        obj['pairs'] = [list(p) for p in self._pairs]
        return obj

    @staticmethod
    def from_json_object(obj):
        fields = dict(obj)
        fields.pop('text', None)
        try:
            return Sample(**fields)
        except TypeError as e:
            raise FormatError('Not a sample object: {}'.format(e))

    def __eq__(self, other):
        return type(self) == type(other) and self.as_fields() == \
            other.as_fields()

    def __repr__(self):
        return '{}(id={!r}, relation={}, variant={}, k={})'.format(
            type(self).__qualname__, self._id, self._relation,
            self.variant_label, len(self._pairs))


# Rendering


def _fill(template, attribute=None, entity=None, entity_word=None):
    """Return (words, attribute offset, entity offset)."""
    words = []
    attribute_offset = entity_offset = None
    for word in split_words(template):
        if word == '{a}':
            attribute_offset = len(words)
            words.append(attribute)
        elif word == '{e}':
            entity_offset = len(words)
            words.append(entity)
        elif word == '{E}':
            words.append(entity_word)
        else:
            words.append(word)
    return words, attribute_offset, entity_offset


def _order_indices(items):
    first = {}
    return [first.setdefault(item, len(first)) for item in items]


def relation_template(relation):
    if (isinstance(relation, bool) or not isinstance(relation, int)
            or not 0 <= relation < len(relations)):
        raise InputError('Not a relation id in [0, {}]: {!r}'.format(
            len(relations) - 1, relation))
    return relations[relation]


def render(relation, clauses, query_clause, vocab, frames=None, **fields):
    """Render clauses of (attribute word, entity word) into a sample
    whose query mentions the entity of clause `query_clause`.

    `frames` gives a per-clause template to use instead of the relation
    clause.  Identical clauses are recorded as one pair.  The answer is
    the attribute of the first clause of the queried entity.

    """
    tmpl = relation_template(relation)
    if not clauses:
        raise InputError('No clauses to render')
    words = []
    positions = []
    for idx, (attribute, entity) in enumerate(clauses):
        clause_tmpl = frames[idx] if frames is not None else tmpl.clause
        clause_words, a_off, e_off = _fill(
            clause_tmpl, attribute, entity, tmpl.entity_word)
        if idx > 0:
            words.append(',')
        else:
            clause_words = _capitalize_first(clause_words)
        positions.append((len(words) + a_off, len(words) + e_off))
        words.extend(clause_words)
    words.append('.')
    attributes = [c[0] for c in clauses]
    entities = [c[1] for c in clauses]
    attribute_ois = _order_indices(attributes)
    entity_ois = _order_indices(entities)
    pairs = []
    pair_of_clause = {}
    for idx, clause in enumerate(clauses):
        clause = tuple(clause)
        if clause in pair_of_clause:
            continue
        pair_of_clause[clause] = len(pairs)
        a_pi, e_pi = positions[idx]
        pairs.append(Pair(
            vocab.id(entities[idx]), vocab.id(attributes[idx]),
            entity_ois[idx], attribute_ois[idx], e_pi, a_pi))
    query_entity = entities[query_clause]
    query_words, _, query_offset = _fill(tmpl.query, entity=query_entity)
    answer_clause = entities.index(query_entity)
    return Sample(
        relation=relation,
        context=vocab.ids(words),
        query=vocab.ids(query_words),
        pairs=pairs,
        query_pair=pair_of_clause[tuple(clauses[query_clause])],
        query_offset=query_offset,
        answer=vocab.id(attributes[answer_clause]),
        **fields)


def _check_query_mode(query):
    if query not in query_modes:
        raise InputError('Unknown query mode: {!r}'.format(query))


def _draw(rng, pool, size, vocab):
    return [vocab.word(int(t))
            for t in rng.choice(pool, size=size, replace=False)]


def gen_base(relation, n, k_pairs, vocab, seed, query='any', first_id=0):
    """Generate `n` samples of `k_pairs` distinct entities bound to
    distinct attributes.

    query: 'any' queries a uniformly chosen entity, 'first' always
        queries the entity with OI 0.

    """
    relation_template(relation)
    general.check_count(n, 'n', 1)
    general.check_count(k_pairs, 'k_pairs', 2)
    _check_query_mode(query)
    pool_size = min(len(vocab.entity_pool), len(vocab.attribute_pool))
    if k_pairs > pool_size:
        raise InputError('k_pairs {} exceeds the pool size {}'.format(
            k_pairs, pool_size))
    samples = []
    for index in range(n):
        rng = np.random.default_rng((seed, first_id + index))
        entities = _draw(rng, vocab.entity_pool, k_pairs, vocab)
        attributes = _draw(rng, vocab.attribute_pool, k_pairs, vocab)
        query_clause = (0 if query == 'first'
                        else int(rng.integers(k_pairs)))
        samples.append(render(
            relation, list(zip(attributes, entities)), query_clause,
            vocab, id=first_id + index, seed=seed))
    logging.getLogger(__name__).info(
        'Generated {} base samples: relation: {}, k: {}, seed: {}',
        n, relation, k_pairs, seed)
    return samples


def _check_nonempty(samples, what):
    if not samples:
        raise InputError('No {} samples'.format(what))


def _words_of(sample, vocab):
    return [(vocab.word(p.attribute), vocab.word(p.entity))
            for p in sample.pairs]


def gen_pseudo(base, vocab):
    """Replace leading pairs by repeats of one fixed pseudo clause.

    For a base sample with k pairs and each p in 1..k-1, the output
    holds p pseudo clauses followed by base pairs 1..k-p and queries the
    last of them.  The pseudo entity takes OI 0, so real pairs keep
    their OIs while the queried entity always sits at the same PI.

    """
    _check_nonempty(base, 'base')
    out = []
    for sample in base:
        if sample.variant != 'base':
            raise InputError('Not a base sample: {!r}'.format(sample))
        words = _words_of(sample, vocab)
        k = len(words)
        for n_pseudo in range(1, k):
            clauses = ([(pseudo_attribute_word, pseudo_entity_word)]
                       * n_pseudo + words[1:k - n_pseudo + 1])
            out.append(render(
                sample.relation, clauses, len(clauses) - 1, vocab,
                id=len(out), variant='pseudo', variant_arg=n_pseudo,
                seed=sample.seed, source_id=sample.id))
    return out


def filler_words(length):
    general.check_count(length, 'filler length', 0)
    if length == 0:
        return []
    if length <= len(fillers):
        return split_words(fillers[length])
    return ([filler_pad_word] * (length - len(fillers))
            + split_words(fillers[len(fillers)]))


def _shift_pairs(pairs, start, shift):
    return [p._replace(
        entity_pi=p.entity_pi + (shift if p.entity_pi >= start else 0),
        attribute_pi=(p.attribute_pi
                      + (shift if p.attribute_pi >= start else 0)))
            for p in pairs]


def gen_filler(base, filler_lengths, vocab):
    """Prefix every sample with a filler of every requested length.

    Each source sample appears once per length, so filler length and
    OI are uncorrelated over the output.

    """
    _check_nonempty(base, 'base')
    lengths = [general.check_count(n, 'filler length', 0)
               for n in filler_lengths]
    if not lengths:
        raise InputError('No filler lengths')
    lower_the = vocab.id('the')
    upper_the = vocab.id('The')
    out = []
    for sample in base:
        for length in lengths:
            context = list(sample.context)
            if length > 0 and context and context[0] == upper_the:
                context[0] = lower_the
            prefix = vocab.ids(filler_words(length))
            out.append(sample.derive(
                id=len(out),
                context=prefix + context,
                pairs=_shift_pairs(sample.pairs, 0, length),
                variant='filler',
                variant_arg=length,
                source_id=sample.id))
    return out


def interjection_count(sample, insert_at):
    """Number of interjections inserted at `insert_at` so that the last
    one lies past every original pair position

    """
    last = max(max(p.entity_pi, p.attribute_pi) for p in sample.pairs)
    return last - insert_at + 2


def gen_interjection(base, vocab):
    """Insert interjections ("ah ah ... ah,") after the first pair."""
    _check_nonempty(base, 'base')
    comma = vocab.id(',')
    ah = vocab.id(interjection_word)
    out = []
    for sample in base:
        if len(sample.pairs) < 2:
            raise InputError('Need at least 2 pairs: {!r}'.format(sample))
        first = sample.pairs[0]
        after = max(first.entity_pi, first.attribute_pi)
        context = list(sample.context)
        try:
            insert_at = context.index(comma, after) + 1
        except ValueError:
            raise InputError(
                'No clause boundary after the first pair: {!r}'
                .format(sample))
        count = interjection_count(sample, insert_at)
        inserted = [ah] * count + [comma]
        out.append(sample.derive(
            id=len(out),
            context=context[:insert_at] + inserted + context[insert_at:],
            pairs=_shift_pairs(sample.pairs, insert_at, len(inserted)),
            variant='interjection',
            variant_arg=count,
            source_id=sample.id))
    return out


def gen_nonrelated(base, vocab, seed):
    """Re-render every pair with a randomly chosen non-relational frame.

    OIs are unchanged and the answer is absent.

    """
    _check_nonempty(base, 'base')
    if len(nonrelated_frames) < 3:
        raise InputError('Too few non-relational frames')
    out = []
    for sample in base:
        if sample.variant not in ('base', 'pattern'):
            raise InputError(
                'Not a base or pattern sample: {!r}'.format(sample))
        rng = np.random.default_rng((seed, sample.id))
        words = _words_of(sample, vocab)
        frames = [nonrelated_frames[int(i)] for i in
                  rng.integers(len(nonrelated_frames), size=len(words))]
        query_clause = sample.query_pair
        rendered = render(
            sample.relation, words, query_clause, vocab, frames=frames,
            id=len(out), variant='nonrelated', seed=seed,
            source_id=sample.id)
        out.append(rendered.derive(answer=None))
    return out


def gen_pattern(pattern, n, vocab, seed, relation=0, query='any',
                first_id=0):
    """Generate contexts of 7 attributes bound to entities by one of the
    binding patterns.

    Entity OI is the first-occurrence order of the distinct entity and
    attribute OI is the attribute order.

    """
    if pattern not in patterns:
        raise InputError('Unknown binding pattern: {!r}'.format(pattern))
    general.check_count(n, 'n', 1)
    _check_query_mode(query)
    mapping = patterns[pattern]
    n_entities = max(mapping) + 1
    samples = []
    for index in range(n):
        rng = np.random.default_rng((seed, first_id + index))
        entities = _draw(rng, vocab.entity_pool, n_entities, vocab)
        attributes = _draw(rng, vocab.attribute_pool, len(mapping), vocab)
        clauses = [(attributes[i], entities[m])
                   for (i, m) in enumerate(mapping)]
        entity = 0 if query == 'first' else int(rng.integers(n_entities))
        samples.append(render(
            relation, clauses, mapping.index(entity), vocab,
            id=first_id + index, variant='pattern', variant_arg=pattern,
            seed=seed))
    logging.getLogger(__name__).info(
        'Generated {} pattern samples: pattern: {}, seed: {}',
        n, pattern, seed)
    return samples


def expand_queries(samples, vocab):
    """One sample per distinct entity of every context, querying that
    entity.  The pseudo entity is never queried.

    """
    out = []
    for sample in samples:
        if sample.query_kind != 'entity':
            raise InputError('Not an entity query: {!r}'.format(sample))
        tmpl = relation_template(sample.relation)
        first_pair = collections.OrderedDict()
        for idx, pair in enumerate(sample.pairs):
            first_pair.setdefault(pair.entity, idx)
        for entity, idx in first_pair.items():
            if entity == vocab.pseudo_entity:
                continue
            query_words, _, offset = _fill(
                tmpl.query, entity=vocab.word(entity))
            answer = (sample.pairs[idx].attribute
                      if sample.answer is not None else None)
            out.append(sample.derive(
                id=len(out), query=vocab.ids(query_words),
                query_pair=idx, query_offset=offset, answer=answer,
                source_id=sample.id))
    return out


def attribute_query(sample, vocab, pair_index=None):
    """Replace the query by an attribute query ("The coffee is in")
    mentioning the attribute of pair `pair_index` (default: the queried
    pair).

    """
    if pair_index is None:
        pair_index = sample.query_pair
    if not 0 <= pair_index < len(sample.pairs):
        raise InputError('Pair index out of range: {}'.format(pair_index))
    tmpl = relation_template(sample.relation)
    words, offset, _ = _fill(
        tmpl.attribute_query,
        attribute=vocab.word(sample.pairs[pair_index].attribute))
    return sample.derive(
        query=vocab.ids(_capitalize_first(words)),
        query_pair=pair_index,
        query_offset=offset,
        query_kind='attribute',
        answer=None)


def expand_attribute_queries(samples, vocab):
    """One attribute query per distinct attribute of every context, in
    OI order.  The pseudo attribute is never queried.

    """
    out = []
    for sample in samples:
        first_pair = collections.OrderedDict()
        for idx, pair in enumerate(sample.pairs):
            first_pair.setdefault(pair.attribute, idx)
        for attribute, idx in first_pair.items():
            if attribute == vocab.pseudo_attribute:
                continue
            out.append(attribute_query(sample, vocab, idx).derive(
                id=len(out), source_id=sample.id))
    return out


# Datasets


class DatasetManifest:
    """Parameters of one generated dataset"""

    default_split = collections.OrderedDict(
        (('train', 0.8), ('dev', 0.1), ('test', 0.1)))

    def __init__(
            self,
            name,
            relation=0,
            variant='base',
            n=1000,
            k_pairs=7,
            seed=0,
            split=None,
            query='any',
            source=None,
            filler_lengths=None,
            pattern=None,
    ):
        if variant not in variants:
            raise InputError('Unknown variant: {!r}'.format(variant))
        relation_template(relation)
        general.check_count(n, 'n', 1)
        general.check_count(k_pairs, 'k_pairs', 2)
        _check_query_mode(query)
        split = collections.OrderedDict(
            split if split is not None else self.default_split)
        if set(split) != set(self.default_split):
            raise InputError('Split must name train, dev, and test: {}'
                             .format(dict(split)))
        if (any(f < 0 for f in split.values())
                or not math.isclose(sum(split.values()), 1.0,
                                    abs_tol=1e-9)):
            raise InputError('Split fractions must be nonnegative and '
                             'sum to 1: {}'.format(dict(split)))
        if variant == 'pattern' and pattern not in patterns:
            raise InputError('Unknown binding pattern: {!r}'.format(
                pattern))
        if variant in ('pseudo', 'filler', 'interjection',
                       'nonrelated') and source is None:
            raise InputError('Variant {} needs a source dataset'.format(
                variant))
        self._name = name
        self._relation = relation
        self._variant = variant
        self._n = n
        self._k_pairs = k_pairs
        self._seed = seed
        self._split = split
        self._query = query
        self._source = source
        self._filler_lengths = (tuple(filler_lengths)
                                if filler_lengths is not None
                                else (0, 1, 3, 5, 9))
        self._pattern = pattern

    @property
    def name(self):
        return self._name

    @property
    def relation(self):
        return self._relation

    @property
    def variant(self):
        return self._variant

    @property
    def n(self):
        return self._n

    @property
    def k_pairs(self):
        return self._k_pairs

    @property
    def seed(self):
        return self._seed

    @property
    def split(self):
        return self._split

    @property
    def query(self):
        return self._query

    @property
    def source(self):
        return self._source

    @property
    def filler_lengths(self):
        return self._filler_lengths

    @property
    def pattern(self):
        return self._pattern

    def as_yaml_object(self):
        obj = collections.OrderedDict((
            ('name', self._name),
            ('relation', self._relation),
            ('variant', self._variant),
            ('n', self._n),
            ('k_pairs', self._k_pairs),
            ('seed', self._seed),
            ('split', dict(self._split)),
            ('query', self._query),
        ))
        if self._source is not None:
            obj['source'] = self._source
        if self._variant == 'filler':
            obj['filler_lengths'] = list(self._filler_lengths)
        if self._pattern is not None:
            obj['pattern'] = self._pattern
        return obj

    @staticmethod
    def from_yaml_object(obj):
        fields = dict(obj)
        # Sizes are recorded next to saved manifests
        fields.pop('size', None)
        return DatasetManifest(**fields)

    def __repr__(self):
        return '{}(name={!r}, variant={!r}, n={})'.format(
            type(self).__qualname__, self._name, self._variant, self._n)


def generate(manifest, vocab, sources=None):
    """Generate the samples of a dataset manifest.

    sources: Mapping of dataset name to samples for derived variants

    """
    variant = manifest.variant
    if variant == 'base':
        return gen_base(manifest.relation, manifest.n, manifest.k_pairs,
                        vocab, manifest.seed, manifest.query)
    elif variant == 'pattern':
        return gen_pattern(manifest.pattern, manifest.n, vocab,
                           manifest.seed, manifest.relation, manifest.query)
    if sources is None or manifest.source not in sources:
        raise InputError('Dataset {}: Source dataset not available: {}'
                         .format(manifest.name, manifest.source))
    base = sources[manifest.source][:manifest.n]
    if variant == 'pseudo':
        return gen_pseudo(base, vocab)
    elif variant == 'filler':
        return gen_filler(base, manifest.filler_lengths, vocab)
    elif variant == 'interjection':
        return gen_interjection(base, vocab)
    elif variant == 'nonrelated':
        return gen_nonrelated(base, vocab, manifest.seed)
    raise InputError('Unknown variant: {!r}'.format(variant))


def split_ids(n, split, seed):
    """Partition sample ids 0..n-1 into train, dev, and test by a seeded
    shuffle.  Each part is sorted.

    """
    general.check_count(n, 'n', 1)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(math.floor(n * split['train'] + 1e-9))
    n_dev = int(math.floor(n * split['dev'] + 1e-9))
    n_dev = min(n_dev, n - n_train)
    return collections.OrderedDict((
        ('train', sorted(int(i) for i in order[:n_train])),
        ('dev', sorted(int(i) for i in order[n_train:n_train + n_dev])),
        ('test', sorted(int(i) for i in order[n_train + n_dev:])),
    ))


def save_samples(samples, path, vocab=None):
    """Write samples as JSON lines.  With a vocabulary, each line also
    carries the rendered text.

    """
    lines = []
    for sample in samples:
        obj = sample.as_json_object()
        if vocab is not None:
            obj['text'] = sample.text(vocab)
        lines.append(json.dumps(obj, sort_keys=True))
    return file.write_atomic(path, '\n'.join(lines) + '\n')


def load_samples(path):
    samples = []
    for line_num, line in enumerate(file.read_lines(path), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except ValueError as e:
            raise FormatError('{}: {}: Bad JSON: {}'.format(
                path, line_num, e))
        samples.append(Sample.from_json_object(obj))
    return samples


def save_vocabulary(vocab, path):
    return file.write_atomic(
        path, json.dumps(vocab.as_json_object(), indent=1) + '\n')


def load_vocabulary(path):
    with file.open(path, 'rt') as json_file:
        try:
            obj = json.load(json_file)
        except ValueError as e:
            raise FormatError('{}: Bad JSON: {}'.format(path, e))
    return Vocabulary.from_json_object(obj)


def save_manifest(manifests, sizes, vocab, path):
    """Record dataset manifests, their sizes and splits, and the
    vocabulary hash in YAML.

    """
    obj = collections.OrderedDict()
    obj['vocabulary'] = vocab.hash()
    datasets = []
    for manifest in manifests:
        entry = dict(manifest.as_yaml_object())
        entry['size'] = sizes[manifest.name]
        datasets.append(entry)
    obj['datasets'] = datasets
    text = yaml.safe_dump(
        json.loads(json.dumps(obj)), version=(1, 2), explicit_start=True,
        explicit_end=True, default_flow_style=False, sort_keys=False)
    return file.write_atomic(path, text)
