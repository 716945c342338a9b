"""
Smoke Corpus
Bundled character-level sentiment toy set built from short phrase lists
"""

import itertools
from typing import List, Tuple

import numpy as np

from alora.models.example import Example
from alora.utils import derive_rng

POSITIVE = ['good', 'great', 'fine', 'nice', 'superb', 'lovely', 'fun', 'warm', 'bright', 'solid',
            'smart', 'sweet', 'rich', 'fresh']
NEGATIVE = ['bad', 'awful', 'dull', 'poor', 'weak', 'grim', 'bleak', 'sad', 'flat', 'messy',
            'stale', 'bland', 'cheap', 'slow']
INTENSIFIERS = ['', 'so ', 'very ', 'truly ', 'quite ']
NOUNS = ['', ' film', ' plot', ' cast', ' show', ' song', ' book', ' meal', ' idea', ' game',
         ' play', ' view', ' work']
NEGATION = 'not '


def smoke_phrases(max_len: int) -> List[Tuple[str, int]]:
    """Every phrase up to max_len characters with its label (1 = positive)"""
    phrases = []
    adjectives = [(a, 1) for a in POSITIVE] + [(a, 0) for a in NEGATIVE]
    for negated, intensifier, (adjective, label), noun in itertools.product(
            (False, True), INTENSIFIERS, adjectives, NOUNS):
        text = (NEGATION if negated else '') + intensifier + adjective + noun
        if len(text) <= max_len:
            phrases.append((text, label ^ int(negated)))
    return phrases


def encode(text: str, vocab_size: int) -> Tuple[int, ...]:
    return tuple(ord(c) % vocab_size for c in text)


def smoke_corpus(n_examples: int = 2000, max_len: int = 16, vocab_size: int = 128,
                 seed: int = 0) -> List[Example]:
    """
    Seeded sample of distinct phrases as character-token examples.

    Returns fewer than n_examples when the phrase lists run out.
    """
    phrases = smoke_phrases(max_len)
    rng = derive_rng(seed, 'data')
    picks = rng.permutation(len(phrases))[:min(n_examples, len(phrases))]
    return [Example(encode(phrases[i][0], vocab_size), phrases[i][1]) for i in np.sort(picks)]
