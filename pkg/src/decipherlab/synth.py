"""Deterministic synthetic corpus generator.

Produces small artificial-language corpora for the decipherment conditions:
a shared pseudo-word lexicon organized by word class, a template grammar that
expands class sequences into sentences, and Zipf-Mandelbrot word choice within
each class. Four "domains" reuse the same lexicon and grammar but mix in a
domain-specific frequency permutation and template re-weighting, so their
unigram distributions drift apart by a controlled amount (the nt domain is the
reference; ot < ted < wiki in divergence).

Everything is keyed by an integer seed and replays bit-exactly.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np


def _stable_key(name: str) -> int:
    # str.__hash__ is salted per process; crc32 is not.
    return zlib.crc32(name.encode("utf-8"))

ONSETS = [
    "b", "d", "f", "g", "h", "k", "l", "m", "n", "p",
    "r", "s", "t", "v", "w", "z", "ch", "sh", "th", "br",
    "dr", "gr", "kl", "pr", "st", "tr",
]
VOWELS = ["a", "e", "i", "o", "u", "ai", "ei", "ou"]
CODAS = ["", "", "n", "r", "s", "t", "l", "m", "nd", "st"]

# (class, type count, syllable range); counts sized so a few hundred BPE
# merges cover the frequent words and split the rare ones.
WORD_CLASSES = [
    ("det", 6, (1, 1)),
    ("pron", 8, (1, 1)),
    ("prep", 10, (1, 1)),
    ("conj", 5, (1, 1)),
    ("adv", 30, (2, 3)),
    ("adj", 60, (2, 3)),
    ("verb", 90, (2, 3)),
    ("noun", 140, (2, 4)),
    ("name", 25, (2, 3)),
]

# Sentence templates (sampled per sentence); weights are re-mixed per domain.
TEMPLATES = [
    ("det", "noun", "verb", "det", "noun"),
    ("det", "adj", "noun", "verb", "det", "noun"),
    ("name", "verb", "prep", "det", "noun"),
    ("pron", "verb", "det", "adj", "noun"),
    ("det", "noun", "verb", "adv"),
    ("det", "noun", "prep", "det", "noun", "verb", "det", "noun"),
    ("pron", "adv", "verb", "prep", "det", "noun"),
    ("name", "conj", "name", "verb", "det", "noun"),
    ("det", "adj", "noun", "verb", "adv", "conj", "pron", "verb", "det", "noun"),
    ("det", "noun", "verb", "det", "noun", "prep", "det", "adj", "noun"),
]

BASE_TEMPLATE_WEIGHTS = np.array(
    [3.0, 2.5, 1.5, 2.0, 2.0, 1.0, 1.0, 0.8, 0.7, 0.9]
)

# Domain knobs: (rank-permutation mix, template tilt strength, extra words).
DOMAIN_PROFILES = {
    "nt": (0.0, 0.0, 0),
    "ot": (0.22, 0.15, 4),
    "ted": (0.55, 0.45, 10),
    "wiki": (0.95, 0.9, 18),
}

ZIPF_EXPONENT = 1.05
ZIPF_SHIFT = 2.0


@dataclass
class Lexicon:
    words: dict[str, list[str]]  # class -> word list in base rank order


def _make_word(rng: np.random.Generator, n_syllables: int) -> str:
    parts = []
    for _ in range(n_syllables):
        parts.append(rng.choice(ONSETS) + rng.choice(VOWELS) + rng.choice(CODAS))
    return "".join(parts)


def build_lexicon(seed: int = 0) -> Lexicon:
    """Pseudo-word inventory shared by all domains; deterministic in seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBEEF]))
    words: dict[str, list[str]] = {}
    taken: set[str] = set()
    for cls, count, (lo, hi) in WORD_CLASSES:
        out: list[str] = []
        while len(out) < count:
            w = _make_word(rng, int(rng.integers(lo, hi + 1)))
            if w not in taken:
                taken.add(w)
                out.append(w)
        words[cls] = out
    return Lexicon(words=words)


def _zipf_weights(n: int) -> np.ndarray:
    ranks = np.arange(n, dtype=np.float64)
    w = 1.0 / (ranks + ZIPF_SHIFT) ** ZIPF_EXPONENT
    return w / w.sum()


def _domain_class_weights(
    lexicon: Lexicon, domain: str, seed: int
) -> dict[str, np.ndarray]:
    """Per-class word distributions: base Zipf weights, partially re-ranked
    by a domain-keyed permutation. alpha=0 reproduces the base exactly."""
    alpha, _, extra = DOMAIN_PROFILES[domain]
    rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_key(domain)]))
    weights: dict[str, np.ndarray] = {}
    for cls, words in lexicon.words.items():
        n = len(words)
        base = _zipf_weights(n)
        perm = rng.permutation(n)
        mixed = (1.0 - alpha) * base + alpha * base[perm]
        # A few domain-favoured words get boosted to mimic topical vocabulary.
        if extra and cls in ("noun", "verb", "adj"):
            favored = rng.choice(n, size=min(extra, n), replace=False)
            mixed[favored] += alpha * 2.0 / n
        weights[cls] = mixed / mixed.sum()
    return weights


def _domain_template_weights(domain: str, seed: int) -> np.ndarray:
    _, tilt, _ = DOMAIN_PROFILES[domain]
    rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_key(domain), 7]))
    noise = rng.uniform(0.2, 2.0, size=len(BASE_TEMPLATE_WEIGHTS))
    w = (1.0 - tilt) * BASE_TEMPLATE_WEIGHTS + tilt * BASE_TEMPLATE_WEIGHTS * noise
    return w / w.sum()


def generate_domain_corpus(
    domain: str, lines: int, seed: int = 0, lexicon: Lexicon | None = None
) -> list[str]:
    """Generate ``lines`` sentences for one domain. Same (domain, lines, seed)
    always yields the same text; different domains share the lexicon but not
    the sentences."""
    if domain not in DOMAIN_PROFILES:
        raise ValueError(f"unknown domain {domain!r}; choose from {sorted(DOMAIN_PROFILES)}")
    if lexicon is None:
        lexicon = build_lexicon(seed)
    class_weights = _domain_class_weights(lexicon, domain, seed)
    template_weights = _domain_template_weights(domain, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, _stable_key(domain), 13]))

    sentences: list[str] = []
    n_templates = len(TEMPLATES)
    for _ in range(lines):
        parts: list[str] = []
        # One or two clauses per line for length variety.
        n_clauses = 1 + int(rng.random() < 0.3)
        for _ in range(n_clauses):
            t = TEMPLATES[int(rng.choice(n_templates, p=template_weights))]
            for cls in t:
                words = lexicon.words[cls]
                parts.append(words[int(rng.choice(len(words), p=class_weights[cls]))])
        sentences.append(" ".join(parts))
    return sentences


def write_domain_corpus(path, domain: str, lines: int, seed: int = 0) -> None:
    from pathlib import Path

    text = "\n".join(generate_domain_corpus(domain, lines, seed)) + "\n"
    Path(path).write_text(text, encoding="utf-8")
