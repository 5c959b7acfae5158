"""Byte-pair-encoding tokenizers and the two-half bilingual vocabulary.

The tokenizer is word-internal BPE: sentences are whitespace pre-split, each
word becomes a character sequence closed by an end-of-word marker, and merges
are learned greedily by pair frequency with a lexicographic tie-break so that
retraining is bit-exact across runs and platforms.

A bilingual vocabulary glues two trained models into one id space: source ids
stay put, target ids are shifted by the source size and their surfaces gain a
"::" prefix. The five special tokens exist once, in the source range; the
target range keeps (unused) slots for them so the shift stays purely additive.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

EOW = "</w>"

SPECIAL_SURFACES = ("<PAD>", "<MASK>", "<CLS>", "<SEP>", "<UNK>")
PAD_ID, MASK_ID, CLS_ID, SEP_ID, UNK_ID = range(5)
NUM_SPECIALS = len(SPECIAL_SURFACES)

FAKE_PREFIX = "::"


class BpeError(ValueError):
    """Raised on invalid tokenizer construction or serialization."""


@dataclass
class BpeModel:
    """An ordered merge list plus a surface -> id table.

    Ids 0..4 are the specials, base symbols and merged symbols follow in
    creation order, so the merge list order is also the id order of merged
    symbols.
    """

    merges: list[tuple[str, str]]
    vocab: dict[str, int]
    _id_to_surface: list[str] = field(default_factory=list, repr=False)
    _merge_ranks: dict[tuple[str, str], int] = field(default_factory=dict, repr=False)
    _word_cache: dict[str, tuple[int, ...]] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if not self._id_to_surface:
            self._id_to_surface = [""] * len(self.vocab)
            for surface, idx in self.vocab.items():
                self._id_to_surface[idx] = surface
        if not self._merge_ranks:
            self._merge_ranks = {pair: rank for rank, pair in enumerate(self.merges)}

    @property
    def size(self) -> int:
        return len(self.vocab)

    @property
    def lexical_ids(self) -> range:
        return range(NUM_SPECIALS, self.size)

    def surface(self, idx: int) -> str:
        return self._id_to_surface[idx]

    # -- encoding ----------------------------------------------------------

    def encode_word(self, word: str) -> tuple[int, ...]:
        """BPE-encode a single whitespace-free word to token ids."""
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        symbols = list(word) + [EOW]
        # Unknown base symbols are absorbed by UNK and never merge.
        known = [s in self.vocab for s in symbols]
        while len(symbols) > 1:
            best_rank = None
            best_pos = -1
            for i in range(len(symbols) - 1):
                if not (known[i] and known[i + 1]):
                    continue
                rank = self._merge_ranks.get((symbols[i], symbols[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pos = i
            if best_rank is None:
                break
            merged = symbols[best_pos] + symbols[best_pos + 1]
            # Replace every occurrence of this pair left to right.
            pair = (symbols[best_pos], symbols[best_pos + 1])
            out_syms: list[str] = []
            out_known: list[bool] = []
            i = 0
            while i < len(symbols):
                if (
                    i < len(symbols) - 1
                    and known[i]
                    and known[i + 1]
                    and (symbols[i], symbols[i + 1]) == pair
                ):
                    out_syms.append(merged)
                    out_known.append(True)
                    i += 2
                else:
                    out_syms.append(symbols[i])
                    out_known.append(known[i])
                    i += 1
            symbols = out_syms
            known = out_known
        ids = tuple(
            self.vocab[s] if ok else UNK_ID for s, ok in zip(symbols, known)
        )
        self._word_cache[word] = ids
        return ids

    def encode(self, sentence: str) -> list[int]:
        """Encode one sentence (whitespace-separated words) to token ids."""
        out: list[int] = []
        for word in sentence.split():
            out.extend(self.encode_word(word))
        return out

    def decode(self, ids: list[int]) -> str:
        """Inverse of encode up to whitespace normalization.

        decode(encode(s)) == " ".join(s.split()) whenever s only uses
        symbols seen at training time.
        """
        pieces: list[str] = []
        for idx in ids:
            surface = self._id_to_surface[idx]
            pieces.append(surface)
        text = "".join(pieces)
        return text.replace(EOW, " ").strip()

    # -- serialization -----------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write the "bpe-v1" model file: header, merges, then vocab table."""
        lines = [f"bpe-v1 {self.size}"]
        for left, right in self.merges:
            lines.append(f"{left} {right}")
        for idx, surface in enumerate(self._id_to_surface):
            lines.append(f"{surface}\t{idx}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BpeModel":
        raw = Path(path).read_text(encoding="utf-8").splitlines()
        if not raw or not raw[0].startswith("bpe-v1 "):
            raise BpeError(f"{path}: not a bpe-v1 model file")
        size = int(raw[0].split()[1])
        merges: list[tuple[str, str]] = []
        vocab: dict[str, int] = {}
        for line in raw[1:]:
            if not line:
                continue
            if "\t" in line:
                surface, idx = line.rsplit("\t", 1)
                vocab[surface] = int(idx)
            else:
                left, right = line.split(" ")
                merges.append((left, right))
        if len(vocab) != size:
            raise BpeError(
                f"{path}: header declares {size} entries, table has {len(vocab)}"
            )
        return cls(merges=merges, vocab=vocab)


def _base_symbols(word_freqs: Counter[str]) -> set[str]:
    symbols: set[str] = {EOW}
    for word in word_freqs:
        symbols.update(word)
    return symbols


def train_bpe(lines: list[str], vocab_size: int, seed: int = 0) -> BpeModel:
    """Learn a BPE model of exactly ``vocab_size`` entries (or fewer if pair
    counts dry up before the budget is reached).

    Most-frequent-pair merging, ties broken by the lexicographically smallest
    pair; merging stops when no pair occurs at least twice. ``seed`` is part
    of the interface for provenance logging only: training is deterministic.
    """
    del seed
    word_freqs: Counter[str] = Counter()
    for line in lines:
        word_freqs.update(line.split())
    if not word_freqs:
        raise BpeError("empty corpus")

    base = sorted(_base_symbols(word_freqs))
    floor = NUM_SPECIALS + len(base)
    if vocab_size < floor:
        raise BpeError(
            f"vocab_size {vocab_size} below alphabet floor {floor} "
            f"({NUM_SPECIALS} specials + {len(base)} base symbols)"
        )

    vocab: dict[str, int] = {s: i for i, s in enumerate(SPECIAL_SURFACES)}
    for s in base:
        vocab[s] = len(vocab)

    # Words as symbol tuples, weighted by frequency; merges operate on types.
    words: dict[tuple[str, ...], int] = {
        tuple(word) + (EOW,): freq for word, freq in word_freqs.items()
    }
    merges: list[tuple[str, str]] = []
    while len(vocab) < vocab_size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        for syms, freq in words.items():
            for pair in zip(syms, syms[1:]):
                pair_counts[pair] += freq
        if not pair_counts:
            break
        best_count = max(pair_counts.values())
        if best_count < 2:
            break
        best = min(p for p, c in pair_counts.items() if c == best_count)
        merged = best[0] + best[1]
        merges.append(best)
        vocab[merged] = len(vocab)
        new_words: dict[tuple[str, ...], int] = {}
        for syms, freq in words.items():
            out: list[str] = []
            i = 0
            while i < len(syms):
                if i < len(syms) - 1 and (syms[i], syms[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            new_words[tuple(out)] = new_words.get(tuple(out), 0) + freq
        words = new_words

    return BpeModel(merges=merges, vocab=vocab)


@dataclass
class BilingualVocab:
    """Two BPE halves sharing one id space.

    Source ids are the source model's own; target ids are shifted by
    ``offset`` (= source size). Special tokens live once in the source range;
    the target range reserves dead slots for them so corpus ids stay a pure
    additive shift of the target model's ids.
    """

    source: BpeModel
    target: BpeModel
    offset: int
    total_size: int

    @property
    def source_lexical_ids(self) -> range:
        return range(NUM_SPECIALS, self.offset)

    @property
    def target_lexical_ids(self) -> range:
        return range(self.offset + NUM_SPECIALS, self.total_size)

    def surface(self, idx: int) -> str:
        if idx < self.offset:
            return self.source.surface(idx)
        rel = idx - self.offset
        if rel < NUM_SPECIALS:
            return self.target.surface(rel)  # dead slot, unprefixed
        return FAKE_PREFIX + self.target.surface(rel)

    def strip_prefix(self, surface: str) -> str:
        if surface.startswith(FAKE_PREFIX):
            return surface[len(FAKE_PREFIX):]
        return surface


def build_bilingual_vocab(src: BpeModel, tgt: BpeModel) -> BilingualVocab:
    """Assemble the combined id space; rejects "::"-prefixed source surfaces
    because they would collide with generated target surfaces."""
    for surface in src.vocab:
        if surface.startswith(FAKE_PREFIX):
            raise BpeError(
                f"source surface {surface!r} already carries the {FAKE_PREFIX} prefix"
            )
    return BilingualVocab(
        source=src, target=tgt, offset=src.size, total_size=src.size + tgt.size
    )
