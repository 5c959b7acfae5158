"""Corpus loading and Fake-English forging for the nine decipherment conditions.

A raw corpus is one sentence per UTF-8 line. Tokenized corpora carry a
transform log so any derived corpus replays bit-exactly from the raw file:
the log records the operation name and its parameters (including seeds), and
``replay_transform_log`` re-applies them.

``build_condition`` assembles a full bilingual dataset: both BPE halves, the
shifted/prefixed fake corpus with its order transform, the identity-prefix
ground-truth dictionary, and 1000 held-out parallel pairs (the last 1000 raw
lines, which are excluded from both training corpora).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .bpe import (
    FAKE_PREFIX,
    NUM_SPECIALS,
    BilingualVocab,
    BpeModel,
    build_bilingual_vocab,
    train_bpe,
)
from .synth import generate_domain_corpus

HELD_OUT_PAIRS = 1000

CONDITION_NAMES = (
    "NT-NT", "NT-OT", "NT-TED", "NT-WIKI",
    "NT-500", "NT-1K", "NT-4K",
    "NT-INV", "NT-RND",
)

# name -> (target domain, forced target vocab size or None, order transform)
_CONDITION_TABLE = {
    "NT-NT": ("nt", None, "none"),
    "NT-OT": ("ot", None, "none"),
    "NT-TED": ("ted", None, "none"),
    "NT-WIKI": ("wiki", None, "none"),
    "NT-500": ("nt", 500, "none"),
    "NT-1K": ("nt", 1000, "none"),
    "NT-4K": ("nt", 4000, "none"),
    "NT-INV": ("nt", None, "invert"),
    "NT-RND": ("nt", None, "randomize"),
}


class CorpusError(ValueError):
    """Raised on malformed corpus files or invalid forge operations."""


@dataclass
class RawCorpus:
    """Untokenized sentences staged for tokenization."""

    lines: list[str]
    domain_tag: str
    path: str = ""

    @property
    def line_count(self) -> int:
        return len(self.lines)

    @property
    def word_count(self) -> int:
        return sum(len(line.split()) for line in self.lines)

    @property
    def avg_len(self) -> float:
        return self.word_count / self.line_count if self.lines else 0.0


@dataclass
class Corpus:
    """Tokenized sentence collection with reproducible provenance."""

    sentences: list[list[int]]
    lang_tag: str  # "e" | "f"
    domain_tag: str
    transform_log: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sentences)

    def max_id(self) -> int:
        return max((max(s) for s in self.sentences if s), default=-1)


def load_corpus(path: str | Path, domain_tag: str) -> RawCorpus:
    """Read a one-sentence-per-line UTF-8 file.

    Rejects missing files, empty files, and non-UTF-8 bytes (with the byte
    offset of the first offending byte).
    """
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"corpus file not found: {p}")
    data = p.read_bytes()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CorpusError(
            f"{p}: invalid UTF-8 at byte offset {exc.start}"
        ) from exc
    lines = [line for line in text.split("\n") if line.strip()]
    if not lines:
        raise CorpusError(f"empty corpus: {p}")
    return RawCorpus(lines=lines, domain_tag=domain_tag, path=str(p))


def tokenize_corpus(
    raw: RawCorpus, model: BpeModel, lang_tag: str = "e"
) -> Corpus:
    sentences = [model.encode(line) for line in raw.lines]
    return Corpus(
        sentences=sentences,
        lang_tag=lang_tag,
        domain_tag=raw.domain_tag,
        transform_log=[{"op": "tokenize", "domain": raw.domain_tag}],
    )


def make_fake_corpus(corpus: Corpus, offset: int) -> Corpus:
    """Shift every token id by ``offset`` and flip the language tag to f.

    The "::" surface prefix lives in the bilingual vocabulary table; at the
    corpus level the fake twin is a pure additive relabeling, so shifting back
    by the same offset is the exact inverse.
    """
    if corpus.lang_tag != "e":
        raise CorpusError("make_fake_corpus expects a source-language corpus")
    max_id = corpus.max_id()
    if offset <= max_id:
        raise CorpusError(
            f"offset {offset} collides with source ids (max id {max_id})"
        )
    return Corpus(
        sentences=[[t + offset for t in s] for s in corpus.sentences],
        lang_tag="f",
        domain_tag=corpus.domain_tag,
        transform_log=corpus.transform_log + [{"op": "fake_shift", "offset": offset}],
    )


def order_permutation(
    transform: str, seed: int, sentence_index: int, length: int
) -> list[int]:
    """Position map for one sentence: old position p lands at new position
    perm[p]. randomize is an independent uniform shuffle keyed by
    (seed, sentence_index)."""
    if transform == "invert":
        return [length - 1 - p for p in range(length)]
    if transform == "randomize":
        rng = np.random.default_rng(np.random.SeedSequence([seed, sentence_index]))
        # destinations[i] = old index placed at new position i; invert it.
        destinations = rng.permutation(length)
        perm = [0] * length
        for new_pos, old_pos in enumerate(destinations):
            perm[old_pos] = new_pos
        return perm
    raise CorpusError(f"unknown order transform {transform!r}")


def apply_order_transform(corpus: Corpus, transform: str, seed: int) -> Corpus:
    """Reverse (invert) or shuffle (randomize) each sentence's token order.

    Unigram counts are untouched; randomize uses one independent permutation
    per sentence keyed by (seed, sentence index) so replays are exact.
    """
    if transform not in ("invert", "randomize"):
        raise CorpusError(f"unknown order transform {transform!r}")
    out: list[list[int]] = []
    for idx, sent in enumerate(corpus.sentences):
        perm = order_permutation(transform, seed, idx, len(sent))
        new = [0] * len(sent)
        for old_pos, tok in enumerate(sent):
            new[perm[old_pos]] = tok
        out.append(new)
    return Corpus(
        sentences=out,
        lang_tag=corpus.lang_tag,
        domain_tag=corpus.domain_tag,
        transform_log=corpus.transform_log
        + [{"op": "order_transform", "transform": transform, "seed": seed}],
    )


def replay_transform_log(
    raw: RawCorpus, log: list[dict], model: BpeModel
) -> Corpus:
    """Re-run a transform log from the raw file; used to audit provenance."""
    corpus: Corpus | None = None
    for entry in log:
        op = entry["op"]
        if op == "tokenize":
            corpus = tokenize_corpus(raw, model)
        elif op == "fake_shift":
            corpus = make_fake_corpus(corpus, entry["offset"])
        elif op == "order_transform":
            corpus = apply_order_transform(corpus, entry["transform"], entry["seed"])
        else:
            raise CorpusError(f"unknown transform-log op {op!r}")
    if corpus is None:
        raise CorpusError("transform log contains no operations")
    return corpus


# -- ground-truth dictionary -------------------------------------------------


@dataclass
class GroundTruthDictionary:
    """(source id, target id) pairs in the bilingual id space."""

    pairs: list[tuple[int, int]]
    construction: str  # identity-prefix | restricted-intersection | external-file

    def __len__(self) -> int:
        return len(self.pairs)

    def check_one_one(self) -> None:
        src = [s for s, _ in self.pairs]
        tgt = [t for _, t in self.pairs]
        if len(set(src)) != len(src) or len(set(tgt)) != len(tgt):
            raise CorpusError("dictionary is not one-one")

    def save_tsv(self, path: str | Path, vocab: BilingualVocab) -> None:
        rows = [
            f"{vocab.surface(s)}\t{vocab.surface(t)}" for s, t in self.pairs
        ]
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def identity_prefix_dictionary(
    vocab: BilingualVocab, construction: str = "identity-prefix"
) -> GroundTruthDictionary:
    """Pair every source lexical surface s with target surface ::s when both
    halves carry it. For twin vocabularies this covers every lexical type;
    for mismatched vocabularies it is the surface intersection."""
    target_index = {
        vocab.target.surface(j): vocab.offset + j
        for j in range(NUM_SPECIALS, vocab.target.size)
    }
    pairs: list[tuple[int, int]] = []
    for i in range(NUM_SPECIALS, vocab.source.size):
        surface = vocab.source.surface(i)
        tid = target_index.get(surface)
        if tid is not None:
            pairs.append((i, tid))
    d = GroundTruthDictionary(pairs=pairs, construction=construction)
    d.check_one_one()
    return d


def load_dictionary_tsv(
    path: str | Path, vocab: BilingualVocab
) -> GroundTruthDictionary:
    src_index = {vocab.source.surface(i): i for i in vocab.source_lexical_ids}
    tgt_index = {vocab.surface(j): j for j in vocab.target_lexical_ids}
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        s_surf, t_surf = line.split("\t")
        if s_surf in src_index and t_surf in tgt_index:
            pairs.append((src_index[s_surf], tgt_index[t_surf]))
    d = GroundTruthDictionary(pairs=pairs, construction="external-file")
    d.check_one_one()
    return d


# -- condition specs ----------------------------------------------------------


@dataclass
class ConditionSpec:
    """One of the nine named decipherment settings.

    The name pins the target domain, any forced target vocabulary size, and
    the order transform; the source side always uses ``source_vocab_size``.
    """

    name: str
    source_corpus: str
    target_corpus: str
    source_vocab_size: int
    target_vocab_size: int
    order_transform: str
    seed: int

    @classmethod
    def from_name(
        cls,
        name: str,
        source_corpus: str = "",
        target_corpus: str = "",
        source_vocab_size: int = 2000,
        seed: int = 0,
    ) -> "ConditionSpec":
        if name not in _CONDITION_TABLE:
            raise CorpusError(f"unknown condition {name!r}; choose from {CONDITION_NAMES}")
        _, forced_vocab, transform = _CONDITION_TABLE[name]
        if transform != "none" or _CONDITION_TABLE[name][0] == "nt":
            if target_corpus and target_corpus != source_corpus:
                raise CorpusError(f"{name} requires target_corpus == source_corpus")
            target_corpus = source_corpus
        return cls(
            name=name,
            source_corpus=source_corpus,
            target_corpus=target_corpus or source_corpus,
            source_vocab_size=source_vocab_size,
            target_vocab_size=forced_vocab or source_vocab_size,
            order_transform=transform,
            seed=seed,
        )

    @property
    def target_domain(self) -> str:
        return _CONDITION_TABLE[self.name][0]

    def validate(self) -> None:
        domain, forced_vocab, transform = _CONDITION_TABLE[self.name]
        if self.order_transform != transform:
            raise CorpusError(
                f"{self.name} forces order_transform={transform}, got {self.order_transform}"
            )
        if forced_vocab is not None and self.target_vocab_size != forced_vocab:
            raise CorpusError(
                f"{self.name} forces target_vocab_size={forced_vocab}"
            )
        if domain == "nt" and self.target_corpus != self.source_corpus:
            raise CorpusError(f"{self.name} requires target_corpus == source_corpus")

    def save(self, path: str | Path) -> None:
        lines = [f"{k}={v}" for k, v in asdict(self).items()]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ConditionSpec":
        fields: dict[str, str] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            fields[key.strip()] = value.strip()
        spec = cls(
            name=fields["name"],
            source_corpus=fields["source_corpus"],
            target_corpus=fields["target_corpus"],
            source_vocab_size=int(fields["source_vocab_size"]),
            target_vocab_size=int(fields["target_vocab_size"]),
            order_transform=fields["order_transform"],
            seed=int(fields["seed"]),
        )
        spec.validate()
        return spec


# -- parallel eval pairs -------------------------------------------------------


@dataclass
class EvalPair:
    """One held-out parallel sentence with word-level grouping.

    ``e_word_spans[w]`` lists the e-side token positions of word w;
    ``f_word_groups[w]`` lists the f-side positions of the same word after the
    condition's order transform (contiguity is not guaranteed under
    randomize). Gold word alignment is the identity on word indices.
    """

    e_ids: list[int]
    f_ids: list[int]
    e_word_spans: list[list[int]]
    f_word_groups: list[list[int]]


@dataclass
class ParallelEvalSet:
    pairs: list[EvalPair]
    condition: str = ""

    def __len__(self) -> int:
        return len(self.pairs)


def _word_truncate(words: list[str], model: BpeModel, budget: int) -> tuple[list[str], list[int]]:
    """Keep the longest word prefix whose token count fits the budget."""
    kept: list[str] = []
    lens: list[int] = []
    total = 0
    for w in words:
        n = len(model.encode_word(w))
        if total + n > budget:
            break
        kept.append(w)
        lens.append(n)
        total += n
    return kept, lens


def build_eval_pairs(
    held_lines: list[str],
    first_index: int,
    vocab: BilingualVocab,
    order_transform: str,
    transform_seed: int,
    max_seq: int = 128,
) -> list[EvalPair]:
    """Tokenize held-out lines on both sides and track word groups through
    the order transform. Overlong sentences are word-truncated on both sides
    together so the pair stays aligned."""
    budget = max_seq - 2  # CLS/SEP framing at batch time
    pairs: list[EvalPair] = []
    for offset_idx, line in enumerate(held_lines):
        words = line.split()
        if not words:
            continue
        # Shrink until both sides fit.
        while words:
            kept_e, _ = _word_truncate(words, vocab.source, budget)
            kept_f, _ = _word_truncate(words, vocab.target, budget)
            keep = min(len(kept_e), len(kept_f))
            if keep == len(words):
                break
            words = words[:keep]
        if not words:
            continue

        e_ids: list[int] = []
        e_word_spans: list[list[int]] = []
        for w in words:
            toks = vocab.source.encode_word(w)
            e_word_spans.append(list(range(len(e_ids), len(e_ids) + len(toks))))
            e_ids.extend(toks)

        f_raw: list[int] = []
        f_spans: list[list[int]] = []
        for w in words:
            toks = vocab.target.encode_word(w)
            f_spans.append(list(range(len(f_raw), len(f_raw) + len(toks))))
            f_raw.extend(toks)
        f_shifted = [t + vocab.offset for t in f_raw]

        if order_transform == "none":
            f_ids = f_shifted
            f_word_groups = f_spans
        else:
            perm = order_permutation(
                order_transform, transform_seed, first_index + offset_idx, len(f_shifted)
            )
            f_ids = [0] * len(f_shifted)
            for old_pos, tok in enumerate(f_shifted):
                f_ids[perm[old_pos]] = tok
            f_word_groups = [[perm[p] for p in span] for span in f_spans]

        pairs.append(
            EvalPair(
                e_ids=e_ids,
                f_ids=f_ids,
                e_word_spans=e_word_spans,
                f_word_groups=f_word_groups,
            )
        )
    return pairs


# -- condition assembly --------------------------------------------------------


@dataclass
class ConditionData:
    """Everything one decipherment condition needs downstream."""

    spec: ConditionSpec
    vocab: BilingualVocab
    corpus_e: Corpus
    corpus_f: Corpus
    dictionary: GroundTruthDictionary
    eval_set: ParallelEvalSet


def build_condition(
    spec: ConditionSpec,
    source_raw: RawCorpus | None = None,
    target_raw: RawCorpus | None = None,
    held_out: int = HELD_OUT_PAIRS,
    max_seq: int = 128,
    synth_lines: int = 8000,
) -> ConditionData:
    """Assemble the bilingual dataset for one condition.

    When raw corpora are not supplied, the synthetic generator provides the
    domain text (source domain is always nt). The last ``held_out`` raw lines
    become the parallel eval pairs and are dropped from both training sides.
    """
    spec.validate()
    if source_raw is None:
        source_raw = RawCorpus(
            lines=generate_domain_corpus("nt", synth_lines, spec.seed),
            domain_tag="nt",
        )
    if target_raw is None:
        if spec.target_domain == "nt" and spec.target_corpus == spec.source_corpus:
            target_raw = source_raw
        else:
            target_raw = RawCorpus(
                lines=generate_domain_corpus(spec.target_domain, synth_lines, spec.seed),
                domain_tag=spec.target_domain,
            )

    if len(source_raw.lines) <= held_out or len(target_raw.lines) <= held_out:
        raise CorpusError(
            f"held-out request ({held_out}) exceeds corpus size "
            f"({len(source_raw.lines)}/{len(target_raw.lines)} lines)"
        )

    src_model = train_bpe(source_raw.lines, spec.source_vocab_size, seed=spec.seed)
    if target_raw is source_raw and spec.target_vocab_size == spec.source_vocab_size:
        tgt_model = src_model
    else:
        tgt_model = train_bpe(target_raw.lines, spec.target_vocab_size, seed=spec.seed)
    vocab = build_bilingual_vocab(src_model, tgt_model)

    src_train = RawCorpus(
        lines=source_raw.lines[:-held_out], domain_tag=source_raw.domain_tag
    )
    tgt_train = RawCorpus(
        lines=target_raw.lines[:-held_out], domain_tag=target_raw.domain_tag
    )

    corpus_e = tokenize_corpus(src_train, src_model, lang_tag="e")
    corpus_f = make_fake_corpus(tokenize_corpus(tgt_train, tgt_model), vocab.offset)
    if spec.order_transform != "none":
        corpus_f = apply_order_transform(corpus_f, spec.order_transform, spec.seed)

    construction = (
        "identity-prefix"
        if tgt_model is src_model
        else "restricted-intersection"
    )
    dictionary = identity_prefix_dictionary(vocab, construction)
    if not dictionary.pairs:
        raise CorpusError(
            f"{spec.name}: surface intersection of the two vocabularies is empty"
        )

    held_lines = source_raw.lines[-held_out:]
    pairs = build_eval_pairs(
        held_lines,
        first_index=len(source_raw.lines) - held_out,
        vocab=vocab,
        order_transform=spec.order_transform,
        transform_seed=spec.seed,
        max_seq=max_seq,
    )
    eval_set = ParallelEvalSet(pairs=pairs, condition=spec.name)

    return ConditionData(
        spec=spec,
        vocab=vocab,
        corpus_e=corpus_e,
        corpus_f=corpus_f,
        dictionary=dictionary,
        eval_set=eval_set,
    )


# -- dataset directory serialization -------------------------------------------

DATASET_SCHEMA = "dataset-v1"


def _write_ids(path: Path, sentences: list[list[int]]) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for sent in sentences:
            fh.write(" ".join(str(t) for t in sent))
            fh.write("\n")


def _read_ids(path: Path) -> list[list[int]]:
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        out.append([int(t) for t in line.split()] if line else [])
    return out


def save_condition_data(data: ConditionData, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data.spec.save(out / "condition.spec")
    data.vocab.source.save(out / "source.bpe")
    data.vocab.target.save(out / "target.bpe")
    _write_ids(out / "corpus_e.ids", data.corpus_e.sentences)
    _write_ids(out / "corpus_f.ids", data.corpus_f.sentences)
    data.dictionary.save_tsv(out / "dictionary.tsv", data.vocab)
    eval_payload = {
        "schema_id": "eval-set-v1",
        "condition": data.eval_set.condition,
        "pairs": [asdict(p) for p in data.eval_set.pairs],
    }
    (out / "eval_set.json").write_text(
        json.dumps(eval_payload), encoding="utf-8"
    )
    meta = {
        "schema_id": DATASET_SCHEMA,
        "offset": data.vocab.offset,
        "total_size": data.vocab.total_size,
        "dictionary_construction": data.dictionary.construction,
        "transform_log_e": data.corpus_e.transform_log,
        "transform_log_f": data.corpus_f.transform_log,
        "domain_e": data.corpus_e.domain_tag,
        "domain_f": data.corpus_f.domain_tag,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_condition_data(dataset_dir: str | Path) -> ConditionData:
    d = Path(dataset_dir)
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    if meta.get("schema_id") != DATASET_SCHEMA:
        raise CorpusError(f"{d}: unsupported dataset schema {meta.get('schema_id')}")
    spec = ConditionSpec.load(d / "condition.spec")
    src_model = BpeModel.load(d / "source.bpe")
    tgt_model = BpeModel.load(d / "target.bpe")
    vocab = build_bilingual_vocab(src_model, tgt_model)
    corpus_e = Corpus(
        sentences=_read_ids(d / "corpus_e.ids"),
        lang_tag="e",
        domain_tag=meta["domain_e"],
        transform_log=meta["transform_log_e"],
    )
    corpus_f = Corpus(
        sentences=_read_ids(d / "corpus_f.ids"),
        lang_tag="f",
        domain_tag=meta["domain_f"],
        transform_log=meta["transform_log_f"],
    )
    dictionary = load_dictionary_tsv(d / "dictionary.tsv", vocab)
    dictionary.construction = meta["dictionary_construction"]
    payload = json.loads((d / "eval_set.json").read_text(encoding="utf-8"))
    eval_set = ParallelEvalSet(
        pairs=[EvalPair(**p) for p in payload["pairs"]],
        condition=payload["condition"],
    )
    return ConditionData(
        spec=spec,
        vocab=vocab,
        corpus_e=corpus_e,
        corpus_f=corpus_f,
        dictionary=dictionary,
        eval_set=eval_set,
    )
