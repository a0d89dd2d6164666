"""Sentence/document corpora with known topic structure.

A corpus is a list of documents, each an ordered list of sentences; sentences
are sequences of integer token ids in ``[0, vocab_size)``.  The synthetic
generator draws each document from one latent topic and copies a fraction of
every sentence's tokens from its predecessor, so both cluster membership and
adjacency leave a trace in the bag-of-tokens embedding.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[int, ...]
    doc_id: int
    pos: int


@dataclass
class Corpus:
    documents: list[list[Sentence]]
    vocab_size: int
    max_seq_len: int = 512

    def __post_init__(self):
        if not self.documents:
            raise CorpusError("empty corpus")
        seen = set()
        for doc in self.documents:
            if not doc:
                raise CorpusError("empty document")
            ids = {s.doc_id for s in doc}
            if len(ids) != 1:
                raise CorpusError("sentences of one document carry different doc_ids")
            (doc_id,) = ids
            if doc_id in seen:
                raise CorpusError(f"duplicate doc_id {doc_id}")
            seen.add(doc_id)
            for i, s in enumerate(doc):
                if s.pos != i:
                    raise CorpusError(f"sentence pos {s.pos} at index {i} in doc {doc_id}")
                if not 1 <= len(s.tokens) <= self.max_seq_len:
                    raise CorpusError(f"sentence length {len(s.tokens)} out of range")
                if min(s.tokens) < 0 or max(s.tokens) >= self.vocab_size:
                    raise CorpusError("token id out of vocabulary range")

    def sentences(self) -> list[Sentence]:
        """All sentences in document order (the global sentence index)."""
        return [s for doc in self.documents for s in doc]

    @property
    def doc_ids(self) -> list[int]:
        return [doc[0].doc_id for doc in self.documents]

    def __len__(self):
        return sum(len(d) for d in self.documents)


@dataclass(frozen=True)
class GenConfig:
    n_topics: int = 8
    n_docs: int = 200
    doc_len: tuple[int, int] = (8, 20)
    sent_len: tuple[int, int] = (10, 20)
    vocab_size: int = 512
    topic_concentration: float = 0.05
    carryover: float = 0.3


def generate_synthetic(cfg: GenConfig, seed: int) -> Corpus:
    if cfg.n_topics < 2:
        raise CorpusError("need at least 2 topics")
    if cfg.n_docs < 1:
        raise CorpusError("empty corpus")
    for lo, hi in (cfg.doc_len, cfg.sent_len):
        if lo < 1 or lo > hi:
            raise CorpusError(f"invalid range ({lo}, {hi})")
    if not 0.0 <= cfg.carryover < 1.0:
        raise CorpusError("carryover must lie in [0, 1)")

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    V = cfg.vocab_size
    topics = rng.dirichlet(np.full(V, cfg.topic_concentration), size=cfg.n_topics)
    docs = []
    for d in range(cfg.n_docs):
        topic = rng.integers(cfg.n_topics)
        n_sent = rng.integers(cfg.doc_len[0], cfg.doc_len[1] + 1)
        doc = []
        prev = None
        for p in range(n_sent):
            n_tok = int(rng.integers(cfg.sent_len[0], cfg.sent_len[1] + 1))
            toks = rng.choice(V, size=n_tok, p=topics[topic])
            if prev is not None:
                carry = rng.random(n_tok) < cfg.carryover
                toks[carry] = rng.choice(prev, size=int(carry.sum()))
            doc.append(Sentence(tuple(int(t) for t in toks), d, p))
            prev = toks
        docs.append(doc)
    return Corpus(docs, V, max(cfg.sent_len[1], 1))


def hash_token(word: str, vocab_size: int) -> int:
    return zlib.crc32(word.encode("utf-8")) % vocab_size


@lru_cache(maxsize=None)
def _canonical_words(vocab_size: int) -> tuple[str, ...]:
    words: list[str | None] = [None] * vocab_size
    missing = vocab_size
    k = 0
    while missing:
        w = f"tok{k}"
        t = hash_token(w, vocab_size)
        if words[t] is None:
            words[t] = w
            missing -= 1
        k += 1
    return tuple(words)  # type: ignore[arg-type]


def token_word(token: int, vocab_size: int) -> str:
    """A word that hashes back to ``token``; used when writing corpora to text."""
    return _canonical_words(vocab_size)[token]


def load_corpus(path, vocab_size: int = 512, max_seq_len: int = 512) -> Corpus:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc
    docs: list[list[Sentence]] = []
    current: list[Sentence] = []
    for line in text.splitlines():
        words = line.split()
        if not words:
            if current:
                docs.append(current)
                current = []
            continue
        toks = tuple(hash_token(w, vocab_size) for w in words[:max_seq_len])
        current.append(Sentence(toks, len(docs), len(current)))
    if current:
        docs.append(current)
    if not docs:
        raise CorpusError(f"empty corpus file {path}")
    return Corpus(docs, vocab_size, max_seq_len)


def save_corpus(corpus: Corpus, path) -> None:
    blocks = []
    for doc in corpus.documents:
        blocks.append(
            "\n".join(" ".join(token_word(t, corpus.vocab_size) for t in s.tokens) for s in doc)
        )
    Path(path).write_text("\n\n".join(blocks) + "\n", encoding="utf-8")


def split_validation(corpus: Corpus, fraction: float, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Document-level split; original doc_ids are kept so disjointness is checkable."""
    if not 0.0 < fraction < 1.0:
        raise CorpusError("fraction must lie in (0, 1)")
    n = len(corpus.documents)
    if n < 2:
        raise CorpusError("need at least 2 documents to split")
    n_val = min(max(int(round(fraction * n)), 1), n - 1)
    order = np.random.default_rng(np.random.SeedSequence([seed, 0x5B])).permutation(n)
    val_idx = sorted(order[:n_val].tolist())
    train_idx = sorted(order[n_val:].tolist())
    pick = lambda idx: Corpus([corpus.documents[i] for i in idx], corpus.vocab_size, corpus.max_seq_len)
    return pick(train_idx), pick(val_idx)
