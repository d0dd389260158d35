"""Byte-level BPE tokenizer compatible with the GPT-2 vocabulary files."""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources
from pathlib import Path

import regex

# GPT-2 pre-tokenization pattern.
_PRETOKENIZE = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)


@lru_cache(maxsize=None)
def bytes_to_unicode() -> dict[int, str]:
    """Map every byte to a printable unicode character (GPT-2 convention)."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("\xa1"), ord("\xac") + 1))
        + list(range(ord("\xae"), ord("\xff") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, (chr(c) for c in cs)))


class BPETokenizer:
    """Encoder/decoder over a fixed vocabulary and merge-rank table."""

    def __init__(self, vocab: dict[str, int], merges: list[tuple[str, str]]):
        self.vocab = dict(vocab)
        self.inverse = {i: tok for tok, i in self.vocab.items()}
        self.ranks = {pair: rank for rank, pair in enumerate(merges)}
        self.byte_encoder = bytes_to_unicode()
        self.byte_decoder = {c: b for b, c in self.byte_encoder.items()}
        self._cache: dict[str, tuple[str, ...]] = {}

    @classmethod
    def from_files(cls, vocab_path: str | Path, merges_path: str | Path) -> BPETokenizer:
        with open(vocab_path, encoding="utf-8") as fh:
            vocab = json.load(fh)
        with open(merges_path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        merges = []
        for line in lines:
            if not line or line.startswith("#version"):
                continue
            left, right = line.split()
            merges.append((left, right))
        return cls(vocab, merges)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _bpe(self, word: str) -> tuple[str, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        parts = list(word)
        while len(parts) > 1:
            best_rank, best_i = None, -1
            for i in range(len(parts) - 1):
                rank = self.ranks.get((parts[i], parts[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank, best_i = rank, i
            if best_rank is None:
                break
            pair = (parts[best_i], parts[best_i + 1])
            merged: list[str] = []
            i = 0
            # Merge every occurrence of the winning pair in one sweep.
            while i < len(parts):
                if i < len(parts) - 1 and (parts[i], parts[i + 1]) == pair:
                    merged.append(parts[i] + parts[i + 1])
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
        result = tuple(parts)
        self._cache[word] = result
        return result

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for piece in _PRETOKENIZE.findall(text):
            mapped = "".join(self.byte_encoder[b] for b in piece.encode("utf-8"))
            ids.extend(self.vocab[tok] for tok in self._bpe(mapped))
        return ids

    def decode(self, ids) -> str:
        text = "".join(self.inverse[int(i)] for i in ids)
        return bytearray(self.byte_decoder[c] for c in text).decode("utf-8", errors="replace")

    def token_id(self, text: str) -> int:
        """Return the id of ``text`` if it encodes to exactly one token."""
        ids = self.encode(text)
        if len(ids) != 1:
            raise ValueError(f"{text!r} encodes to {len(ids)} tokens, expected 1")
        return ids[0]

    def is_single_token(self, text: str) -> bool:
        return len(self.encode(text)) == 1


def default_tokenizer_paths() -> tuple[Path, Path]:
    data = resources.files("syllogistic") / "data"
    return Path(str(data / "gpt2_vocab.json")), Path(str(data / "gpt2_merges.txt"))


@lru_cache(maxsize=1)
def gpt2_tokenizer() -> BPETokenizer:
    """The bundled GPT-2 tokenizer, loaded once per process."""
    return BPETokenizer.from_files(*default_tokenizer_paths())
