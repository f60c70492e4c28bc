"""Byte-level tokenizer: 256 byte tokens plus BOS and EOS."""

from __future__ import annotations

from .errors import DecodeError

BOS = 256
EOS = 257
VOCAB_SIZE = 258


class ByteTokenizer:
    bos_id = BOS
    eos_id = EOS

    def __init__(self, vocab_size: int = VOCAB_SIZE):
        if vocab_size < VOCAB_SIZE:
            raise ValueError(f"vocab_size must be at least {VOCAB_SIZE}")
        self.vocab_size = vocab_size

    def encode(self, text: bytes | str, add_bos: bool = True) -> list[int]:
        if isinstance(text, str):
            text = text.encode("utf-8")
        ids = list(text)
        return [BOS, *ids] if add_bos else ids

    def decode(self, tokens) -> bytes:
        """Bytes for the byte tokens; specials and reserved ids are dropped."""
        out = bytearray()
        for t in tokens:
            t = int(t)
            if t < 0 or t >= self.vocab_size:
                raise DecodeError(f"token id {t} outside vocabulary of size {self.vocab_size}")
            if t < 256:
                out.append(t)
        return bytes(out)


_default = ByteTokenizer()


def tokenize(text: bytes | str) -> list[int]:
    return _default.encode(text)


def detokenize(tokens) -> bytes:
    return _default.decode(tokens)
