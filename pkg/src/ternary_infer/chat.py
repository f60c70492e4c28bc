"""Multi-turn chat session on top of the KV-cached generator."""

from __future__ import annotations

from itertools import islice

from .errors import ConfigurationError
from .model import GenerationParams, TernaryModel, iter_generate
from .tokenizer import BOS, EOS, ByteTokenizer

USER_PREFIX = b"User: "
ASSISTANT_PREFIX = b"\nAssistant: "
TURN_SUFFIX = b"\n"


class ChatSession:
    """Keeps the running token history and a KV cache that mirrors it.

    ``cache.filled`` always equals the number of history tokens already run
    through the model; only the remainder is forwarded on the next turn. When
    the history would overflow the context window the oldest tokens after BOS
    are evicted and the cache is rebuilt from scratch.
    """

    def __init__(self, model: TernaryModel, params: GenerationParams | None = None):
        self.model = model
        self.params = params or GenerationParams(max_new_tokens=64, stop_token=EOS)
        if self.params.max_new_tokens + 8 > model.config.max_seq_len:
            raise ConfigurationError("max_new_tokens leaves no room for conversation history")
        self.tokenizer = ByteTokenizer(model.config.vocab_size)
        self.cache = model.new_cache()
        self.reset()

    def reset(self) -> None:
        self.history = [BOS]
        self.cache.reset()
        self.turns = 0
        self.evicted = 0

    def _fit(self) -> None:
        limit = self.model.config.max_seq_len - self.params.max_new_tokens
        if len(self.history) <= limit:
            return
        drop = len(self.history) - limit
        self.history = [BOS] + self.history[1 + drop:]
        self.evicted += drop
        self.cache.reset()

    def send(self, text: bytes | str) -> bytes:
        """Append a user turn, generate the assistant reply and return its bytes."""
        if isinstance(text, str):
            text = text.encode("utf-8")
        prefix = TURN_SUFFIX if self.turns else b""
        self.history += self.tokenizer.encode(prefix + USER_PREFIX + text + ASSISTANT_PREFIX, add_bos=False)
        self._fit()
        pending = self.history[self.cache.filled:]
        params = GenerationParams(
            max_new_tokens=self.params.max_new_tokens,
            strategy=self.params.strategy,
            temperature=self.params.temperature,
            seed=self.params.seed + self.turns,
            stop_token=self.params.stop_token,
        )
        reply = []
        for tok in islice(iter_generate(self.model, pending, params, self.cache), params.max_new_tokens):
            reply.append(tok)
            if tok == params.stop_token:
                break
        self.history += reply
        self.turns += 1
        return self.tokenizer.decode(reply)
