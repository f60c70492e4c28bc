import pytest

from ternary_infer.chat import ChatSession
from ternary_infer.errors import ConfigurationError
from ternary_infer.model import GenerationParams
from ternary_infer.tokenizer import BOS, EOS


def params(**kw):
    return GenerationParams(**{"max_new_tokens": 12, "stop_token": EOS, **kw})


def test_reply_is_bytes(tiny_model):
    s = ChatSession(tiny_model, params())
    reply = s.send("hello")
    assert isinstance(reply, bytes) and 0 < len(reply) <= 12


def test_cache_grows_between_turns(tiny_model):
    s = ChatSession(tiny_model, params(max_new_tokens=6))
    s.send("a")
    first = s.cache.filled
    s.send("b")
    assert s.cache.filled > first
    assert s.history[0] == BOS


def test_reset_matches_fresh_session(tiny_model):
    p = params(strategy="temperature_sampling", temperature=0.9, seed=4)
    used = ChatSession(tiny_model, p)
    used.send("first turn")
    used.reset()
    assert used.cache.filled == 0 and used.history == [BOS]
    assert used.send("again") == ChatSession(tiny_model, p).send("again")


def test_history_equals_cache_plus_pending(tiny_model):
    s = ChatSession(tiny_model, params(max_new_tokens=8))
    for text in ("one", "two"):
        s.send(text)
        # the last generated token has not been run through the model yet
        assert s.cache.filled in (len(s.history) - 1, len(s.history))


def test_oldest_first_eviction(tiny_model):
    s = ChatSession(tiny_model, params(max_new_tokens=8))
    for i in range(12):
        s.send(f"turn number {i}")
        assert len(s.history) <= tiny_model.config.max_seq_len
        assert s.history[0] == BOS
    assert s.evicted > 0
    # the newest user text survives eviction
    assert b"turn number 11" in bytes(t for t in s.history if t < 256)


def test_budget_must_leave_room(tiny_model):
    with pytest.raises(ConfigurationError):
        ChatSession(tiny_model, params(max_new_tokens=tiny_model.config.max_seq_len))
