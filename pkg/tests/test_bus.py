from __future__ import annotations

import threading
import time

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cogos.bus import RobotBus


def make_bus(places: dict[str, str], **kw) -> RobotBus:
    bus = RobotBus(places.get, **kw)
    for party in places:
        bus.register(party, "user" if party.startswith("user") else "robot")
    return bus


def test_speaker_never_hears_itself():
    bus = make_bus({"a": "kitchen", "b": "kitchen"})
    bus.say("a", "hi", "kitchen")
    assert bus.listen("a", 0.0) is None
    assert bus.listen("b", 0.0).text == "hi"


def test_only_co_located_parties_hear():
    bus = make_bus({"a": "kitchen", "b": "hall", "c": "kitchen"})
    bus.say("a", "psst", "kitchen")
    assert bus.listen("b", 0.0) is None
    assert bus.listen("c", 0.0).speaker == "a"


def test_global_audibility():
    bus = make_bus({"a": "kitchen", "b": "hall"}, global_audibility=True)
    bus.say("a", "loud", "kitchen")
    assert bus.listen("b", 0.0).text == "loud"


def test_empty_utterance_rejected():
    with pytest.raises(ValueError):
        make_bus({"a": "x"}).say("a", "", "x")


def test_unregistered_listener():
    with pytest.raises(KeyError):
        make_bus({}).listen("ghost", 0.0)


def test_timeout_returns_none():
    bus = make_bus({"a": "x"})
    t0 = time.monotonic()
    assert bus.listen("a", 0.05) is None
    assert time.monotonic() - t0 >= 0.04


def test_listen_wakes_on_say():
    bus = make_bus({"a": "x", "b": "x"})
    timer = threading.Timer(0.05, bus.say, args=("a", "later", "x"))
    timer.start()
    got = bus.listen("b", 5.0)
    timer.join()
    assert got is not None and got.text == "later"


@given(st.lists(st.tuples(st.sampled_from("abc"), st.text(min_size=1, max_size=8)), max_size=40))
def test_fifo_and_increasing_seq(messages):
    bus = make_bus({"a": "x", "b": "x", "c": "x"})
    for speaker, text in messages:
        bus.say(speaker, text, "x")
    seqs = [u.seq for u in bus.log]
    assert seqs == sorted(set(seqs))
    for party in "abc":
        heard = []
        while (u := bus.listen(party, 0.0)) is not None:
            heard.append(u)
        assert [(u.speaker, u.text) for u in heard] == [(s, t) for s, t in messages if s != party]
        assert [u.seq for u in heard] == sorted(u.seq for u in heard)


def test_observer_sees_recipients():
    bus = make_bus({"a": "x", "b": "x", "c": "y"})
    seen = []
    bus.subscribe(lambda utt, rcpt: seen.append((utt.text, rcpt)))
    bus.say("a", "yo", "x")
    assert seen == [("yo", ["b"])]


class TestConsole:
    def test_console_answer_is_delivered_as_user(self):
        asked = []

        def answer(prompt, listener):
            asked.append((prompt, listener))
            return " the juice please "

        bus = make_bus({"r": "hall", "user_1": "hall"}, console_input=answer, console_grace=0.0)
        got = bus.listen("r", 1.0)
        assert asked == [("you> ", "r")]
        assert (got.speaker, got.text) == ("user_1", "the juice please")

    def test_blank_answer_is_silence(self):
        bus = make_bus({"r": "hall", "user_1": "hall"}, console_input=lambda p, l: "  ", console_grace=0.0)
        assert bus.listen("r", 1.0) is None

    def test_not_asked_for_remote_listener(self):
        calls = []
        bus = make_bus({"r": "kitchen", "user_1": "hall"}, console_input=lambda p, l: calls.append(l) or "x",
                       console_for=lambda party: False)
        assert bus.listen("r", 0.01) is None
        assert calls == []

    def test_pending_mail_beats_console(self):
        bus = make_bus({"r": "hall", "s": "hall"}, console_input=lambda p, l: pytest.fail("asked"))
        bus.say("s", "robot talk", "hall")
        assert bus.listen("r", 1.0).text == "robot talk"
