"""Verbal channel between robots and users (SAY / LISTEN).

Utterances are audible only at the speaker's location unless the bus is
created with ``global_audibility=True``. Every co-located party except the
speaker gets its own copy, delivered FIFO.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from collections.abc import Callable
from dataclasses import dataclass, field


@dataclass(frozen=True)
class Utterance:
    speaker: str
    text: str
    audible_at: str
    seq: int


@dataclass
class Mailbox:
    owner: str
    kind: str = "robot"
    pending: deque[Utterance] = field(default_factory=deque)


class RobotBus:
    """Thread-safe rendezvous for robot loops.

    ``locate`` maps a party id to its current location; the simulator binds it
    to world state. In console mode, ``console_input(prompt, listener)`` is
    asked for a user utterance when a listener's mailbox stays empty for
    ``console_grace`` seconds.
    """

    def __init__(
        self,
        locate: Callable[[str], str | None] | None = None,
        *,
        global_audibility: bool = False,
        console_input: Callable[[str, str], str | None] | None = None,
        console_user: str = "user_1",
        console_grace: float = 1.0,
        console_for: Callable[[str], bool] | None = None,
    ) -> None:
        self._locate = locate or (lambda party: None)
        self.global_audibility = global_audibility
        self.console_input = console_input
        self.console_user = console_user
        self.console_grace = console_grace
        self.console_for = console_for or (lambda party: True)
        self._mailboxes: dict[str, Mailbox] = {}
        self._cond = threading.Condition()
        self._seq = 0
        self.log: list[Utterance] = []
        self._observers: list[Callable[[Utterance, list[str]], None]] = []

    def register(self, party: str, kind: str = "robot") -> Mailbox:
        with self._cond:
            box = self._mailboxes.get(party)
            if box is None:
                box = self._mailboxes[party] = Mailbox(party, kind)
            return box

    def registered(self, party: str) -> bool:
        return party in self._mailboxes

    def mailbox(self, party: str) -> Mailbox:
        return self._mailboxes[party]

    def subscribe(self, observer: Callable[[Utterance, list[str]], None]) -> None:
        """Call ``observer(utterance, recipients)`` after every delivery."""
        self._observers.append(observer)

    def say(self, speaker: str, text: str, location: str) -> int:
        if not text:
            raise ValueError("cannot say an empty utterance")
        with self._cond:
            self._seq += 1
            utt = Utterance(speaker, text, location, self._seq)
            recipients = []
            for party, box in self._mailboxes.items():
                if party == speaker:
                    continue
                if self.global_audibility or self._locate(party) == location:
                    box.pending.append(utt)
                    recipients.append(party)
            self.log.append(utt)
            for observer in self._observers:
                observer(utt, recipients)
            self._cond.notify_all()
            return utt.seq

    def listen(self, party: str, timeout: float) -> Utterance | None:
        """Oldest pending utterance for ``party``, or ``None`` after ``timeout``."""
        if party not in self._mailboxes:
            raise KeyError(f"{party} is not registered on the bus")
        box = self._mailboxes[party]
        console = self.console_input is not None and self.console_for(party)
        wait = min(timeout, self.console_grace) if console else timeout
        deadline = time.monotonic() + max(0.0, wait)
        with self._cond:
            while not box.pending:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                self._cond.wait(remaining)
            if box.pending:
                return box.pending.popleft()
        if not console:
            return None
        location = self._locate(party) or ""
        text = self.console_input("you> ", party)
        if not text or not text.strip():
            return None
        self.say(self.console_user, text.strip(), location)
        with self._cond:
            return box.pending.popleft() if box.pending else None
