"""In-process publish-subscribe core: append-only topic logs with offset-based
batch consumption.

Single broker, one partition per topic, no replication. Delivery is
exactly-once within the process: each subscription owns a per-topic offset
that only moves forward. Every envelope handed out by ``poll`` has passed the
flow-policy check; denied envelopes are quarantined and skipped, never
delivered.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Tuple

from .model import Envelope, pattern_matches, validate_pattern, validate_topic_name
from .security import AuthError, SecurityService


class BrokerError(Exception):
    """Base class for broker failures."""


class TopicPermissionError(BrokerError):
    """Manifest does not authorize the operation."""


class SequencingError(BrokerError):
    """Producer sequence number did not increase."""


class UnknownConsumerError(BrokerError):
    """Poll for a consumer that never subscribed."""


@dataclass(frozen=True)
class BatchConfig:
    max_batch: int = 256
    linger_ms: int = 0

    def __post_init__(self) -> None:
        if self.max_batch < 1:
            raise BrokerError(f"max_batch must be >= 1, got {self.max_batch}")
        if self.linger_ms < 0:
            raise BrokerError(f"linger_ms must be >= 0, got {self.linger_ms}")


class TopicLog:
    """Append-only log for one topic; offsets are dense and immutable."""

    def __init__(self, name: str, retention: int = 0):
        self.name = name
        self.retention = retention
        self.entries: Deque[Envelope] = deque()
        self.base_offset = 0
        self.dropped = 0

    def append(self, env: Envelope) -> int:
        offset = self.base_offset + len(self.entries)
        self.entries.append(env)
        if self.retention > 0 and len(self.entries) > self.retention:
            self.entries.popleft()
            self.base_offset += 1
            self.dropped += 1
        return offset

    @property
    def next_offset(self) -> int:
        return self.base_offset + len(self.entries)

    def entry_at(self, offset: int) -> Envelope:
        return self.entries[offset - self.base_offset]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class Subscription:
    consumer_id: str
    topic_patterns: Tuple[str, ...]
    offsets: Dict[str, int] = field(default_factory=dict)
    missed_by_retention: int = 0


class Broker:
    """Topic-partitioned in-memory log with authenticated publish and poll."""

    def __init__(
        self,
        security: SecurityService,
        now_ms: Callable[[], int],
        retention: int = 0,
        wall_mode: bool = False,
    ):
        self._security = security
        self._now_ms = now_ms
        self._retention = retention
        self._wall_mode = wall_mode
        self._topics: Dict[str, TopicLog] = {}
        self._subs: Dict[str, Subscription] = {}
        self._last_seq: Dict[Tuple[str, str], int] = {}
        self._lock = threading.RLock()
        self._data_available = threading.Condition(self._lock)

    # -- topics --------------------------------------------------------------

    def create_topic(self, name: str) -> TopicLog:
        """Idempotently create a topic; concrete names only."""
        validate_topic_name(name)
        with self._lock:
            log = self._topics.get(name)
            if log is None:
                log = TopicLog(name, self._retention)
                self._topics[name] = log
            return log

    def topic(self, name: str) -> Optional[TopicLog]:
        return self._topics.get(name)

    def topic_names(self) -> List[str]:
        with self._lock:
            return sorted(self._topics)

    # -- produce ---------------------------------------------------------------

    def publish(self, env: Envelope, token: str) -> int:
        """Append an envelope to its topic log and return its offset.

        The trusted-API boundary: validates the session token, checks the
        producer's manifest, enforces per-(producer, topic) sequence order,
        and stamps the publish time and the flow source label.
        """
        session = self._security.tokens.validate(token)
        if session.subject != env.producer:
            raise AuthError(
                f"token subject {session.subject!r} may not publish as {env.producer!r}"
            )
        if self._security.manifests:
            manifest = self._security.manifest_for(env.producer)
            if manifest is None or not manifest.may_write(env.topic):
                raise TopicPermissionError(
                    f"{env.producer!r} is not authorized to write {env.topic!r}"
                )
        with self._lock:
            log = self._topics.get(env.topic)
            if log is None:
                log = self.create_topic(env.topic)
            key = (env.producer, env.topic)
            last = self._last_seq.get(key)
            if last is not None and env.seq <= last:
                raise SequencingError(
                    f"seq {env.seq} for {env.producer} on {env.topic} not above {last}"
                )
            stamped = env.with_publication(self._now_ms(), source=env.topic)
            offset = log.append(stamped)
            self._last_seq[key] = env.seq
            if self._wall_mode:
                self._data_available.notify_all()
            return offset

    # -- consume ---------------------------------------------------------------

    def subscribe(self, consumer_id: str, patterns: List[str], token: str) -> Subscription:
        """Register a consumer for one or more topic patterns."""
        session = self._security.tokens.validate(token)
        if session.subject != consumer_id:
            raise AuthError(
                f"token subject {session.subject!r} may not subscribe as {consumer_id!r}"
            )
        for p in patterns:
            validate_pattern(p)
        if self._security.manifests:
            manifest = self._security.manifest_for(consumer_id)
            for p in patterns:
                if manifest is None or not manifest.may_read(p):
                    raise TopicPermissionError(
                        f"{consumer_id!r} is not authorized to read {p!r}"
                    )
        with self._lock:
            sub = Subscription(consumer_id, tuple(patterns))
            self._subs[consumer_id] = sub
            return sub

    def poll(self, consumer_id: str, cfg: Optional[BatchConfig] = None) -> List[Envelope]:
        """Return up to max_batch flow-approved envelopes and advance offsets.

        Envelopes denied by the flow check are quarantined and skipped. In
        wall-clock mode a positive linger_ms blocks until the batch fills or
        the linger expires; in virtual-clock mode poll never blocks.
        """
        cfg = cfg or BatchConfig()
        with self._lock:
            sub = self._subs.get(consumer_id)
            if sub is None:
                raise UnknownConsumerError(f"consumer {consumer_id!r} is not subscribed")
            batch = self._collect(sub, cfg.max_batch)
            if self._wall_mode and cfg.linger_ms > 0 and len(batch) < cfg.max_batch:
                deadline = self._now_ms() + cfg.linger_ms
                while len(batch) < cfg.max_batch:
                    remaining_s = (deadline - self._now_ms()) / 1000.0
                    if remaining_s <= 0 or not self._data_available.wait(remaining_s):
                        break
                    batch.extend(self._collect(sub, cfg.max_batch - len(batch)))
            return batch

    def _collect(self, sub: Subscription, budget: int) -> List[Envelope]:
        batch: List[Envelope] = []
        for name in sorted(self._topics):
            if budget <= 0:
                break
            if not any(pattern_matches(p, name) for p in sub.topic_patterns):
                continue
            log = self._topics[name]
            offset = sub.offsets.get(name, 0)
            if offset < log.base_offset:
                sub.missed_by_retention += log.base_offset - offset
                offset = log.base_offset
            while offset < log.next_offset and budget > 0:
                env = log.entry_at(offset)
                decision = self._security.check_flow(env, sub.consumer_id)
                offset += 1
                if decision.allowed:
                    batch.append(env)
                    budget -= 1
                else:
                    self._security.record_quarantine(
                        env, sub.consumer_id, decision.reason, self._now_ms()
                    )
            sub.offsets[name] = offset
        return batch

    def dropped_by_retention(self) -> int:
        with self._lock:
            return sum(log.dropped for log in self._topics.values())
