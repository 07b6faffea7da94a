"""Broker semantics: append order, offsets, batching, flow-gated delivery."""

import math
import random
import threading
import time

import pytest

from cvedge.broker import (
    BatchConfig,
    Broker,
    BrokerError,
    SequencingError,
    TopicPermissionError,
    UnknownConsumerError,
)
from cvedge.model import Envelope, ModelError
from cvedge.security import AuthError, FlowPolicy, Role, SecurityService


class FixedClock:
    def __init__(self, t_ms=0):
        self.t_ms = t_ms

    def __call__(self):
        return self.t_ms


@pytest.fixture
def clock():
    return FixedClock()


@pytest.fixture
def security(clock):
    return SecurityService(clock, policies=[FlowPolicy("*", "*")])


@pytest.fixture
def broker(security, clock):
    return Broker(security, clock)


def enroll(security, subject):
    return security.enroll(subject, Role.APPLICATION)


def make_env(topic, producer, seq, t=0, payload=b"x"):
    return Envelope(
        topic=topic,
        producer=producer,
        seq=seq,
        t_generated_ms=t,
        t_published_ms=-1,
        payload=payload,
    )


class TestTopics:
    def test_create_idempotent(self, broker):
        a = broker.create_topic("bsm.raw.f1")
        b = broker.create_topic("bsm.raw.f1")
        assert a is b
        assert len(a) == 0

    def test_pattern_name_rejected(self, broker):
        with pytest.raises(ModelError):
            broker.create_topic("bsm.raw.*")

    def test_publish_appends(self, broker, security):
        e = enroll(security, "p1")
        broker.create_topic("t.a")
        broker.publish(make_env("t.a", "p1", 0), e.token.value)
        assert len(broker.topic("t.a")) == 1


class TestPublish:
    def test_offsets_in_order(self, broker, security):
        e = enroll(security, "p1")
        offsets = [broker.publish(make_env("t.a", "p1", i), e.token.value) for i in range(3)]
        assert offsets == [0, 1, 2]

    def test_invalid_token(self, broker, security):
        broker.create_topic("t.a")
        with pytest.raises(AuthError):
            broker.publish(make_env("t.a", "p1", 0), "bogus")
        assert len(broker.topic("t.a")) == 0

    def test_expired_token(self, broker, security, clock):
        e = enroll(security, "p1")
        clock.t_ms += 2 * 3600 * 1000
        with pytest.raises(AuthError):
            broker.publish(make_env("t.a", "p1", 0, t=clock.t_ms), e.token.value)

    def test_producer_must_match_token(self, broker, security):
        e = enroll(security, "p1")
        with pytest.raises(AuthError):
            broker.publish(make_env("t.a", "other", 0), e.token.value)

    def test_non_monotone_seq(self, broker, security):
        e = enroll(security, "p1")
        broker.publish(make_env("t.a", "p1", 5), e.token.value)
        with pytest.raises(SequencingError):
            broker.publish(make_env("t.a", "p1", 5), e.token.value)

    def test_manifest_enforced(self, clock):
        from cvedge.security import AccessManifest

        security = SecurityService(
            clock,
            policies=[FlowPolicy("*", "*")],
            manifests={"p1": AccessManifest(subject="p1", writable_topics=("t.mine",))},
        )
        broker = Broker(security, clock)
        e = enroll(security, "p1")
        broker.publish(make_env("t.mine", "p1", 0), e.token.value)
        with pytest.raises(TopicPermissionError):
            broker.publish(make_env("t.other", "p1", 1), e.token.value)

    def test_source_label_stamped(self, broker, security):
        e = enroll(security, "p1")
        broker.publish(make_env("t.a", "p1", 0), e.token.value)
        stored = broker.topic("t.a").entry_at(0)
        assert stored.label.source == "t.a"
        assert stored.t_published_ms >= stored.t_generated_ms


class TestPoll:
    def test_under_full_batch(self, broker, security):
        p = enroll(security, "p1")
        c = enroll(security, "c1")
        for i in range(3):
            broker.publish(make_env("t.a", "p1", i), p.token.value)
        broker.subscribe("c1", ["t.a"], c.token.value)
        batch = broker.poll("c1", BatchConfig(max_batch=10))
        assert [b.seq for b in batch] == [0, 1, 2]

    def test_empty_topic(self, broker, security):
        c = enroll(security, "c1")
        broker.create_topic("t.a")
        broker.subscribe("c1", ["t.a"], c.token.value)
        assert broker.poll("c1", BatchConfig(max_batch=10)) == []

    def test_unknown_consumer(self, broker):
        with pytest.raises(UnknownConsumerError):
            broker.poll("ghost", BatchConfig())

    def test_exactly_once(self, broker, security):
        p = enroll(security, "p1")
        c = enroll(security, "c1")
        broker.subscribe("c1", ["t.a"], c.token.value)
        broker.publish(make_env("t.a", "p1", 0), p.token.value)
        assert len(broker.poll("c1", BatchConfig())) == 1
        assert broker.poll("c1", BatchConfig()) == []

    def test_batch_count_1000_over_64(self, broker, security):
        p = enroll(security, "p1")
        c = enroll(security, "c1")
        broker.subscribe("c1", ["t.a"], c.token.value)
        for i in range(1000):
            broker.publish(make_env("t.a", "p1", i), p.token.value)
        batches = []
        while True:
            batch = broker.poll("c1", BatchConfig(max_batch=64))
            if not batch:
                break
            batches.append(batch)
        assert len(batches) == math.ceil(1000 / 64) == 16
        flat = [e.seq for batch in batches for e in batch]
        assert flat == list(range(1000))  # concatenation equals the log

    def test_interleaved_producers_order_preserved(self, broker, security):
        ps = [enroll(security, f"p{i}") for i in range(2)]
        c = enroll(security, "c1")
        broker.subscribe("c1", ["t.a"], c.token.value)
        rng = random.Random(7)
        seqs = {0: 0, 1: 0}
        published = []
        for _ in range(100):
            i = rng.randrange(2)
            env = make_env("t.a", f"p{i}", seqs[i])
            seqs[i] += 1
            broker.publish(env, ps[i].token.value)
            published.append((env.producer, env.seq))
        delivered = []
        while True:
            batch = broker.poll("c1", BatchConfig(max_batch=17))
            if not batch:
                break
            delivered.extend((e.producer, e.seq) for e in batch)
        assert delivered == published  # total order = append order
        # brute-force subsequence check per producer
        for producer in ("p0", "p1"):
            per = [s for p, s in delivered if p == producer]
            assert per == sorted(per)

    def test_pattern_subscription(self, broker, security):
        p = enroll(security, "p1")
        c = enroll(security, "c1")
        broker.subscribe("c1", ["bsm.raw.*"], c.token.value)
        broker.publish(make_env("bsm.raw.f1", "p1", 0), p.token.value)
        broker.publish(make_env("bsm.raw.f2", "p1", 0), p.token.value)
        broker.publish(make_env("traffic.agg.f1", "p1", 0), p.token.value)
        batch = broker.poll("c1", BatchConfig(max_batch=10))
        assert sorted(e.topic for e in batch) == ["bsm.raw.f1", "bsm.raw.f2"]


class TestFlowGate:
    def test_denied_envelopes_are_quarantined_not_delivered(self, clock):
        security = SecurityService(
            clock, policies=[FlowPolicy("t.allowed", "c1")]
        )
        broker = Broker(security, clock)
        p = enroll(security, "p1")
        c = enroll(security, "c1")
        broker.subscribe("c1", ["t.allowed", "t.blocked"], c.token.value)
        broker.publish(make_env("t.allowed", "p1", 0), p.token.value)
        broker.publish(make_env("t.blocked", "p1", 0), p.token.value)
        batch = broker.poll("c1", BatchConfig(max_batch=10))
        assert [e.topic for e in batch] == ["t.allowed"]
        assert security.quarantine.count() == 1
        assert broker.poll("c1", BatchConfig(max_batch=10)) == []  # never redelivered


class TestRetention:
    def test_oldest_dropped_and_counted(self, clock):
        security = SecurityService(clock, policies=[FlowPolicy("*", "*")])
        broker = Broker(security, clock, retention=5)
        p = enroll(security, "p1")
        c = enroll(security, "c1")
        broker.subscribe("c1", ["t.a"], c.token.value)
        for i in range(8):
            broker.publish(make_env("t.a", "p1", i), p.token.value)
        assert broker.dropped_by_retention() == 3
        batch = broker.poll("c1", BatchConfig(max_batch=10))
        assert [e.seq for e in batch] == [3, 4, 5, 6, 7]


class TestLinger:
    def test_linger_fills_batch_in_wall_mode(self):
        now = lambda: int(time.time() * 1000)
        security = SecurityService(now, policies=[FlowPolicy("*", "*")])
        broker = Broker(security, now, wall_mode=True)
        p = enroll(security, "p1")
        c = enroll(security, "c1")
        broker.subscribe("c1", ["t.a"], c.token.value)
        broker.publish(make_env("t.a", "p1", 0, t=now()), p.token.value)

        def late_publish():
            time.sleep(0.05)
            broker.publish(make_env("t.a", "p1", 1, t=now()), p.token.value)

        thread = threading.Thread(target=late_publish)
        thread.start()
        batch = broker.poll("c1", BatchConfig(max_batch=2, linger_ms=500))
        thread.join()
        assert len(batch) == 2

    def test_virtual_mode_never_blocks(self, broker, security):
        c = enroll(security, "c1")
        broker.create_topic("t.a")
        broker.subscribe("c1", ["t.a"], c.token.value)
        start = time.monotonic()
        assert broker.poll("c1", BatchConfig(max_batch=4, linger_ms=5000)) == []
        assert time.monotonic() - start < 0.5

    def test_bad_batch_config(self):
        with pytest.raises(BrokerError):
            BatchConfig(max_batch=0)
