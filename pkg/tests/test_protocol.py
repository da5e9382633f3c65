import random
import time

import pytest
from hypothesis import given, settings, strategies as st

from dispel.model import ComparisonOp, ConstraintExpr
from dispel.protocol import (
    HandshakeOutcome,
    Kind,
    Message,
    PenaltyKind,
    ProtocolError,
    decode,
    encode,
    handshake_check,
    handshake_msg,
    handshake_round,
    resolve_handshakes,
    value_msg,
)

_ALNUM = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz_0123456789"
names = st.builds(
    lambda head, tail: head + tail, st.sampled_from(_ALNUM[:53]), st.text(alphabet=_ALNUM, max_size=8)
)
num = st.integers(-10**6, 10**6).map(str)
free_text = st.text(
    alphabet=st.characters(blacklist_characters="|;\n\r", blacklist_categories=("Cs",)), max_size=12
)


@st.composite
def messages(draw):
    kind = draw(st.sampled_from(list(Kind)))
    payload = {
        Kind.VALUE: st.tuples(num, st.integers(0, 99).map(str)),
        Kind.PENALTY: st.tuples(st.sampled_from(["TEMP", "INC"])),
        Kind.HANDSHAKE: st.tuples(st.sampled_from([op.name for op in ComparisonOp])),
        Kind.FINAL: st.tuples(num, st.sampled_from(["SOLVED", "INTERIM"])),
        Kind.REG: st.tuples(st.sampled_from(["127.0.0.1", "10.0.0.5", "::1"]), st.integers(0, 65535).map(str)),
        Kind.ADDR: st.tuples(st.sampled_from(["127.0.0.1", "host.local"]), st.integers(0, 65535).map(str)),
        Kind.LOOKUP: st.tuples(names),
        Kind.NOTFOUND: st.one_of(st.just(()), st.tuples(free_text.filter(bool))),
    }[kind]
    return Message(kind, draw(names), draw(st.one_of(names, st.just("*"))), draw(st.integers(0, 10**6)), draw(payload))


@settings(max_examples=2_000, deadline=None)
@given(messages())
def test_encode_decode_identity(msg):
    line = encode(msg)
    assert line.endswith(b"\n") and line.count(b"\n") == 1
    assert decode(line) == msg


def random_message(rng: random.Random) -> Message:
    def name():
        return rng.choice(_ALNUM[:53]) + "".join(rng.choices(_ALNUM, k=rng.randint(0, 8)))

    kind = rng.choice(list(Kind))
    payload = {
        Kind.VALUE: lambda: (str(rng.randint(-10**6, 10**6)), str(rng.randint(0, 99))),
        Kind.PENALTY: lambda: (rng.choice(["TEMP", "INC"]),),
        Kind.HANDSHAKE: lambda: (rng.choice(list(ComparisonOp)).name,),
        Kind.FINAL: lambda: (str(rng.randint(-99, 99)), rng.choice(["SOLVED", "INTERIM"])),
        Kind.REG: lambda: (rng.choice(["127.0.0.1", "::1"]), str(rng.randint(0, 65535))),
        Kind.ADDR: lambda: ("10.0.0.5", str(rng.randint(0, 65535))),
        Kind.LOOKUP: lambda: (name(),),
        Kind.NOTFOUND: lambda: rng.choice([(), ("dup",), ("no such agent",)]),
    }[kind]()
    return Message(kind, name(), rng.choice([name(), "*"]), rng.randint(0, 10**6), payload)


def test_encode_decode_identity_bulk():
    rng = random.Random(20240611)
    for _ in range(20_000):
        msg = random_message(rng)
        assert decode(encode(msg)) == msg


def test_wire_examples():
    assert encode(value_msg("A", "B", 3, 4, 1)) == b"V1|VALUE|A|B|3|4;1\n"
    assert encode(handshake_msg("A", "B", ComparisonOp.GT)) == b"V1|HANDSHAKE|A|B|0|GT\n"
    msg = decode("V1|PENALTY|A|B|7|INC\n")
    assert msg.kind is Kind.PENALTY and msg.penalty is PenaltyKind.INC and msg.round == 7
    assert decode(b"V1|NOTFOUND|A|dup|0|\n").payload == ()


@pytest.mark.parametrize("line, fragment", [
    ("V2|VALUE|A|B|1|4;0", "version"),
    ("V1|VALUE|A|B|1", "fields"),
    ("V1|SHOUT|A|B|1|x", "kind"),
    ("V1|VALUE|A|B|one|4;0", "round"),
    ("V1|VALUE|A|B|1|4", "payload"),
    ("V1|VALUE|A|B|1|four;0", "payload"),
    ("V1|PENALTY|A|B|1|BIG", "payload"),
    ("V1|HANDSHAKE|A|B|0|>", "payload"),
    ("V1|FINAL|A|B|3|4;DONE", "payload"),
    ("V1|LOOKUP|A|*|0|", "payload"),
    ("V1|VALUE||B|1|4;0", "payload"),
])
def test_decode_rejects(line, fragment):
    with pytest.raises(ProtocolError, match=fragment):
        decode(line)


def test_decode_rejects_bad_utf8():
    with pytest.raises(ProtocolError):
        decode(b"V1|VALUE|\xff|B|1|4;0\n")


def test_message_rejects_delimiters():
    with pytest.raises(ProtocolError):
        Message(Kind.LOOKUP, "A|B", "*", 0, ("C",))


def _c(text_op, other="B"):
    return ConstraintExpr("A", ComparisonOp.from_token(text_op), other)


def test_handshake_check_examples():
    ok = _c(">")
    assert handshake_check(ok, ComparisonOp.LT).outcome is HandshakeOutcome.CONSISTENT
    assert not ok.ignored
    bad = _c(">")
    assert handshake_check(bad, ComparisonOp.GT).outcome is HandshakeOutcome.CONFLICT
    assert bad.ignored


@pytest.mark.parametrize("a_op", list(ComparisonOp))
@pytest.mark.parametrize("b_op", list(ComparisonOp))
def test_both_sides_reach_the_same_verdict(a_op, b_op):
    at_a = ConstraintExpr("A", a_op, "B")
    at_b = ConstraintExpr("B", b_op, "A")
    ra = handshake_check(at_a, b_op).outcome
    rb = handshake_check(at_b, a_op).outcome
    assert ra == rb
    assert (ra is HandshakeOutcome.CONSISTENT) == (b_op is {
        ComparisonOp.GT: ComparisonOp.LT, ComparisonOp.LT: ComparisonOp.GT,
        ComparisonOp.GE: ComparisonOp.LE, ComparisonOp.LE: ComparisonOp.GE,
        ComparisonOp.EQ: ComparisonOp.EQ, ComparisonOp.NE: ComparisonOp.NE,
    }[a_op])


def test_missing_handshake_ignores_constraint():
    cs = [_c(">", "B"), _c("!=", "C")]
    results = resolve_handshakes(cs, {"B": ComparisonOp.LT})
    assert [r.outcome for r in results] == [HandshakeOutcome.CONSISTENT, HandshakeOutcome.MISSING]
    assert [c.ignored for c in cs] == [False, True]


class FakeLink:
    """Two in-memory queues standing in for a network between A and B."""

    def __init__(self, incoming):
        self.incoming = list(incoming)
        self.sent = []

    def send(self, msg):
        self.sent.append(msg)
        return True

    def receive_until(self, deadline, done=None):
        batch, self.incoming = self.incoming, []
        if not batch:
            time.sleep(max(0.0, min(0.01, deadline - time.monotonic())))
        return batch


def test_handshake_round_collects_and_returns_leftovers():
    link = FakeLink([
        handshake_msg("B", "A", ComparisonOp.LT),
        value_msg("B", "A", 0, 4, 0),
        handshake_msg("C", "A", ComparisonOp.EQ),
    ])
    cs = [_c(">", "B"), _c("!=", "C")]
    results, leftovers = handshake_round("A", cs, link.send, link.receive_until, time.monotonic() + 1)
    assert {r.neighbour: r.outcome for r in results} == {
        "B": HandshakeOutcome.CONSISTENT, "C": HandshakeOutcome.CONFLICT
    }
    assert leftovers == [value_msg("B", "A", 0, 4, 0)]
    assert [m.recipient for m in link.sent] == ["B", "C"]


def test_handshake_round_times_out_to_missing():
    link = FakeLink([])
    cs = [_c(">", "B")]
    start = time.monotonic()
    results, _ = handshake_round("A", cs, link.send, link.receive_until, start + 0.1)
    assert results[0].outcome is HandshakeOutcome.MISSING
    assert time.monotonic() - start < 0.5
