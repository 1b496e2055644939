import pytest
from hypothesis import given, settings, strategies as st

from gridsentry.errors import DomainError, ParseError, UnknownCall
from gridsentry.traces import (CallEvent, CallHistogram, CallKind, CallTrace, DeviceClass, Source, Tier,
                               WeightScheme, dumps_trace, histogram, loads_trace, read_trace, weigh,
                               write_histogram, write_trace)

names = st.text(alphabet="abcdefghijklmnopqrstuvwxyz_0123456789", min_size=1, max_size=12)
tokens = st.text(alphabet="abcdefghijklmnopqrstuvwxyzABCDEFGHIJ-_.0123456789", min_size=1, max_size=10)


@st.composite
def traces(draw, max_size=60):
    calls = draw(st.lists(names, min_size=1, max_size=max_size))
    steps = draw(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=len(calls), max_size=len(calls)))
    times, t = [], draw(st.floats(0, 1e6, allow_nan=False))
    for s in steps:
        t += s
        times.append(t)
    cls = DeviceClass(draw(st.sampled_from(Tier)), draw(tokens), draw(tokens))
    return CallTrace.from_names(calls, device_id=draw(tokens), device_class=cls,
                                source=draw(st.sampled_from(Source)), task_id=draw(tokens),
                                run_id=draw(st.integers(0, 10**6)), times=times)


@settings(max_examples=200, deadline=None)
@given(traces())
def test_trace_file_round_trip(t):
    assert loads_trace(dumps_trace(t)) == t


@settings(max_examples=10, deadline=None)
@given(traces(max_size=1000).filter(lambda t: len(t) > 0))
def test_long_trace_round_trip_on_disk(tmp_path_factory, t):
    path = tmp_path_factory.mktemp("rt") / "t.trace"
    write_trace(t, path)
    assert read_trace(path) == t


def test_thousand_event_round_trip(tmp_path):
    t = CallTrace.from_names([f"c{i % 17}" for i in range(1000)], source=Source.USER)
    write_trace(t, tmp_path / "x.trace")
    assert read_trace(tmp_path / "x.trace") == t


@settings(max_examples=200, deadline=None)
@given(traces())
def test_histogram_total_is_length(t):
    assert histogram(t).total == len(t)


@settings(max_examples=100, deadline=None)
@given(traces(), st.integers(0, 2**32))
def test_weigh_is_length_preserving_and_deterministic(t, seed):
    a = weigh(t, WeightScheme.uniform_random(seed))
    b = weigh(t, WeightScheme.uniform_random(seed, names=t.names))
    assert len(a) == len(t)
    assert a == b
    assert all(1.0 <= v <= 100.0 for v in a.values)


def test_header_format():
    t = CallTrace.from_names(["a", "b"], device_id="rtu7", device_class=DeviceClass(Tier.LIMITED, "RTU-x", "goose"),
                             source=Source.KERNEL, task_id="pub", run_id=3)
    head, first = dumps_trace(t).splitlines()[:2]
    assert head == "#trace v1 device=rtu7 class=limited/RTU-x/goose source=kernel-hook task=pub run=3"
    assert first == "0,system-call,a,0.0"


def test_histogram_counts_and_csv(tmp_path):
    h = histogram(CallTrace.from_names(["malloc", "free", "malloc"]))
    assert dict(h.counts) == {"malloc": 2, "free": 1}
    assert h["absent"] == 0
    write_histogram(h, tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text() == "free,1\nmalloc,2\n"


def test_weigh_table_lookup():
    t = CallTrace.from_names(["a", "b", "a"])
    assert list(weigh(t, WeightScheme.adaptive({"a": 1.0, "b": 2.0})).values) == [1.0, 2.0, 1.0]


def test_adaptive_unknown_call():
    t = CallTrace.from_names(["a", "zzz"])
    with pytest.raises(UnknownCall):
        weigh(t, WeightScheme.adaptive({"a": 1.0}))


def test_uniform_weights_independent_of_table_growth():
    small = WeightScheme.uniform_random(5, ["x"])
    big = WeightScheme.uniform_random(5, ["x", "y", "z"])
    assert small.weight("x") == big.weight("x")
    assert WeightScheme.uniform_random(6).weight("x") != small.weight("x")


def test_weight_scheme_validation():
    with pytest.raises(DomainError):
        WeightScheme("uniform-random", 5.0, 5.0)
    with pytest.raises(DomainError):
        WeightScheme.adaptive({"a": 200.0})


@pytest.mark.parametrize("body, line", [
    ("0,system-call,a,1.0\n1,system-call,b,0.5\n", 3),      # time goes backwards
    ("0,system-call,a,1.0\n2,system-call,b,2.0\n", 3),      # index gap
    ("0,function-call,a,1.0\n", 2),                        # kind does not match source
    ("0,system-call,a\n", 2),                              # missing field
    ("0,system-call,a b,1.0\n", 2),                        # whitespace in name
    ("0,system-call,a,-1\n", 2),                           # negative offset
])
def test_malformed_body_reports_line(body, line):
    text = "#trace v1 device=d class=rich/t/c source=kernel-hook task=x run=0\n" + body
    with pytest.raises(ParseError) as info:
        loads_trace(text, path="bad.trace")
    assert info.value.line == line
    assert str(info.value).startswith(f"bad.trace:{line}:")


def test_bad_header_and_empty_body():
    with pytest.raises(ParseError):
        loads_trace("#trace v2 device=d\n0,system-call,a,0\n")
    with pytest.raises(ParseError):
        loads_trace("#trace v1 device=d class=rich/t/c source=kernel-hook task=x run=0\n")


def test_event_and_trace_invariants():
    with pytest.raises(DomainError):
        CallEvent("", CallKind.SYSTEM, 0, 0.0)
    with pytest.raises(DomainError):
        CallEvent("a,b", CallKind.SYSTEM, 0, 0.0)
    with pytest.raises(DomainError):
        CallTrace.from_names([])
    with pytest.raises(DomainError):
        CallTrace.from_names(["a", "b"], times=[2.0, 1.0])


def test_device_class_is_fieldwise():
    a = DeviceClass(Tier.RICH, "PMU", "goose")
    assert a == DeviceClass.parse("rich/PMU/goose")
    assert a != DeviceClass(Tier.RICH, "PMU", "sv")
    assert a.key == "rich__PMU__goose"
    with pytest.raises(DomainError):
        DeviceClass.parse("rich/PMU")
    with pytest.raises(DomainError):
        DeviceClass(Tier.RICH, "a b", "c")


def test_histogram_rejects_negative():
    with pytest.raises(DomainError):
        CallHistogram({"a": -1})
