"""Engine semantics: firing, rejection safety, validation, log folding."""

from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from poet.fsm import (
    DefinitionDiagnostic,
    Edge,
    FrameRef,
    FsmDefinition,
    FsmInstance,
    TransitionRecord,
    UnknownEvent,
    WildcardEdge,
    fold_log,
    validate_definition,
)
from poet.models import device_fsm_table

CAUSE = FrameRef(0, "test", "unit")
TS = (0, 0)


def simple_def() -> FsmDefinition:
    return FsmDefinition(
        name="simple",
        states=frozenset({"A", "B", "C"}),
        initial_state="A",
        edges=(Edge("A", "go", "B"), Edge("B", "go", "C"), Edge("C", "loop", "C")),
        wildcard_edges=(WildcardEdge("reset", "A"),),
        reject_only_events=frozenset({"forbidden"}),
    )


def test_accepted_transition():
    inst = FsmInstance(simple_def(), "x")
    record = inst.fire("go", CAUSE, TS)
    assert record.verdict == "accepted"
    assert (record.from_state, record.to_state) == ("A", "B")
    assert inst.current_state == "B"


def test_wildcard_from_any_state():
    table = device_fsm_table()
    inst = FsmInstance(table, "dev")
    inst.current_state = "DataExchange"
    record = inst.fire("detect_neighbours", CAUSE, TS)
    assert record.verdict == "accepted"
    assert record.to_state == "NeighbourhoodDetection"


def test_rejected_event_keeps_state():
    table = device_fsm_table()
    inst = FsmInstance(table, "dev")
    inst.current_state = "DataExchange"
    record = inst.fire("name_set_requested", CAUSE, TS)
    assert record.verdict == "rejected"
    assert record.to_state is None
    assert inst.current_state == "DataExchange"


def test_self_loop_accepted():
    inst = FsmInstance(simple_def(), "x")
    inst.current_state = "C"
    record = inst.fire("loop", CAUSE, TS)
    assert record.verdict == "accepted"
    assert record.from_state == record.to_state == "C"


def test_specific_edge_shadows_wildcard():
    definition = FsmDefinition(
        name="shadow",
        states=frozenset({"A", "B", "C"}),
        initial_state="A",
        edges=(Edge("A", "e", "B"), Edge("B", "x", "A"), Edge("A", "y", "C")),
        wildcard_edges=(WildcardEdge("e", "C"),),
    )
    inst = FsmInstance(definition, "x")
    assert inst.fire("e", CAUSE, TS).to_state == "B"  # specific wins from A
    inst.current_state = "C"
    assert inst.fire("e", CAUSE, TS).to_state == "C"  # wildcard elsewhere


def test_unknown_event_raises():
    inst = FsmInstance(simple_def(), "x")
    with pytest.raises(UnknownEvent):
        inst.fire("not-an-event", CAUSE, TS)


def test_reject_only_event_in_alphabet():
    inst = FsmInstance(simple_def(), "x")
    record = inst.fire("forbidden", CAUSE, TS)
    assert record.verdict == "rejected"


def test_validator_clean_definition():
    assert validate_definition(simple_def()) == []


def test_validator_nondeterministic():
    definition = FsmDefinition(
        name="dup",
        states=frozenset({"A", "B", "C"}),
        initial_state="A",
        edges=(Edge("A", "e", "B"), Edge("A", "e", "C"), Edge("B", "f", "C"), Edge("C", "f", "B")),
    )
    diags = validate_definition(definition)
    assert DefinitionDiagnostic("nondeterministic", "A", "e") in diags


def test_validator_unreachable():
    definition = FsmDefinition(
        name="island",
        states=frozenset({"A", "B", "C"}),
        initial_state="A",
        edges=(Edge("A", "e", "B"), Edge("C", "f", "B")),
    )
    diags = validate_definition(definition)
    assert DefinitionDiagnostic("unreachable", "C", None) in diags


def test_validator_dangling():
    definition = FsmDefinition(
        name="dangle",
        states=frozenset({"A"}),
        initial_state="A",
        edges=(Edge("A", "e", "Ghost"),),
    )
    diags = validate_definition(definition)
    assert any(d.kind == "dangling" and d.state == "Ghost" for d in diags)


def test_log_export_jsonl_round_trip():
    import json

    inst = FsmInstance(simple_def(), "x")
    inst.fire("go", CAUSE, (1, 500))
    inst.fire("forbidden", CAUSE, (2, 0))
    lines = inst.export_log_lines().strip().split("\n")
    assert len(lines) == 2
    decoded = [json.loads(line) for line in lines]
    assert decoded[0]["verdict"] == "accepted"
    assert decoded[1]["verdict"] == "rejected"
    assert decoded[1]["to_state"] is None
    assert decoded[0]["cause"]["protocol"] == "test"


# --- Property tests ------------------------------------------------------------


@st.composite
def definitions_and_events(draw):
    states = draw(st.lists(st.sampled_from("ABCDEF"), min_size=1, max_size=6, unique=True))
    events = draw(st.lists(st.sampled_from("pqrstu"), min_size=1, max_size=6, unique=True))
    edges = []
    seen = set()
    for _ in range(draw(st.integers(0, 10))):
        frm = draw(st.sampled_from(states))
        event = draw(st.sampled_from(events))
        if (frm, event) in seen:
            continue
        seen.add((frm, event))
        edges.append(Edge(frm, event, draw(st.sampled_from(states))))
    wildcards = []
    for event in events:
        if draw(st.booleans()):
            wildcards.append(WildcardEdge(event, draw(st.sampled_from(states))))
    definition = FsmDefinition(
        name="prop",
        states=frozenset(states),
        initial_state=states[0],
        edges=tuple(edges),
        wildcard_edges=tuple(wildcards[:2]),
    )
    if not definition.alphabet:
        return definition, []
    sequence = draw(st.lists(st.sampled_from(sorted(definition.alphabet)), max_size=30))
    return definition, sequence


@given(definitions_and_events())
def test_replay_determinism(case):
    definition, sequence = case
    if not definition.alphabet:
        return
    runs = []
    for _ in range(2):
        inst = FsmInstance(definition, "p")
        records = [inst.fire(e, CAUSE, TS) for e in sequence]
        runs.append([(r.event, r.from_state, r.to_state, r.verdict) for r in records])
    assert runs[0] == runs[1]


@given(definitions_and_events())
def test_log_folding_reproduces_state(case):
    definition, sequence = case
    if not definition.alphabet:
        return
    inst = FsmInstance(definition, "p")
    for event in sequence:
        inst.fire(event, CAUSE, TS)
    assert fold_log(definition, inst.log) == inst.current_state


@given(definitions_and_events())
def test_rejection_safety(case):
    """Removing rejected events from a sequence leaves behavior identical."""
    definition, sequence = case
    if not definition.alphabet:
        return
    full = FsmInstance(definition, "full")
    accepted_events = []
    for event in sequence:
        if full.fire(event, CAUSE, TS).verdict == "accepted":
            accepted_events.append(event)
    filtered = FsmInstance(definition, "filtered")
    for event in accepted_events:
        assert filtered.fire(event, CAUSE, TS).verdict == "accepted"
    assert filtered.current_state == full.current_state
