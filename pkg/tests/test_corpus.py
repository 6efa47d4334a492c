import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from trimem.corpus import (
    DialogueCorpus,
    DialogueTurn,
    SegmentationConfig,
    load_corpus,
    render_window,
    segment,
    window_count,
)
from trimem.errors import DuplicateTurnId, EmptyCorpus, MalformedDocument, MissingFile


def make_corpus(n, session_size=None, timestamps=False):
    turns = []
    for i in range(1, n + 1):
        session = 0 if session_size is None else (i - 1) // session_size
        turns.append(DialogueTurn(
            turn_id=i, session_id=session,
            speaker="A" if i % 2 else "B", text=f"turn {i}",
            timestamp=f"2024-01-01T00:{i % 60:02d}:00" if timestamps else None))
    return DialogueCorpus(corpus_id="t", turns=tuple(turns))


# -- loading -----------------------------------------------------------

def test_load_flat_turns(tmp_path):
    doc = {"turns": [{"speaker": "A", "text": "hi"},
                     {"speaker": "B", "text": "yo"}]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    corpus = load_corpus(path)
    assert corpus.turn_count == 2
    assert [t.turn_id for t in corpus.turns] == [1, 2]
    assert corpus.turn(2).speaker == "B"


def test_load_sessioned_assigns_global_ids(tmp_path):
    doc = {"corpus_id": "x", "sessions": [
        {"session_id": 7, "turns": [{"speaker": "A", "text": "a"}]},
        {"session_id": 9, "turns": [{"speaker": "B", "text": "b"},
                                    {"speaker": "A", "text": "c"}]},
    ]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    corpus = load_corpus(path)
    assert corpus.corpus_id == "x"
    assert [t.turn_id for t in corpus.turns] == [1, 2, 3]
    assert [t.session_id for t in corpus.turns] == [7, 9, 9]


def test_load_missing_file(tmp_path):
    with pytest.raises(MissingFile):
        load_corpus(tmp_path / "nope.json")


def test_load_rejects_bad_json(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(MalformedDocument):
        load_corpus(path)


def test_load_rejects_duplicate_turn_id(tmp_path):
    doc = {"turns": [{"turn_id": 1, "speaker": "A", "text": "a"},
                     {"turn_id": 1, "speaker": "B", "text": "b"}]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises((DuplicateTurnId, MalformedDocument)):
        load_corpus(path)


def test_load_rejects_out_of_order_turn_id(tmp_path):
    doc = {"turns": [{"turn_id": 2, "speaker": "A", "text": "a"}]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedDocument):
        load_corpus(path)


def test_load_rejects_bad_timestamp(tmp_path):
    doc = {"turns": [{"speaker": "A", "text": "a", "timestamp": "yesterday"}]}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(MalformedDocument):
        load_corpus(path)


# -- window count ------------------------------------------------------

def test_window_count_examples():
    assert window_count(300, 40, 38) == 8
    assert window_count(40, 40, 38) == 1
    assert window_count(10, 40, 38) == 1
    assert window_count(1, 40, 38) == 1
    assert window_count(41, 40, 38) == 2


def test_segment_fixed_case_300():
    corpus = make_corpus(300)
    windows = segment(corpus, SegmentationConfig(window_size=40, stride=38))
    assert len(windows) == 8
    assert (windows[0].first_turn, windows[0].last_turn) == (1, 40)
    assert (windows[-1].first_turn, windows[-1].last_turn) == (267, 300)
    assert [w.index for w in windows] == list(range(1, 9))


def test_segment_empty_corpus():
    corpus = DialogueCorpus(corpus_id="e", turns=())
    with pytest.raises(EmptyCorpus):
        segment(corpus, SegmentationConfig())


def test_segmentation_config_validation():
    with pytest.raises(ValueError):
        SegmentationConfig(window_size=0)
    with pytest.raises(ValueError):
        SegmentationConfig(window_size=10, stride=11)
    with pytest.raises(ValueError):
        SegmentationConfig(window_size=10, stride=0)


def test_per_session_segmentation():
    corpus = make_corpus(10, session_size=5)
    windows = segment(corpus, SegmentationConfig(window_size=4, stride=3,
                                                 per_session=True))
    # each 5-turn session yields ceil((5-4)/3)+1 = 2 windows
    assert len(windows) == 4
    assert [w.index for w in windows] == [1, 2, 3, 4]
    # no window crosses the session boundary at turn 5/6
    for w in windows:
        sessions = {t.session_id for t in w.turns}
        assert len(sessions) == 1


# -- properties --------------------------------------------------------

@settings(max_examples=300, deadline=None)
@given(st.data())
def test_segmentation_invariants(data):
    t = data.draw(st.integers(min_value=1, max_value=2000))
    l = data.draw(st.integers(min_value=1, max_value=100))
    s = data.draw(st.integers(min_value=1, max_value=l))
    corpus = make_corpus(t)
    windows = segment(corpus, SegmentationConfig(window_size=l, stride=s))

    expected = max(math.ceil((t - l) / s) + 1, 1)
    assert len(windows) == expected
    # full coverage, in order, no gaps
    assert windows[0].first_turn == 1
    assert windows[-1].last_turn == t
    for i, w in enumerate(windows, 1):
        assert w.index == i
        assert w.first_turn == (i - 1) * s + 1
        assert w.last_turn == min(t, (i - 1) * s + l)
        assert [x.turn_id for x in w.turns] == list(range(w.first_turn, w.last_turn + 1))
    for prev, nxt in zip(windows, windows[1:]):
        assert nxt.first_turn <= prev.last_turn + 1  # no gap
        overlap = prev.last_turn - nxt.first_turn + 1
        assert overlap == min(l - s, prev.last_turn - prev.first_turn + 1 - s) or overlap <= l - s


# -- rendering ---------------------------------------------------------

def test_render_window_with_timestamps():
    corpus = make_corpus(2, timestamps=True)
    [w] = segment(corpus, SegmentationConfig(window_size=2, stride=2))
    assert render_window(w) == (
        "[ID:1] [2024-01-01T00:01:00] A: turn 1\n"
        "[ID:2] [2024-01-01T00:02:00] B: turn 2")


def test_render_window_omits_missing_timestamp():
    corpus = make_corpus(1)
    [w] = segment(corpus, SegmentationConfig(window_size=1, stride=1))
    assert render_window(w) == "[ID:1] A: turn 1"
