import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ideoaxis import scaling
from ideoaxis.embedding import EmbeddingVector, MockProvider, TableProvider
from ideoaxis.nlproc import Label, SentenceUnit
from ideoaxis.scaling import AxisMethod, OpinionSentence, ProjectionResult, StanceProfile

PID = "p"


def ev(*xs):
    return EmbeddingVector(np.asarray(xs, dtype=float), PID)


def profile(name, *xs, party="LDP", topic="t"):
    return StanceProfile(name, party, topic, ev(*xs), 5, 1)


def sentences(spec):
    """spec: {speaker: (party, [vector, ...])} -> (sentences, vectors)."""
    sents, vecs = [], {}
    for name, (party, rows) in spec.items():
        for j, row in enumerate(rows):
            s = OpinionSentence(SentenceUnit(f"{name}-sp", j, f"{name}{j}", Label.OPINION, 1.0), name, party)
            sents.append(s)
            vecs[s.key] = ev(*row)
    return sents, vecs


def result(name, x, party="LDP"):
    return ProjectionResult(name, party, "t", x, x)


def test_profile_is_mean_of_sentence_vectors():
    sents, vecs = sentences({"a": ("LDP", [(1, 0), (0, 1), (2, 2)]), "b": ("JCP", [(4, 4)] * 5)})
    profiles, skipped = scaling.build_profiles(sents, vecs, "t", min_sentences=1)
    got = {p.speaker_name: p for p in profiles}
    assert np.allclose(got["a"].mean_embedding.values, [1, 1])
    assert got["a"].n_opinion_sentences == 3 and got["a"].party == "LDP"
    assert np.allclose(got["b"].mean_embedding.values, [4, 4])
    assert skipped == []


def test_min_sentences_skips_and_reports():
    sents, vecs = sentences({"a": ("LDP", [(1, 0)] * 4), "b": ("LDP", [(0, 1)] * 5)})
    profiles, skipped = scaling.build_profiles(sents, vecs, "t", min_sentences=5)
    assert [p.speaker_name for p in profiles] == ["b"]
    assert skipped[0]["speaker_name"] == "a" and skipped[0]["n_opinion_sentences"] == 4


def test_no_cross_talk_between_speakers():
    base = {"a": ("LDP", [(1, 0)] * 5), "b": ("JCP", [(0, 1)] * 5)}
    before = scaling.build_profiles(*sentences(base), "t", 1)[0]
    base["b"] = ("JCP", [(9, 9)] * 7)
    after = scaling.build_profiles(*sentences(base), "t", 1)[0]
    assert before[0].mean_embedding == after[0].mean_embedding


def test_profile_missing_vector_is_error():
    sents, vecs = sentences({"a": ("LDP", [(1, 0)] * 2)})
    vecs.pop(sents[0].key)
    with pytest.raises(scaling.ScalingError):
        scaling.build_profiles(sents, vecs, "t", 1)


def test_normalized_sentence_vectors():
    sents, vecs = sentences({"a": ("LDP", [(10, 0), (0, 1)])})
    p = scaling.build_profiles(sents, vecs, "t", 1, normalize_sentence_vectors=True)[0][0]
    assert np.allclose(p.mean_embedding.values, [0.5, 0.5])


def test_pair_axis_direction():
    ax = scaling.build_axis_from_pair(profile("pro", 1, 0), profile("con", 0, 1))
    assert np.allclose(ax.direction.values, np.array([1, -1]) / math.sqrt(2))
    assert ax.method is AxisMethod.PAIR and ax.anchor_labels == ("pro", "con")
    assert math.isclose(ax.length, math.sqrt(2))


def test_degenerate_and_mismatched_pairs():
    with pytest.raises(scaling.DegenerateAxisError):
        scaling.build_axis_from_pair(profile("a", 1, 1), profile("b", 1, 1))
    with pytest.raises(scaling.ScalingError):
        scaling.build_axis_from_pair(profile("a", 1, 0), profile("b", 0, 1, topic="u"))


def test_projection_examples():
    ax = scaling.build_axis_from_pair(profile("pro", 2, 0), profile("con", 0, 0))
    assert scaling.project(profile("x", 1, 1), ax).normalized == 0.5
    raw, norm = scaling.project_vector(np.array([3.0, 5.0]), ax)
    assert (raw, norm) == (3.0, 1.5)
    assert scaling.project_vector(np.array([-1.0, 0.0]), ax)[1] == -0.5


def test_projection_rejects_other_provider_or_dimension():
    ax = scaling.build_axis_from_pair(profile("pro", 1, 0), profile("con", 0, 1))
    other = StanceProfile("x", "LDP", "t", EmbeddingVector([1.0, 0.0], "q"), 5, 1)
    with pytest.raises(scaling.ScalingError):
        scaling.project(other, ax)
    with pytest.raises(scaling.ScalingError):
        scaling.project_vector(np.zeros(3), ax)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_normalized_score_is_scale_invariant(c, seed):
    rng = np.random.default_rng(seed)
    pro, con, v = rng.standard_normal((3, 6))
    ax = scaling._make_axis("t", ev(*pro), ev(*con), AxisMethod.PAIR, ("a", "b"))
    big = scaling._make_axis("t", ev(*(c * pro)), ev(*(c * con)), AxisMethod.PAIR, ("a", "b"))
    raw, x = scaling.project_vector(v, ax)
    raw_c, x_c = scaling.project_vector(c * v, big)
    assert math.isclose(x, x_c, rel_tol=1e-9, abs_tol=1e-9)
    assert math.isclose(raw_c, c * raw, rel_tol=1e-9, abs_tol=1e-9)


def test_seed_axis_anchors_are_seed_means():
    table = {"p1": [1.0, 0.0, 0.0], "p2": [0.0, 1.0, 0.0], "c1": [0.0, 0.0, 1.0]}
    ax = scaling.build_axis_from_seeds(["p1", "p2"], ["c1"], TableProvider(table), "t")
    assert ax.method is AxisMethod.GENERATED
    assert np.allclose(ax.anchor_pro.values, [0.5, 0.5, 0])
    assert np.allclose(ax.anchor_con.values, [0, 0, 1])


def test_seed_axis_degenerate_when_sides_identical():
    with pytest.raises(scaling.DegenerateAxisError):
        scaling.build_axis_from_seeds(["同じ答弁"] * 3, ["同じ答弁"], MockProvider(16))


def test_duplicated_seeds_leave_anchor_unchanged():
    p = MockProvider(16)
    a = scaling.build_axis_from_seeds(["x", "y"], ["z"], p)
    b = scaling.build_axis_from_seeds(["x", "y", "x", "y"], ["z", "z"], p)
    assert np.allclose(a.anchor_pro.values, b.anchor_pro.values, atol=1e-15)
    assert np.allclose(a.direction.values, b.direction.values, atol=1e-15)


def test_seed_axis_needs_both_sides():
    with pytest.raises(ValueError):
        scaling.build_axis_from_seeds([], ["z"], MockProvider(8))


def test_split_example():
    res = [result(n, x) for n, x in zip("abcdef", [0.0, 0.1, 0.4, 0.5, 0.8, 0.9])]
    assert [r.group for r in scaling.split_groups(res)] == ["LEFT", "LEFT", "CENTER", "CENTER", "RIGHT", "RIGHT"]


def test_split_remainder_to_lowest_groups():
    assert scaling.split_sizes(7, 3) == [3, 2, 2]
    assert scaling.split_sizes(8, 3) == [3, 3, 2]
    res = scaling.split_groups([result(f"m{i}", i) for i in range(7)])
    assert [r.group for r in res] == ["LEFT"] * 3 + ["CENTER"] * 2 + ["RIGHT"] * 2


def test_split_keeps_input_order_and_needs_k():
    res = [result("c", 0.9), result("a", 0.1), result("b", 0.5)]
    assert [r.speaker_name for r in scaling.split_groups(res)] == ["c", "a", "b"]
    assert [r.group for r in scaling.split_groups(res)] == ["RIGHT", "LEFT", "CENTER"]
    with pytest.raises(scaling.ScalingError):
        scaling.split_groups(res[:2])
    assert scaling.group_names(4) == ("G0", "G1", "G2", "G3")


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=60))
def test_split_is_ordered_partition(xs):
    res = scaling.split_groups([result(f"m{i:02d}", x) for i, x in enumerate(xs)])
    rank = {g: i for i, g in enumerate(scaling.GROUP_NAMES)}
    ordered = sorted(res, key=lambda r: (r.normalized, r.speaker_name))
    assert [rank[r.group] for r in ordered] == sorted(rank[r.group] for r in res)
    sizes = [sum(r.group == g for r in res) for g in scaling.GROUP_NAMES]
    assert sizes == scaling.split_sizes(len(xs), 3)


def test_party_summary_single_member():
    (s,) = scaling.party_summary([result("a", 0.4)])
    assert (s.minimum, s.q1, s.median, s.q3, s.maximum) == (0.4,) * 5


def test_party_summary_linear_quartiles_and_order():
    out = scaling.party_summary([result("a", 0.0), result("b", 1.0), result("c", 0.1, "JCP")])
    assert [s.party for s in out] == ["JCP", "LDP"]
    ldp = out[1]
    assert (ldp.minimum, ldp.q1, ldp.median, ldp.q3, ldp.maximum) == (0.0, 0.25, 0.5, 0.75, 1.0)
    with pytest.raises(scaling.ScalingError):
        scaling.party_summary([result("x", 0.0, party="")])


def test_sentence_level_groups():
    sents, vecs = sentences({"a": ("LDP", [(0, 0), (3, 0)]), "b": ("JCP", [(1, 0), (2, 0), (4, 0), (5, 0)])})
    ax = scaling._make_axis("t", ev(1, 0), ev(0, 0), AxisMethod.PAIR, ("p", "c"))
    groups = scaling.sentence_level_groups(sents, vecs, ax)
    by_x = {vecs[k].values[0]: g for k, g in groups.items()}
    assert by_x == {0: "LEFT", 1: "LEFT", 2: "CENTER", 3: "CENTER", 4: "RIGHT", 5: "RIGHT"}


def test_round_trips(tmp_path):
    res = scaling.split_groups([result(n, x) for n, x in zip("abc", [1 / 3, -0.25, 2.0])])
    scaling.write_results(res, tmp_path / "r.tsv")
    assert scaling.read_results(tmp_path / "r.tsv") == res

    profs = [profile("a", 0.1, 0.2), profile("b", 1 / 3, 7.0, party="JCP")]
    scaling.write_profiles(profs, tmp_path / "p.jsonl")
    back = scaling.read_profiles(tmp_path / "p.jsonl")
    assert [(p.speaker_name, p.party, p.mean_embedding) for p in back] == \
           [(p.speaker_name, p.party, p.mean_embedding) for p in profs]

    ax = scaling.build_axis_from_pair(profs[0], profs[1])
    scaling.write_axis(ax, tmp_path / "a.json")
    again = scaling.read_axis(tmp_path / "a.json")
    assert again.direction == ax.direction and again.anchor_labels == ax.anchor_labels


def test_swapped_axis_flips_scores():
    ax = scaling.build_axis_from_pair(profile("pro", 1, 0), profile("con", 0, 1))
    p = profile("x", 0.3, 0.9)
    assert math.isclose(scaling.project(p, ax.swapped()).normalized, 1 - scaling.project(p, ax).normalized)
