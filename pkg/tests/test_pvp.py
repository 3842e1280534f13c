from __future__ import annotations

import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from petapter.pvp import (
    PVP,
    CapacityError,
    Field,
    Literal,
    PVPError,
    Special,
    TemplateError,
    TruncGroup,
    VerbalizerMap,
    apply_pattern,
    build_sub_vocab,
    builtin_pvps,
    load_pvp,
    one_vs_all_augment,
    parse_template,
    save_pvp,
    validate_pvp,
)
from petapter.text import build_vocab, split_words

PVPS = builtin_pvps()
TWO_MASK = {n for n in PVPS if n.startswith("ukraine") and not n.endswith("alpha")}
WORDS = "alpha beta gamma delta eps zeta eta theta iota kappa".split()


def vocab_for(*pvps, extra=()):
    required = [w for p in pvps for w in p.required_words()]
    return build_vocab([" ".join(WORDS), *extra], 400, required_words=required)


# ---------------------------------------------------------------- parsing


def test_parse_ag_prompt():
    t = parse_template("[MASK] News: [text]*")
    assert t.m == 1
    assert t.elements == (Special("MASK"), Literal(" News: "), Field("text", truncate=True))


def test_parse_ukraine_no_pattern():
    t = parse_template("[MASK] [MASK]: {[target_sentence] [SEP] [context_before] [SEP] [context_after]}*")
    assert t.m == 2
    group = t.elements[-1]
    assert isinstance(group, TruncGroup)
    assert [e.name for e in group.elements if isinstance(e, Field)] == [
        "target_sentence",
        "context_before",
        "context_after",
    ]


@pytest.mark.parametrize(
    "source",
    [
        "{a}* {b}*",
        "[MASK] [x]* [y]*",
        "[MASK] [x]* {[y]}*",
        "[MASK] no region",
        "{[x] [MASK]}*",
        "[MASK] {[x]",
        "[MASK] [x]}*",
        "[MASK] {[x]} [y]",
        "[MASK] {{[x]}*}*",
    ],
)
def test_parse_errors(source):
    with pytest.raises(TemplateError):
        parse_template(source)


# ---------------------------------------------------------------- applying patterns


def test_ag_instance_length():
    t = parse_template("[MASK] News: [text]*")
    v = build_vocab(["one two three news :"], 50)
    inst = apply_pattern(t, {"text": "one two three"}, v, 128)
    p = 3  # [MASK] news :
    assert len(inst.ids) == 3 + p
    assert inst.mask_positions == [0]
    assert inst.ids[0] == v.mask_id


def test_empty_fields_leave_fixed_tokens():
    pvp = PVPS["ukraine_pattern_normal"]
    v = vocab_for(pvp)
    inst = apply_pattern(pvp.template, {"target_sentence": "", "context_before": "", "context_after": ""}, v, 128)
    words = split_words("This sentence contains arms deliveries to Ukraine:")
    assert len(inst.ids) == len(words) + 2 + 2  # two masks, two separators
    assert len(inst.mask_positions) == 2


def test_missing_field_warns_and_counts_as_empty(caplog):
    t = parse_template("[MASK] News: [text]*")
    v = build_vocab(["news"], 20)
    with caplog.at_level(logging.WARNING):
        inst = apply_pattern(t, {}, v, 16)
    assert len(inst.ids) == 3
    assert "text" in caplog.text


def test_ukraine_truncation_keeps_target():
    pvp = PVPS["ukraine_nopattern_normal"]
    v = vocab_for(pvp)
    rec = {"target_sentence": "alpha beta gamma", "context_before": "delta eps", "context_after": "zeta eta theta"}
    full = apply_pattern(pvp.template, rec, v, 128)
    assert len(full.ids) == 3 + 3 + 2 + 3 + 2  # masks and colon, target, before, after, separators
    cut = apply_pattern(pvp.template, rec, v, len(full.ids) - 4)
    kept = [v.tokens[i] for i in cut.ids]
    assert kept[:3] == ["[MASK]", "[MASK]", ":"]
    assert kept[3:6] == ["alpha", "beta", "gamma"]
    assert "zeta" not in kept and "theta" not in kept
    assert kept[6:] == ["[SEP]", "delta", "[SEP]"]


def test_capacity_error():
    pvp = PVPS["ukraine_pattern_normal"]
    with pytest.raises(CapacityError):
        apply_pattern(pvp.template, {"target_sentence": "alpha"}, vocab_for(pvp), 5)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.sampled_from(WORDS), max_size=12),
    st.lists(st.sampled_from(WORDS), max_size=12),
    st.lists(st.sampled_from(WORDS), max_size=12),
    st.integers(13, 40),
)
def test_length_law_and_monotone_truncation(target, before, after, max_len):
    pvp = PVPS["ukraine_pattern_normal"]
    v = vocab_for(pvp)
    rec = {"target_sentence": " ".join(target), "context_before": " ".join(before), "context_after": " ".join(after)}
    fixed = len(split_words("This sentence contains arms deliveries to Ukraine:")) + 2 + 2
    inst = apply_pattern(pvp.template, rec, v, max_len)
    n_prime = len(inst.ids) - fixed
    assert len(inst.ids) == min(max_len, fixed + len(target) + len(before) + len(after))
    assert 0 <= n_prime <= len(target) + len(before) + len(after)
    assert len(inst.mask_positions) == 2
    assert all(inst.ids[i] == v.mask_id for i in inst.mask_positions)
    # fixed prefix up to the region never changes as the budget shrinks
    head = len(split_words("This sentence contains arms deliveries to Ukraine:")) + 2
    smaller = apply_pattern(pvp.template, rec, v, max_len - 1)
    assert smaller.ids[:head] == inst.ids[:head]
    assert smaller.ids.count(v.sep_id) == 2
    big_region = [i for i in inst.ids[head:] if i != v.sep_id]
    small_region = [i for i in smaller.ids[head:] if i != v.sep_id]
    assert small_region == big_region[: len(small_region)]


# ---------------------------------------------------------------- sub-vocabulary


def test_yelp_sub_vocab():
    pvp = PVPS["yelp_prompt"]
    sv = build_sub_vocab(pvp.verbalizers, vocab_for(pvp))
    assert (sv.t, sv.index.shape) == (5, (5, 1))


def test_ukraine_four_label_sub_vocab():
    vm = VerbalizerMap.from_dict(
        {
            "argumentagainst": "argument against",
            "argumentfor": "argument for",
            "claimagainst": "claim against",
            "claimfor": "claim for",
        }
    )
    v = build_vocab(["argument claim against for"], 20)
    sv = build_sub_vocab(vm, v)
    assert sv.t == 4
    assert sorted(v.tokens[i] for i in sv.token_ids) == ["against", "argument", "claim", "for"]
    assert sv.index.shape == (4, 2)
    assert (sv.index < sv.t).all()
    assert [v.tokens[sv.token_ids[k]] for k in sv.index[1]] == ["argument", "for"]


def test_shipped_ukraine_sub_vocab_adds_no_stance_words():
    pvp = PVPS["ukraine_pattern_normal"]
    assert build_sub_vocab(pvp.verbalizers, vocab_for(pvp)).t == 6


def test_alpha_sub_vocab():
    vm = VerbalizerMap.from_dict({k: k for k in "abcd"})
    sv = build_sub_vocab(vm, build_vocab(["a b c d"], 20))
    assert (sv.t, sv.index.shape) == (4, (4, 1))


def test_sub_vocab_is_idempotent():
    pvp = PVPS["ukraine_pattern_shuffle"]
    v = vocab_for(pvp)
    assert build_sub_vocab(pvp.verbalizers, v) == build_sub_vocab(pvp.verbalizers, v)


def test_sub_vocab_unknown_word():
    vm = VerbalizerMap.from_dict({"x": "zebra", "y": "alpha"})
    with pytest.raises(PVPError, match="UNK"):
        build_sub_vocab(vm, build_vocab(["alpha"], 20))


# ---------------------------------------------------------------- validation


def test_validate_ag():
    validate_pvp(PVPS["ag_prompt"].template, PVPS["ag_prompt"].verbalizers)


def test_validate_mask_mismatch():
    with pytest.raises(PVPError, match="MASK"):
        validate_pvp(PVPS["ukraine_pattern_normal"].template, PVPS["ukraine_pattern_alpha"].verbalizers)


def test_validate_injectivity():
    with pytest.raises(PVPError, match="share"):
        validate_pvp(parse_template("[MASK] [x]*"), VerbalizerMap.from_dict({"a": "yes", "b": "yes"}))


def test_validate_uneven_verbalizers():
    with pytest.raises(PVPError):
        VerbalizerMap.from_dict({"a": "one two", "b": "three"}).m_v


# ---------------------------------------------------------------- golden files


def test_library_is_complete():
    expected = {"ag_prompt", "ag_qa", "yahoo_prompt", "yahoo_qa", "yelp_prompt", "yelp_qa"}
    expected |= {f"ukraine_{a}_{b}" for a in ("pattern", "nopattern") for b in ("normal", "alpha", "shuffle")}
    assert expected <= set(PVPS)
    assert sum(n.startswith("raft_") for n in PVPS) == 11
    assert len(PVPS["yahoo_qa"].labels) == 10


@pytest.mark.parametrize("name", sorted(PVPS))
def test_golden_pvp(name, tmp_path):
    pvp = PVPS[name]
    pvp.validate()
    m = 2 if name in TWO_MASK else 1
    assert pvp.template.m == m
    v = vocab_for(pvp)
    sv = build_sub_vocab(pvp.verbalizers, v)
    assert sv.index.shape == (len(pvp.labels), m)
    rec = {f: "alpha beta gamma " * 20 for f in pvp.template.fields}
    for max_len in (128, 96):
        inst = apply_pattern(pvp.template, rec, v, max_len)
        assert len(inst.ids) <= max_len
        assert len(inst.mask_positions) == m
        assert all(inst.ids[i] == v.mask_id for i in inst.mask_positions)
    save_pvp(pvp, tmp_path / "p.json")
    assert load_pvp(tmp_path / "p.json") == pvp
    assert list(load_pvp(tmp_path / "p.json").labels) == list(pvp.labels)


def test_shuffle_reuses_normal_verbalizers():
    normal = PVPS["ukraine_pattern_normal"].verbalizers
    shuffle = PVPS["ukraine_pattern_shuffle"].verbalizers
    assert normal.labels == shuffle.labels
    assert sorted(normal.words.values()) == sorted(shuffle.words.values())
    assert any(normal.words[k] != shuffle.words[k] for k in normal.labels)


def test_pvp_file_errors():
    with pytest.raises(PVPError):
        PVP.from_dict({"pattern": "[MASK] [x]*"})


# ---------------------------------------------------------------- one-vs-all


def test_one_vs_all_definition():
    out = one_vs_all_augment([{"text": "q", "label": "A"}], ["A", "B"])
    assert [(r["Label"], r["label"]) for r in out] == [("A", "Yes"), ("B", "No")]
    assert one_vs_all_augment([], ["A"]) == []
    with pytest.raises(PVPError):
        one_vs_all_augment([{"text": "q", "label": "A"}], [])


def test_banking_one_vs_all():
    labels = [f"intent {k}" for k in range(77)]
    records = [{"Query": f"query {i}", "label": labels[i % 77]} for i in range(50)]
    out = one_vs_all_augment(records, labels)
    assert len(out) == 50 * 77 == 3850
    assert sum(r["label"] == "Yes" for r in out) == 50
    pvp = PVPS["raft_banking_77"]
    v = vocab_for(pvp, extra=[" ".join(labels), "query 0 1 2"])
    for rec in out[:154]:
        inst = apply_pattern(pvp.template, rec, v, 64, label=pvp.verbalizers.label_index(rec["label"]))
        assert len(inst.mask_positions) == 1
