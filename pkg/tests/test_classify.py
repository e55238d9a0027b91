from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctscope import classify as clf
from ctscope.classify import ClassifierConfig, DatasetItem, ExperimentSpec, Label, Prediction, PromptVariant
from ctscope.mockserver import MockServer

GOLDEN = Path(__file__).parent / "golden"
GOLDEN_TRANSCRIPT = "they spray chemicals from planes to control the weather"


# --- prompts -----------------------------------------------------------------

@pytest.mark.parametrize("variant,name", [
    (PromptVariant.SIMPLE, "prompt_simple.txt"),
    (PromptVariant.DEFINITION, "prompt_definition.txt"),
    (PromptVariant.STEP_BY_STEP, "prompt_step_by_step.txt"),
])
def test_prompt_matches_golden(variant, name):
    assert clf.render_prompt(variant, GOLDEN_TRANSCRIPT).encode() == (GOLDEN / name).read_bytes()


def test_prompt_examples():
    assert clf.render_prompt(PromptVariant.SIMPLE, "t").startswith("Decide whether the following transcription")
    assert "two or more actors have coordinated in secret" in clf.render_prompt(PromptVariant.DEFINITION, "t")
    sbs = clf.render_prompt(PromptVariant.STEP_BY_STEP, "t")
    assert "First, extract the narrative or claim" in sbs
    assert "no justification" not in sbs


def test_prompt_rejects_empty_transcript():
    with pytest.raises(clf.EmptyInput):
        clf.render_prompt(PromptVariant.SIMPLE, "   ")


@given(st.sampled_from(list(PromptVariant)), st.text(min_size=1).filter(str.strip))
def test_split_inverts_render(variant, transcript):
    head, body = clf.split_prompt(clf.render_prompt(variant, transcript))
    assert head == clf.instruction(variant)
    assert body == transcript


# --- labels ------------------------------------------------------------------

@pytest.mark.parametrize("raw,label", [
    ("1", Label.POSITIVE),
    ("0", Label.NEGATIVE),
    ("The claim is about chemtrails... Third: output = 1", Label.POSITIVE),
    ("output = 0.", Label.NEGATIVE),
    ("I cannot help with that.", Label.ABSTAIN),
    ("score 0.75", Label.ABSTAIN),
    ("First 1 then 0", Label.NEGATIVE),
    ("", Label.ABSTAIN),
])
def test_parse_label(raw, label):
    assert clf.parse_label(raw) is label


@given(st.text(alphabet="abc xyz.,:!\n", max_size=30), st.sampled_from("01"), st.text(alphabet="abc xyz,:!\n", max_size=30))
def test_parse_single_digit(prefix, digit, suffix):
    raw = f"{prefix} {digit} {suffix}"
    assert clf.parse_label(raw) == int(digit)


def test_majority_vote_examples():
    assert clf.majority_vote([1, 1, 0]) is Label.POSITIVE
    assert clf.majority_vote([Label.POSITIVE, Label.ABSTAIN, Label.NEGATIVE]) is Label.NEGATIVE
    assert clf.majority_vote([0, 0, 1]) is Label.NEGATIVE
    assert clf.majority_vote([1, 1, 1]) is Label.POSITIVE
    with pytest.raises(ValueError):
        clf.majority_vote([1, 1])


@given(st.lists(st.sampled_from(list(Label)), min_size=3, max_size=3), st.permutations(range(3)))
def test_majority_vote_symmetric(votes, perm):
    assert clf.majority_vote(votes) == clf.majority_vote([votes[i] for i in perm])


# --- invoke ------------------------------------------------------------------

def cfg(endpoint, **kw):
    return ClassifierConfig("m", endpoint, **kw)


def test_invoke_mock_server_plain():
    with MockServer(chat_fn=lambda p, s: "1") as srv:
        assert clf.invoke(cfg(srv.chat_url), "prompt") == "1"
        body = srv.requests[0][1]
        assert body["model"] == "m" and body["temperature"] == 0.0
        assert body["messages"] == [{"role": "user", "content": "prompt"}]


def test_invoke_retries_after_500s():
    with MockServer(chat_script=[(500, "boom"), (500, "boom"), (200, "0")]) as srv:
        assert clf.invoke(cfg(srv.chat_url), "p", backoff=0) == "0"
        assert len(srv.requests) == 3


def test_invoke_passes_step_by_step_answer_verbatim():
    answer = "First: the claim is that planes spray chemicals.\nSecond: yes.\nThird: output = 1"
    with MockServer(chat_fn=lambda p, s: answer, openai_style=True) as srv:
        assert clf.invoke(cfg(srv.chat_url, seed=42), "p") == answer
        assert srv.requests[0][1]["seed"] == 42


def test_invoke_persistent_failure():
    with MockServer(chat_script=[(503, "x")] * 5) as srv:
        with pytest.raises(clf.TransportError):
            clf.invoke(cfg(srv.chat_url), "p", retries=2, backoff=0)
        assert len(srv.requests) == 3


def test_invoke_client_error_not_retried():
    with MockServer(chat_script=[(401, "unauthorized")]) as srv:
        with pytest.raises(clf.TransportError):
            clf.invoke(cfg(srv.chat_url), "p", backoff=0)
        assert len(srv.requests) == 1


def test_invoke_context_overflow():
    with pytest.raises(clf.ContextOverflow):
        clf.invoke(cfg("mock://keyword", max_context_tokens=100), "x" * 1000)
    with MockServer(chat_script=[(400, "maximum context length exceeded")]) as srv:
        with pytest.raises(clf.ContextOverflow):
            clf.invoke(cfg(srv.chat_url), "p")


def test_invoke_registered_mock():
    clf.register_mock("always-one", lambda p, s: "1")
    assert clf.invoke(cfg("mock://always-one"), "p") == "1"
    with pytest.raises(clf.TransportError):
        clf.invoke(cfg("mock://unregistered"), "p")


def test_keyword_mock_ignores_seed():
    prompt = clf.render_prompt(PromptVariant.STEP_BY_STEP, "the illuminati run the banks")
    outs = {clf.invoke(cfg("mock://keyword?noise=0&salt=a", seed=s), prompt) for s in clf.SWEEP_SEEDS}
    assert len(outs) == 1
    assert clf.parse_label(outs.pop()) is Label.POSITIVE


# --- experiments -------------------------------------------------------------

def items(n_pos, n_neg):
    out = [DatasetItem(f"i{i}", "chemtrails are real" if i < n_pos else "my cat", int(i < n_pos))
           for i in range(n_pos + n_neg)]
    return out


def models(n=3):
    return [ClassifierConfig(f"m{k}", f"mock://keyword?salt=m{k}&noise=0.2") for k in range(n)]


def test_cardinality(tmp_path):
    spec = ExperimentSpec("C1", items(1, 1), models(), [PromptVariant.SIMPLE], [1, 2])
    preds = clf.run_experiment(spec, tmp_path / "r.csv")
    assert len(preds) == 2 * 1 * 3 * 2
    assert len({p.key for p in preds}) == 12


def test_resume_invokes_only_missing_cells(tmp_path):
    spec = ExperimentSpec("C1", items(3, 3), models(), [PromptVariant.SIMPLE, PromptVariant.DEFINITION], [1, 2])
    path = tmp_path / "r.csv"
    full = clf.run_experiment(spec, path)
    lines = path.read_text().splitlines()
    kept = lines[: 1 + len(full) // 2]
    path.write_text("\n".join(kept) + "\n")
    calls = []

    def counting(config, prompt):
        calls.append(config.name)
        return clf.invoke(config, prompt)

    again = clf.run_experiment(spec, path, invoke_fn=counting)
    assert len(calls) == len(full) - (len(kept) - 1)
    assert [(p.key, p.label) for p in again] == [(p.key, p.label) for p in full]


def test_partial_trailing_row_is_dropped(tmp_path):
    spec = ExperimentSpec("C1", items(2, 2), models(), [PromptVariant.SIMPLE], [1])
    path = tmp_path / "r.csv"
    clf.run_experiment(spec, path)
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    store = clf.ResultsStore(path)
    store.close()
    assert len(store.rows) == 11
    assert path.read_bytes().endswith(b"\n")
    assert len(clf.run_experiment(spec, path)) == 12


def test_transport_failures_recorded_and_retried(tmp_path):
    spec = ExperimentSpec("C1", items(1, 1), models(1), [PromptVariant.SIMPLE], [1])

    def broken(config, prompt):
        raise clf.TransportError("down")

    first = clf.run_experiment(spec, tmp_path / "r.csv", invoke_fn=broken)
    assert all(p.error == "transport" and p.label is Label.ABSTAIN for p in first)
    second = clf.run_experiment(spec, tmp_path / "r.csv")
    assert all(p.error == "" for p in second)


def test_context_overflow_excluded_from_metrics(tmp_path):
    long_item = DatasetItem("long", "word " * 40_000, 1)
    spec = ExperimentSpec("C1", items(1, 1) + [long_item], models(1), [PromptVariant.SIMPLE], [1])
    preds = clf.run_experiment(spec, tmp_path / "r.csv")
    assert [p.error for p in preds if p.item_id == "long"] == ["context_overflow"]
    (m,) = clf.compute_metrics(preds, spec.gold)
    assert m.n_items == 2


def test_seed_invariant_tables_on_deterministic_mocks(tmp_path):
    spec = ExperimentSpec("C1", items(20, 20), models(), list(PromptVariant), list(clf.SWEEP_SEEDS))
    preds = clf.run_experiment(spec, tmp_path / "r.csv")
    for m in clf.compute_metrics(preds, spec.gold):
        confusions = set(m.per_seed.values())
        assert len(confusions) == 1
        assert m.n_seeds == 25
        if m.precision is not None:
            assert m.precision_lo == m.precision == m.precision_hi


def test_dataset_round_trip(tmp_path):
    ds = [DatasetItem("a", 'text, with "quotes"\nand newline', 1, "manual"), DatasetItem("b", "plain", 0)]
    clf.write_dataset(ds, tmp_path / "d.csv")
    assert clf.load_dataset(tmp_path / "d.csv") == ds
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "item_id,transcript,gold_label,source"


def test_experiment_case_validation():
    with pytest.raises(ValueError):
        ExperimentSpec("C9", items(1, 1), models())
    spec = ExperimentSpec("C2", items(100, 779), models())
    assert spec.shape_matches_case()


# --- metrics -----------------------------------------------------------------

def preds_from(labels, model="m0", prompt=PromptVariant.SIMPLE, seed=1):
    return [Prediction(f"i{i}", model, prompt, seed, str(v), Label(v)) for i, v in enumerate(labels)]


# hand-tallied 20-item fixture: TP=6, FP=3, FN=4, TN=7
FIXTURE_GOLD = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]
FIXTURE_PRED = [1, 1, 1, 1, 1, 1, 0, 0, -1, 0, 1, 1, 1, 0, 0, 0, -1, 0, 0, 0]


def test_hand_tallied_fixture():
    gold = {f"i{i}": g for i, g in enumerate(FIXTURE_GOLD)}
    (pos,) = clf.compute_metrics(preds_from(FIXTURE_PRED), gold, "POSITIVE")
    assert pos.precision == 6 / 9 and pos.recall == 6 / 10
    (neg,) = clf.compute_metrics(preds_from(FIXTURE_PRED), gold, "NEGATIVE")
    # abstentions count as negative predictions: 7 true negatives, 4 missed positives
    assert neg.precision == 7 / 11 and neg.recall == 7 / 10


def test_all_correct():
    gold = {f"i{i}": g for i, g in enumerate(FIXTURE_GOLD)}
    (m,) = clf.compute_metrics(preds_from(FIXTURE_GOLD), gold)
    assert m.precision == 1.0 and m.recall == 1.0


def test_all_positive_on_c2_split():
    gold = {f"i{i}": int(i < 100) for i in range(879)}
    (m,) = clf.compute_metrics(preds_from([1] * 879), gold)
    assert m.recall == 1.0
    assert abs(m.precision - 100 / 879) < 1e-12


def test_undefined_precision_is_none_and_na(tmp_path):
    gold = {"i0": 1, "i1": 0}
    (m,) = clf.compute_metrics(preds_from([0, 0]), gold)
    assert m.precision is None and m.recall == 0.0
    clf.write_metrics([m], tmp_path / "m.csv", "C1")
    row = (tmp_path / "m.csv").read_text().splitlines()[1].split(",")
    assert row[6] == "NA"


@given(st.lists(st.tuples(st.integers(0, 1), st.sampled_from([-1, 0, 1])), min_size=1, max_size=40))
def test_class_swap_identity(pairs):
    gold = {f"i{i}": g for i, (g, _) in enumerate(pairs)}
    swapped_gold = {k: 1 - g for k, g in gold.items()}
    preds = preds_from([p if p != -1 else 0 for _, p in pairs])
    swapped = preds_from([1 - (p if p != -1 else 0) for _, p in pairs])
    (a,) = clf.compute_metrics(preds, gold, "POSITIVE")
    (b,) = clf.compute_metrics(swapped, swapped_gold, "NEGATIVE")
    assert (a.precision, a.recall) == (b.precision, b.recall)


def test_ensemble_added_only_for_three_models():
    gold = {"i0": 1}
    three = [Prediction("i0", f"m{k}", PromptVariant.SIMPLE, 1, "", Label(v)) for k, v in enumerate([1, 1, 0])]
    out = clf.compute_metrics(three, gold)
    assert [m.model for m in out] == ["m0", "m1", "m2", clf.ENSEMBLE]
    assert out[-1].recall == 1.0
    assert [m.model for m in clf.compute_metrics(three[:2], gold)] == ["m0", "m1"]


def test_interval_over_seeds():
    gold = {f"i{i}": g for i, g in enumerate(FIXTURE_GOLD)}
    preds = preds_from(FIXTURE_PRED, seed=1) + preds_from(FIXTURE_GOLD, seed=2)
    (m,) = clf.compute_metrics(preds, gold)
    assert m.n_seeds == 2
    assert m.precision == pytest.approx((6 / 9 + 1.0) / 2)
    assert m.precision_lo < m.precision < m.precision_hi


def test_write_table_layout(tmp_path):
    gold = {f"i{i}": g for i, g in enumerate(FIXTURE_GOLD)}
    preds = []
    for v in PromptVariant:
        preds += preds_from(FIXTURE_PRED, prompt=v)
    clf.write_table(clf.compute_metrics(preds, gold), tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "model,precision_SP,precision_DP,precision_SBS,recall_SP,recall_DP,recall_SBS"
    assert lines[1] == "m0,0.67,0.67,0.67,0.60,0.60,0.60"


# --- quartiles ---------------------------------------------------------------

def forced_lengths():
    """101 distinct word counts whose 25/50/75/100th percentiles are 210/325/472/1919."""
    segs = [np.linspace(20, 210, 26), np.linspace(211, 325, 25), np.linspace(326, 472, 25),
            np.linspace(473, 1919, 25)]
    return np.concatenate(segs).round().astype(int)


def test_quartile_bounds_forced():
    lengths = forced_lengths()
    transcripts = {f"i{i}": "w " * int(n) for i, n in enumerate(lengths)}
    gold = {k: i % 2 for i, k in enumerate(transcripts)}
    qb = clf.quartile_breakdown([], transcripts, gold)
    assert qb.bounds == [210.0, 325.0, 472.0, 1919.0]
    assert qb.counts == [26, 25, 25, 25]


def test_quartiles_uniform_lengths_near_equal():
    transcripts = {f"i{i:03d}": "w " * (10 + i) for i in range(200)}
    qb = clf.quartile_breakdown([], transcripts, {k: 0 for k in transcripts})
    assert max(qb.counts) - min(qb.counts) <= 1


def test_quartiles_planted_monotone_precision():
    rng = np.random.default_rng(8)
    lengths = rng.integers(20, 2000, 400)
    transcripts = {f"i{i}": "w " * int(n) for i, n in enumerate(lengths)}
    gold = {k: int(i % 2 == 0) for i, k in enumerate(transcripts)}
    bounds = np.quantile(lengths, [0.25, 0.5, 0.75])
    # false positives become rarer as transcripts get longer
    fp_rate = {0: 0.6, 1: 0.4, 2: 0.2, 3: 0.0}
    preds = []
    for i, (k, n) in enumerate(zip(transcripts, lengths)):
        q = int(np.searchsorted(bounds, n, side="left"))
        label = 1 if gold[k] else int(rng.random() < fp_rate[q])
        preds.append(Prediction(k, "m0", PromptVariant.SIMPLE, 1, "", Label(label)))
    qb = clf.quartile_breakdown(preds, transcripts, gold)
    precision = [qb.metrics[q][0].precision for q in range(4)]
    assert precision == sorted(precision)
    assert precision[3] == 1.0


def test_quartile_bucket_without_positives_undefined():
    transcripts = {f"i{i}": "w " * (i + 1) for i in range(8)}
    gold = {k: 0 for k in transcripts}
    preds = [Prediction(k, "m0", PromptVariant.SIMPLE, 1, "", Label.NEGATIVE) for k in transcripts]
    qb = clf.quartile_breakdown(preds, transcripts, gold)
    assert all(qb.metrics[q][0].recall is None for q in range(4))
