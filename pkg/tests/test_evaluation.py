import numpy as np
import pytest

from voxprofile.corpus import Triplet
from voxprofile.errors import DataError, ShapeError
from voxprofile.evaluation import (
    UNPARSEABLE,
    AttributeSchema,
    EvalReport,
    attribute_accuracy,
    confusion,
    default_schemas,
    evaluate_outputs,
    extract_attribute,
    extract_attributes,
    register_scorer,
    render_confusion_chart,
    semantic_score,
    token_f1,
)

GENDER = AttributeSchema("gender", {
    "male": ["man", "he", "his"],
    "female": ["woman", "she", "her"],
})


class TestExtractAttributes:
    def test_simple_match(self):
        text = "The speaker is a female in her thirties"
        assert extract_attribute(text, GENDER) == "female"

    def test_no_match_is_unparseable(self):
        assert extract_attribute("The speaker enjoys music", GENDER) == UNPARSEABLE

    def test_conflicting_cues_are_unparseable(self):
        assert extract_attribute("male voice but she is talking", GENDER) == UNPARSEABLE

    def test_case_insensitive(self):
        assert extract_attribute("THE SPEAKER IS FEMALE", GENDER) == "female"

    def test_word_boundaries_prevent_substring_hits(self):
        # "female" must not match the "male" synonym
        assert extract_attribute("female", GENDER) == "female"

    def test_longest_synonym_wins_on_overlap(self):
        schema = AttributeSchema("dialect", {
            "northern": ["north"],
            "midland": ["north midland"],
        })
        assert extract_attribute("a north midland accent", schema) == "midland"

    def test_multiple_schemas(self):
        schemas = default_schemas()
        parsed = extract_attributes("The speaker is a female with a northern dialect.", schemas)
        assert parsed["gender"] == "female"
        assert parsed["dialect"] == "northern"
        assert parsed["ethnicity"] == UNPARSEABLE

    def test_synonym_collision_rejected(self):
        with pytest.raises(DataError):
            AttributeSchema("broken", {"a": ["x"], "b": ["x"]})


class TestAttributeAccuracy:
    def test_all_correct(self):
        assert attribute_accuracy(["a"] * 10, ["a"] * 10) == 100.0

    def test_three_of_four(self):
        assert attribute_accuracy(["a", "a", "a", "b"], ["a", "a", "a", "a"]) == 75.0

    def test_unparseable_counts_as_wrong(self):
        preds = ["a", "a", "a", UNPARSEABLE]
        assert attribute_accuracy(preds, ["a"] * 4) == 75.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            attribute_accuracy(["a"], ["a", "b"])


class TestConfusion:
    def test_perfect_predictions_diagonal(self):
        schema = AttributeSchema("x", {"a": [], "b": []})
        matrix, rows, cols = confusion(["a", "b", "a"], ["a", "b", "a"], schema)
        assert matrix[0, 0] == 2 and matrix[1, 1] == 1
        assert matrix.sum() == 3
        assert cols == ["a", "b", UNPARSEABLE]

    def test_collapsed_predictions(self):
        schema = AttributeSchema("x", {"a": [], "b": []})
        matrix, _, _ = confusion(["a"] * 4, ["a", "a", "b", "b"], schema)
        assert matrix[:, 0].sum() == 4
        assert matrix[:, 1].sum() == 0

    def test_row_sums_equal_gold_counts(self, rng):
        schema = AttributeSchema("x", {"a": [], "b": [], "c": []})
        labels = ["a", "b", "c"]
        golds = [labels[i] for i in rng.integers(0, 3, size=100)]
        preds = [
            labels[i] if rng.random() > 0.2 else UNPARSEABLE
            for i in rng.integers(0, 3, size=100)
        ]
        matrix, rows, _ = confusion(preds, golds, schema)
        for i, label in enumerate(rows):
            assert matrix[i].sum() == golds.count(label)

    def test_unknown_gold_rejected(self):
        schema = AttributeSchema("x", {"a": []})
        with pytest.raises(DataError):
            confusion(["a"], ["z"], schema)

    def test_accuracy_equals_trace_over_total(self, rng):
        schema = AttributeSchema("x", {"a": [], "b": []})
        golds = ["a", "b", "a", "b", "a"]
        preds = ["a", "a", UNPARSEABLE, "b", "b"]
        matrix, _, _ = confusion(preds, golds, schema)
        acc = attribute_accuracy(preds, golds)
        assert acc == pytest.approx(100.0 * np.trace(matrix) / matrix.sum())


class TestSemanticScore:
    def test_identical_strings(self):
        assert semantic_score("a b c", "a b c") == 1.0

    def test_disjoint_tokens(self):
        assert semantic_score("a b", "c d") == 0.0

    def test_two_thirds_overlap(self):
        assert semantic_score("a b c", "a b d") == pytest.approx(2 / 3)

    def test_symmetry(self, rng):
        words = ["alpha", "beta", "gamma", "delta"]
        for _ in range(20):
            a = " ".join(words[i] for i in rng.integers(0, 4, size=5))
            b = " ".join(words[i] for i in rng.integers(0, 4, size=3))
            assert token_f1(a, b) == pytest.approx(token_f1(b, a))

    def test_pluggable_scorer(self):
        register_scorer("always-half", lambda h, r: 0.5)
        assert semantic_score("x", "y", "always-half") == 0.5

    def test_out_of_range_scorer_rejected(self):
        with pytest.raises(DataError):
            semantic_score("x", "y", lambda h, r: 2.0)


def make_triplet(desc, attrs, prompt="Describe the speaker.", kind="full"):
    return Triplet(
        utterance_id="u0", audio_path="x.wav", speaker_id="s0", prompt=prompt,
        description=desc, attributes=attrs, duration_s=2.0, prompt_kind=kind,
    )


class TestEvaluateOutputs:
    def test_perfect_generation_scores_100(self):
        triplets = [
            make_triplet("The speaker is female.", {"gender": "female"}, kind="gender"),
            make_triplet("The speaker is male.", {"gender": "male"}, kind="gender"),
        ]
        generated = [t.description for t in triplets]
        report = evaluate_outputs(generated, triplets)
        assert report.accuracy["gender"] == 100.0
        assert report.mean_semantic_score == 1.0
        assert report.unparseable.get("gender", 0) == 0

    def test_attribute_scored_only_when_gold_parses(self):
        triplets = [make_triplet("The speaker is female.", {"gender": "female", "dialect": "northern"})]
        report = evaluate_outputs(["The speaker is female."], triplets)
        assert "dialect" not in report.accuracy  # gold description never mentions dialect

    def test_wrong_attribute_counts(self):
        triplets = [
            make_triplet("The speaker is female.", {"gender": "female"}, kind="gender")
        ] * 4
        generated = ["The speaker is female."] * 3 + ["The speaker is male."]
        report = evaluate_outputs(generated, triplets)
        assert report.accuracy["gender"] == 75.0

    def test_report_serializes(self):
        triplets = [make_triplet("The speaker is female.", {"gender": "female"})]
        report = evaluate_outputs(["The speaker is female."], triplets)
        payload = report.to_json()
        assert '"gender"' in payload

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            evaluate_outputs(["a"], [])

    def test_chart_rendering(self, tmp_path):
        triplets = [
            make_triplet("The speaker is female.", {"gender": "female"}, kind="gender"),
            make_triplet("The speaker is male.", {"gender": "male"}, kind="gender"),
        ]
        report = evaluate_outputs([t.description for t in triplets], triplets)
        out = tmp_path / "conf.png"
        render_confusion_chart(report, out)
        assert out.exists() and out.stat().st_size > 0
