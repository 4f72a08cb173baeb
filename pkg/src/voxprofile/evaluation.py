"""Scoring of generated speaker descriptions.

Free text is parsed into attribute labels with controlled-vocabulary
synonym matching (longest match wins, conflicts are UNPARSEABLE), then
scored as per-attribute accuracy and confusion matrices. A pluggable
semantic scorer compares hypothesis and reference text; the default is
token-level F1 so the suite stays hermetic — embedding-based scorers can be
registered behind the same callable interface.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

UNPARSEABLE = "UNPARSEABLE"


@dataclass
class AttributeSchema:
    name: str
    classes: dict  # label -> synonym list (label itself is always matched)

    def __post_init__(self):
        seen = {}
        for label, synonyms in self.classes.items():
            for syn in [label, *synonyms]:
                key = syn.lower()
                if key in seen and seen[key] != label:
                    raise DataError(
                        f"schema '{self.name}': synonym '{syn}' maps to both "
                        f"'{seen[key]}' and '{label}'"
                    )
                seen[key] = label

    def synonym_items(self):
        for label, synonyms in self.classes.items():
            yield label, label
            for syn in synonyms:
                yield label, syn


DEFAULT_SCHEMAS = [
    AttributeSchema("gender", {
        "male": ["man", "he", "his", "masculine"],
        "female": ["woman", "she", "her", "feminine"],
    }),
    AttributeSchema("age_group", {
        "18-25": ["18 to 25", "late teens or early twenties"],
        "26-35": ["26 to 35", "late twenties or early thirties"],
        "36-45": ["36 to 45", "late thirties or early forties"],
        "46-60": ["46 to 60", "late forties or fifties"],
    }),
    AttributeSchema("ethnicity", {
        "asian": [],
        "black": ["african"],
        "hispanic": ["latino", "latina"],
        "white": ["caucasian"],
    }),
    AttributeSchema("dialect", {
        "northern": ["north"],
        "southern": ["south"],
        "midland": ["midwest", "midwestern"],
        "western": ["west coast"],
    }),
]


def default_schemas():
    return list(DEFAULT_SCHEMAS)


def load_schemas(path):
    raw = json.loads(open(path, "r", encoding="utf-8").read())
    return [AttributeSchema(item["name"], item["classes"]) for item in raw]


def _find_matches(text: str, schema: AttributeSchema):
    """All (span, label, synonym) word-boundary matches, case-insensitive."""
    matches = []
    for label, syn in schema.synonym_items():
        pattern = r"(?<!\w)" + re.escape(syn.lower()) + r"(?!\w)"
        for m in re.finditer(pattern, text):
            matches.append((m.start(), m.end(), label, syn))
    return matches


def extract_attribute(text: str, schema: AttributeSchema) -> str:
    """Longest-synonym match; no match or conflicting classes -> UNPARSEABLE."""
    matches = _find_matches(text.lower(), schema)
    if not matches:
        return UNPARSEABLE
    # overlapping spans: keep the longest synonym
    matches.sort(key=lambda m: (m[1] - m[0]), reverse=True)
    kept = []
    for start, end, label, syn in matches:
        if any(start < k_end and end > k_start for k_start, k_end, _, _ in kept):
            continue
        kept.append((start, end, label, syn))
    labels = {label for _, _, label, _ in kept}
    return labels.pop() if len(labels) == 1 else UNPARSEABLE


def extract_attributes(text: str, schemas) -> dict:
    return {schema.name: extract_attribute(text, schema) for schema in schemas}


def attribute_accuracy(preds, golds) -> float:
    """Percentage correct; UNPARSEABLE predictions count as wrong."""
    preds, golds = list(preds), list(golds)
    if len(preds) != len(golds):
        raise ShapeError(f"{len(preds)} predictions vs {len(golds)} golds")
    if not preds:
        raise DataError("cannot score an empty prediction list")
    correct = sum(1 for p, g in zip(preds, golds) if p == g and p != UNPARSEABLE)
    return 100.0 * correct / len(preds)


def confusion(preds, golds, schema: AttributeSchema):
    """Counts matrix: rows = gold classes, columns = classes + UNPARSEABLE."""
    labels = list(schema.classes)
    columns = labels + [UNPARSEABLE]
    col_index = {c: i for i, c in enumerate(columns)}
    row_index = {c: i for i, c in enumerate(labels)}
    matrix = np.zeros((len(labels), len(columns)), dtype=np.int64)
    for p, g in zip(preds, golds):
        if g not in row_index:
            raise DataError(f"gold label '{g}' not in schema '{schema.name}'")
        matrix[row_index[g], col_index.get(p, col_index[UNPARSEABLE])] += 1
    return matrix, labels, columns


def token_f1(hypothesis: str, reference: str) -> float:
    """F1 over lowercase token multisets; symmetric in its arguments."""
    from collections import Counter

    hyp = Counter(hypothesis.lower().split())
    ref = Counter(reference.lower().split())
    overlap = sum((hyp & ref).values())
    total_hyp, total_ref = sum(hyp.values()), sum(ref.values())
    if overlap == 0:
        return 0.0
    precision = overlap / total_hyp
    recall = overlap / total_ref
    return 2 * precision * recall / (precision + recall)


SCORERS = {"token-f1": token_f1}


def register_scorer(name: str, fn) -> None:
    SCORERS[name] = fn


def semantic_score(hypothesis: str, reference: str, scorer="token-f1") -> float:
    fn = SCORERS[scorer] if isinstance(scorer, str) else scorer
    value = float(fn(hypothesis, reference))
    if not 0.0 <= value <= 1.0:
        raise DataError(f"scorer returned {value}, outside [0, 1]")
    return value


@dataclass
class EvalReport:
    accuracy: dict                 # attribute -> percentage
    confusions: dict               # attribute -> {matrix, rows, columns}
    mean_semantic_score: float
    unparseable: dict              # attribute -> count
    evaluated: dict = field(default_factory=dict)  # attribute -> n scored

    def to_json(self) -> str:
        payload = {
            "accuracy": self.accuracy,
            "confusions": {
                k: {"matrix": v["matrix"].tolist(), "rows": v["rows"], "columns": v["columns"]}
                for k, v in self.confusions.items()
            },
            "mean_semantic_score": self.mean_semantic_score,
            "unparseable": self.unparseable,
            "evaluated": self.evaluated,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def evaluate_outputs(generated, triplets, schemas=None, scorer="token-f1") -> EvalReport:
    """Score generated descriptions against their triplets.

    An attribute is scored on a triplet only when the gold description
    itself parses to a label for it (a gender answer is not scored for
    age). Generated text failing to parse counts as wrong.
    """
    schemas = schemas or default_schemas()
    generated, triplets = list(generated), list(triplets)
    if len(generated) != len(triplets):
        raise ShapeError(f"{len(generated)} outputs vs {len(triplets)} triplets")
    by_schema = {s.name: s for s in schemas}
    preds: dict = {name: [] for name in by_schema}
    golds: dict = {name: [] for name in by_schema}
    scores = []
    for text, triplet in zip(generated, triplets):
        scores.append(semantic_score(text, triplet.description, scorer))
        gold_parse = extract_attributes(triplet.description, schemas)
        pred_parse = extract_attributes(text, schemas)
        for name in by_schema:
            if gold_parse[name] == UNPARSEABLE or name not in triplet.attributes:
                continue
            preds[name].append(pred_parse[name])
            golds[name].append(triplet.attributes[name])
    accuracy, confusions, unparseable, evaluated = {}, {}, {}, {}
    for name, schema in by_schema.items():
        if not preds[name]:
            continue
        accuracy[name] = attribute_accuracy(preds[name], golds[name])
        matrix, rows, columns = confusion(preds[name], golds[name], schema)
        confusions[name] = {"matrix": matrix, "rows": rows, "columns": columns}
        unparseable[name] = sum(1 for p in preds[name] if p == UNPARSEABLE)
        evaluated[name] = len(preds[name])
    return EvalReport(
        accuracy=accuracy,
        confusions=confusions,
        mean_semantic_score=float(np.mean(scores)),
        unparseable=unparseable,
        evaluated=evaluated,
    )


def render_confusion_chart(report: EvalReport, path) -> None:
    """Stacked-bar rendering of each attribute's confusion matrix."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = list(report.confusions)
    if not names:
        raise DataError("report carries no confusion matrices")
    fig, axes = plt.subplots(1, len(names), figsize=(4 * len(names), 4), squeeze=False)
    for ax, name in zip(axes[0], names):
        entry = report.confusions[name]
        matrix, rows, columns = entry["matrix"], entry["rows"], entry["columns"]
        bottom = np.zeros(len(rows))
        for j, col in enumerate(columns):
            ax.bar(rows, matrix[:, j], bottom=bottom, label=col)
            bottom += matrix[:, j]
        ax.set_title(name)
        ax.set_xlabel("gold")
        ax.tick_params(axis="x", rotation=45)
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
