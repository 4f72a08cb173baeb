"""Triplet corpus construction: (audio, prompt) -> description examples.

Descriptions are rendered from a template library (>= 5 surface forms per
attribute and for full descriptions) with labels substituted verbatim, so
the text of every caption is consistent with its attribute labels. Splits
are speaker-disjoint. Manifests are JSON lines, UTF-8, one record per line
with fields {utterance_id, audio_path, speaker_id, prompt, description,
attributes{...}, duration_s} (plus an informative prompt_kind).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DataError

REQUIRED_METADATA_FIELDS = ("utterance_id", "audio_path", "speaker_id", "duration_s", "attributes")


@dataclass
class Triplet:
    utterance_id: str
    audio_path: str
    speaker_id: str
    prompt: str
    description: str
    attributes: dict
    duration_s: float
    prompt_kind: str = "full"


@dataclass
class CorpusStats:
    vocab: int
    median_len: float
    max_len: int
    samples: int
    speakers: int
    avg_duration: float
    std_duration: float


@dataclass
class TemplateSet:
    """Prompt and response surface forms; responses embed {label} fields."""

    attribute_prompts: dict
    attribute_responses: dict
    full_prompts: list
    full_responses: list

    def __post_init__(self):
        for attr, forms in {**self.attribute_prompts, "full": self.full_prompts}.items():
            if len(forms) < 1:
                raise DataError(f"no prompt templates for '{attr}'")


DEFAULT_TEMPLATES = TemplateSet(
    attribute_prompts={
        "gender": [
            "What is the speaker's gender?",
            "Tell me the gender of this speaker.",
            "Is this a male or female voice?",
            "Identify the gender of the person speaking.",
            "Which gender does this voice belong to?",
        ],
        "age_group": [
            "How old is the speaker?",
            "What age group does the speaker belong to?",
            "Estimate the speaker's age.",
            "Tell me the age range of this voice.",
            "Which age bracket fits this speaker?",
        ],
        "ethnicity": [
            "What is the speaker's ethnicity?",
            "Tell me the ethnicity of this speaker.",
            "Identify the ethnic background of the voice.",
            "Which ethnicity does the speaker have?",
            "Describe the speaker's ethnic background.",
        ],
        "dialect": [
            "What dialect does the speaker have?",
            "Tell me the dialect of this speaker.",
            "Identify the regional accent of the voice.",
            "Which dialect region does this speaker come from?",
            "Describe the speaker's accent.",
        ],
    },
    attribute_responses={
        "gender": [
            "The speaker is {gender}.",
            "This is a {gender} voice.",
            "The voice belongs to a {gender} speaker.",
            "Judging by the voice, the speaker is {gender}.",
            "The person speaking is {gender}.",
        ],
        "age_group": [
            "The speaker is in the {age_group} age group.",
            "This voice belongs to someone aged {age_group}.",
            "The speaker sounds {age_group} years old.",
            "An age range of {age_group} fits this speaker.",
            "The person speaking is between {age_group} years of age.",
        ],
        "ethnicity": [
            "The speaker is {ethnicity}.",
            "This voice belongs to a {ethnicity} speaker.",
            "The speaker's ethnicity is {ethnicity}.",
            "The person speaking is of {ethnicity} background.",
            "The speaker comes from a {ethnicity} background.",
        ],
        "dialect": [
            "The speaker has a {dialect} dialect.",
            "This voice carries a {dialect} accent.",
            "The speaker's dialect is {dialect}.",
            "The person speaks with a {dialect} accent.",
            "A {dialect} dialect colors this speaker's voice.",
        ],
    },
    full_prompts=[
        "Describe the speaker.",
        "Give a full description of this speaker.",
        "Tell me about the person speaking.",
        "What can you say about this speaker?",
        "Profile the speaker in this recording.",
    ],
    full_responses=[
        "The speaker is a {gender} in the {age_group} age group, is {ethnicity}, and has a {dialect} dialect.",
        "This is a {gender} voice, aged {age_group}, of {ethnicity} background, with a {dialect} accent.",
        "A {gender} speaker aged {age_group}; the speaker is {ethnicity} and speaks with a {dialect} dialect.",
        "The person speaking is {gender}, is in the {age_group} age range, is {ethnicity}, and has a {dialect} accent.",
        "The voice belongs to a {ethnicity} {gender} aged {age_group} with a {dialect} dialect.",
    ],
)


def default_templates() -> TemplateSet:
    return DEFAULT_TEMPLATES


def validate_metadata_record(record: dict, lineno=None) -> dict:
    where = f" (record {lineno})" if lineno is not None else ""
    missing = [f for f in REQUIRED_METADATA_FIELDS if f not in record]
    if missing:
        raise DataError(f"metadata record missing fields {missing}{where}")
    if not record["attributes"]:
        raise DataError(f"metadata record carries no attributes{where}")
    return record


def render(template: str, attributes: dict) -> str:
    try:
        return template.format(**attributes)
    except KeyError as exc:
        raise DataError(f"template needs attribute {exc} not present in metadata") from exc


def template_fields(template: str) -> set:
    import string

    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


def _render_full(templates: TemplateSet, attrs: dict, rng: np.random.Generator) -> str:
    """Full description from a template covered by the record's attributes,
    or composed from per-attribute sentences when none fits."""
    candidates = [t for t in templates.full_responses if template_fields(t) <= set(attrs)]
    if candidates:
        return render(candidates[rng.integers(len(candidates))], attrs)
    parts = []
    for attr in sorted(attrs):
        forms = templates.attribute_responses.get(attr)
        if forms:
            parts.append(render(forms[rng.integers(len(forms))], attrs))
    if not parts:
        raise DataError(f"no templates cover attributes {sorted(attrs)}")
    return " ".join(parts)


def build_manifest(metadata, templates: TemplateSet, rng: np.random.Generator):
    """One full-description triplet plus one triplet per templated attribute
    for every metadata record. Template surfaces are chosen from rng."""
    metadata = list(metadata)
    if not metadata:
        raise DataError("empty metadata")
    triplets = []
    for i, record in enumerate(metadata):
        validate_metadata_record(record, lineno=i)
        attrs = dict(record["attributes"])
        common = dict(
            utterance_id=record["utterance_id"],
            audio_path=record["audio_path"],
            speaker_id=record["speaker_id"],
            attributes=attrs,
            duration_s=float(record["duration_s"]),
        )
        prompt = templates.full_prompts[rng.integers(len(templates.full_prompts))]
        triplets.append(
            Triplet(prompt=prompt, description=_render_full(templates, attrs, rng),
                    prompt_kind="full", **common)
        )
        for attr in sorted(attrs):
            if attr not in templates.attribute_prompts:
                continue
            prompts = templates.attribute_prompts[attr]
            responses = templates.attribute_responses[attr]
            prompt = prompts[rng.integers(len(prompts))]
            response = responses[rng.integers(len(responses))]
            triplets.append(
                Triplet(prompt=prompt, description=render(response, attrs), prompt_kind=attr, **common)
            )
    return triplets


def split_manifest(triplets, ratios, rng: np.random.Generator) -> dict:
    """Speaker-disjoint train/val/test split with the given speaker ratios."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    if len(ratios) != 3:
        raise DataError(f"expected 3 ratios (train, val, test), got {len(ratios)}")
    speakers = sorted({t.speaker_id for t in triplets})
    nonzero = sum(1 for r in ratios if r > 0)
    if len(speakers) < nonzero:
        raise DataError(f"{len(speakers)} speakers cannot fill {nonzero} non-empty splits")
    order = [speakers[i] for i in rng.permutation(len(speakers))]
    counts = [int(np.floor(r * len(speakers))) for r in ratios]
    # largest-remainder assignment; every nonzero-ratio split gets >= 1 speaker
    remainders = [r * len(speakers) - c for r, c in zip(ratios, counts)]
    while sum(counts) < len(speakers):
        counts[int(np.argmax(remainders))] += 1
        remainders[int(np.argmax(remainders))] = -1.0
    for i, r in enumerate(ratios):
        if r > 0 and counts[i] == 0:
            donor = int(np.argmax(counts))
            counts[donor] -= 1
            counts[i] += 1
    splits, start = {}, 0
    for name, count in zip(("train", "val", "test"), counts):
        chosen = set(order[start : start + count])
        splits[name] = [t for t in triplets if t.speaker_id in chosen]
        start += count
    return splits


def corpus_stats(triplets) -> CorpusStats:
    """Table-style corpus statistics over manifest rows.

    Tokenization is lowercase whitespace split so the numbers are auditable.
    Durations are counted per row.
    """
    triplets = list(triplets)
    if not triplets:
        raise DataError("empty manifest")
    tokens_per_caption = [len(t.description.lower().split()) for t in triplets]
    vocab = set()
    for t in triplets:
        vocab.update(t.description.lower().split())
    durations = np.array([t.duration_s for t in triplets], dtype=np.float64)
    return CorpusStats(
        vocab=len(vocab),
        median_len=float(np.median(tokens_per_caption)),
        max_len=int(max(tokens_per_caption)),
        samples=len(triplets),
        speakers=len({t.speaker_id for t in triplets}),
        avg_duration=float(durations.mean()),
        std_duration=float(durations.std()),
    )


def stats_report(split_stats: dict) -> str:
    lines = [
        f"{'split':<8}{'vocab':>8}{'median':>8}{'max':>6}{'samples':>9}{'speakers':>10}{'duration':>16}"
    ]
    for name, s in split_stats.items():
        lines.append(
            f"{name:<8}{s.vocab:>8}{s.median_len:>8.1f}{s.max_len:>6}"
            f"{s.samples:>9}{s.speakers:>10}{s.avg_duration:>10.2f} ± {s.std_duration:.2f}"
        )
    return "\n".join(lines) + "\n"


def write_manifest(path, triplets) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(asdict(t), sort_keys=True, ensure_ascii=False) + "\n")


def read_manifest(path):
    triplets = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid manifest record: {exc}") from exc
            try:
                triplets.append(Triplet(**raw))
            except TypeError as exc:
                raise DataError(f"{path}:{lineno}: bad manifest fields: {exc}") from exc
    return triplets


def read_metadata(path):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid metadata record: {exc}") from exc
            records.append(validate_metadata_record(record, lineno=lineno))
    return records


def write_metadata(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
