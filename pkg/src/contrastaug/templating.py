"""Versioned prompt template assets.

Templates ship as plain text files under ``contrastaug/prompts`` and are
hashed so every run records exactly which prompt text produced its artifacts.
The marker strings below are the phrases the deterministic mock backend keys
its behavior on; ``load_template`` asserts each template still contains its
marker so template edits and mock dispatch cannot drift apart silently.
"""

from __future__ import annotations

import hashlib
from importlib import resources

MARK_TEXTUAL = "Target concept:"
MARK_CONTRAST = "Contrast concept:"
MARK_VISUAL = "List the key visual features"
MARK_MERGE = "Merge the following lists of visual features"
MARK_PROBE = "Identify the concept shown in the image."
MARK_EVAL = "Which option best matches the image?"
MARK_LOOK = "What to look for:"
MARK_SATISFACTION = 'Is the feature "'
MARK_GENERATION = "A photograph of"

_REQUIRED_MARKERS = {
    "textual_features": MARK_TEXTUAL,
    "contrast_block": MARK_CONTRAST,
    "visual_features": MARK_VISUAL,
    "merge_features": MARK_MERGE,
    "probe_question": MARK_PROBE,
    "eval_question": MARK_EVAL,
    "feature_guide": MARK_LOOK,
    "satisfaction": MARK_SATISFACTION,
    "generation": MARK_GENERATION,
    "finetune_instruction": None,
}


def load_template(name: str) -> str:
    if name not in _REQUIRED_MARKERS:
        raise KeyError(f"unknown template {name!r}")
    text = resources.files("contrastaug.prompts").joinpath(f"{name}.txt").read_text("utf-8")
    marker = _REQUIRED_MARKERS[name]
    if marker is not None and marker not in text:
        raise ValueError(f"template {name!r} lost its dispatch marker {marker!r}")
    return text


def template_hash(name: str) -> str:
    raw = resources.files("contrastaug.prompts").joinpath(f"{name}.txt").read_bytes()
    return hashlib.sha256(raw).hexdigest()[:16]
