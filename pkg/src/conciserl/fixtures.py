"""Locations of the data files shipped inside the package."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

DATASETS = ("GSM8K", "MATH500", "MMLU-Pro-1k", "GPQA-main", "TheoremQA")


def data_path(*parts: str) -> Path:
    return Path(str(resources.files("conciserl.data").joinpath(*parts)))


def published_path(name: str) -> Path:
    """Path of a file under ``data/published`` (e.g. ``"conciserl.jsonl"``)."""
    return data_path("published", name)


def published_tables() -> dict:
    """Published accuracy / length tables, transcribed as JSON."""
    return json.loads(published_path("tables.json").read_text())
