"""Shared fixtures: the committed 3-record corpus and its sidecar."""

from __future__ import annotations

import json
import pathlib

import pytest

from loctok.engine import annotated_image_from_record, load_sidecar

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixture_sidecar():
    return load_sidecar((FIXTURES / "corpus.conllu").read_text(encoding="utf-8"))


@pytest.fixture(scope="session")
def fixture_corpus(fixture_sidecar):
    records = []
    for line in (FIXTURES / "corpus.jsonl").read_text(encoding="utf-8").splitlines():
        records.append(annotated_image_from_record(json.loads(line), fixture_sidecar))
    return records
