"""Acceptance gate: ten standalone checks, one per shipping criterion.

Each test is self-contained (own oracles, own seeded randomness, pinned
tolerances and scales) so a verbose run reads as a ten-line scorecard. The
module suites cover the same ground more finely; this file is the contract.
"""

import json
import math
import random
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from _strategies import random_annotated_image, random_tree
from loctok.cli import main
from loctok.codec import (
    RESPONSE_FAMILY,
    GroundedPhrase,
    GroundedTextResponse,
    LabeledRegion,
    LabeledRegionsResponse,
    LocToken,
    MaskResponse,
    RegionsResponse,
    Task,
    TextResponse,
    TokenStream,
    lex,
    parse_response,
    serialize_response,
)
from loctok.engine import (
    AnnotatedImage,
    CandidateRole,
    FilterConfig,
    RegionCandidate,
    RegionTextPair,
    annotated_image_from_record,
    annotated_image_to_record,
    dumps_record,
    filter_record,
    load_sidecar,
    merge_annotations,
    region_class_key,
)
from loctok.errors import ParseError
from loctok.geometry import (
    BBox,
    QuantizedRegion,
    RegionKind,
    ScoredBox,
    dequantize_coord,
    iou,
    nms,
    quantize_coord,
)
from loctok.linguistics import ParsedSentence, ParsedToken, token_complexity
from loctok.scoring import StepDistribution, sequence_nll

FIXTURES = Path(__file__).parent / "fixtures"
CORPUS = str(FIXTURES / "corpus.jsonl")
SIDECAR = str(FIXTURES / "corpus.conllu")
CODEC_RECORDS = FIXTURES / "codec_records.jsonl"


def load_fixture_corpus() -> list[AnnotatedImage]:
    sidecar = load_sidecar(Path(SIDECAR).read_text(encoding="utf-8"))
    return [
        annotated_image_from_record(json.loads(line), sidecar)
        for line in Path(CORPUS).read_text(encoding="utf-8").splitlines()
    ]


def test_criterion_01_quantization_round_trip():
    """10,000 random (coordinate, extent) pairs: bin identity and error <= extent/1000, under 1 s."""
    rng = random.Random(101)
    pairs = [
        (rng.uniform(0.0, 1.0) * extent, extent)
        for extent in (rng.uniform(1.0, 4096.0) for _ in range(10_000))
    ]
    started = time.perf_counter()
    for value, extent in pairs:
        b = quantize_coord(value, extent)
        center = dequantize_coord(b, extent)
        assert quantize_coord(center, extent) == b
        assert abs(center - value) <= extent / 1000.0
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"10k round trips took {elapsed:.3f}s"


_WORDS = ("cat", "dog", "red", "sign", "mat", "the", "on", "stop", "two", "tree")


def _random_response(rng: random.Random, task: Task):
    def label():
        return " ".join(rng.choice(_WORDS) for _ in range(rng.randrange(1, 4)))

    def qbox():
        return QuantizedRegion(RegionKind.BOX, tuple(rng.randrange(1000) for _ in range(4)))

    def qquad():
        return QuantizedRegion(RegionKind.QUAD, tuple(rng.randrange(1000) for _ in range(8)))

    family = RESPONSE_FAMILY[task].value
    if family == "text":
        return TextResponse(" ".join(rng.choice(_WORDS) for _ in range(rng.randrange(7))))
    if family == "regions":
        return RegionsResponse(tuple(qbox() for _ in range(rng.randrange(5))))
    if family == "labeled_box":
        return LabeledRegionsResponse(
            tuple(LabeledRegion(label(), qbox()) for _ in range(rng.randrange(5)))
        )
    if family == "labeled_quad":
        return LabeledRegionsResponse(
            tuple(LabeledRegion(label(), qquad()) for _ in range(rng.randrange(4)))
        )
    if family == "grounded":
        return GroundedTextResponse(
            tuple(
                GroundedPhrase(label(), tuple(qbox() for _ in range(rng.randrange(1, 4))))
                for _ in range(rng.randrange(4))
            )
        )
    n = rng.randrange(3, 8)
    return MaskResponse(
        QuantizedRegion(RegionKind.POLYGON, tuple(rng.randrange(1000) for _ in range(2 * n)))
    )


def test_criterion_02_codec_law():
    """1,000 random responses per task round-trip exactly; one-token mutations always fail to parse."""
    rng = random.Random(202)
    for task in sorted(Task, key=lambda t: t.value):
        for _ in range(1_000):
            response = _random_response(rng, task)
            stream = serialize_response(response, task)
            assert parse_response(stream, task) == response
            assert parse_response(lex(stream.render()), task) == response

            loc_positions = [
                i for i, item in enumerate(stream.items) if isinstance(item, LocToken)
            ]
            if loc_positions:
                drop = rng.choice(loc_positions)
                mutated = TokenStream(stream.items[:drop] + stream.items[drop + 1 :])
            else:
                mutated = TokenStream(stream.items + (LocToken(7),))
            with pytest.raises(ParseError):
                parse_response(mutated, task)


def _oracle_iou(a: BBox, b: BBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = (a.x1 - a.x0) * (a.y1 - a.y0) + (b.x1 - b.x0) * (b.y1 - b.y0) - inter
    return inter / union if union > 0.0 else 0.0


def _oracle_nms(boxes: list[ScoredBox], threshold: float, class_aware: bool) -> list[int]:
    """Quadratic greedy suppression straight from the rule text."""
    order = sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, i))
    kept: list[int] = []
    for i in order:
        for k in kept:
            if class_aware and boxes[k].label != boxes[i].label:
                continue
            if _oracle_iou(boxes[k].box, boxes[i].box) >= threshold:
                break
        else:
            kept.append(i)
    return kept


def _random_box(rng: random.Random, extent: float = 100.0) -> BBox:
    xs = sorted(rng.uniform(0.0, extent) for _ in range(2))
    ys = sorted(rng.uniform(0.0, extent) for _ in range(2))
    return BBox(xs[0], ys[0], xs[1], ys[1])


def test_criterion_03_nms_matches_oracle():
    """500 random box sets (n <= 50): greedy NMS equals the brute-force reference exactly."""
    rng = random.Random(303)
    for _ in range(500):
        boxes = [
            ScoredBox(_random_box(rng), rng.random(), rng.choice(("a", "b", "c", None)))
            for _ in range(rng.randrange(51))
        ]
        threshold = rng.random()
        class_aware = rng.random() < 0.5
        expected = [boxes[i] for i in _oracle_nms(boxes, threshold, class_aware)]
        assert nms(boxes, threshold, class_aware) == expected


def test_criterion_04_iou_exactness():
    """Unit-overlap fixture equals 1/7 within 1e-12; symmetry and self-IoU hold on 10,000 pairs."""
    assert abs(iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) - 1.0 / 7.0) <= 1e-12
    rng = random.Random(404)
    for _ in range(10_000):
        a, b = _random_box(rng), _random_box(rng)
        assert iou(a, b) == iou(b, a)
        assert 0.0 <= iou(a, b) <= 1.0
    for _ in range(100):
        box = _random_box(rng)
        if box.area > 0.0:
            assert iou(box, box) == 1.0


def test_criterion_05_complexity_handshake():
    """On 1,000 random trees (<= 30 tokens) complexity sums to twice the non-root edges."""
    chain = ParsedSentence(
        (
            ParsedToken(1, "green", "ADJ", 2, "amod"),
            ParsedToken(2, "apples", "NOUN", 3, "obj"),
            ParsedToken(3, "fall", "VERB", 0, "root"),
        )
    )
    assert [token_complexity(chain, t.index) for t in chain.tokens] == [1, 2, 1]

    rng = random.Random(505)
    for _ in range(1_000):
        sentence = random_tree(rng, rng.randrange(1, 31))
        total = sum(token_complexity(sentence, t.index) for t in sentence.tokens)
        non_root_edges = sum(1 for t in sentence.tokens if t.head != 0)
        assert total == 2 * non_root_edges


def test_criterion_06_sequence_nll_closed_forms():
    """Uniform steps score len*ln(V) within 1e-9, certain steps score exactly 0, splits add up."""
    rng = random.Random(606)
    for _ in range(200):
        vocab = rng.randrange(2, 1000)
        n = rng.randrange(1, 40)
        uniform = [StepDistribution(np.full(vocab, 1.0 / vocab)) for _ in range(n)]
        target = [rng.randrange(vocab) for _ in range(n)]
        assert abs(sequence_nll(uniform, target) - n * math.log(vocab)) <= 1e-9

        certain = []
        for token_id in target:
            probs = np.zeros(vocab)
            probs[token_id] = 1.0
            certain.append(StepDistribution(probs))
        assert sequence_nll(certain, target) == 0.0

        steps = []
        for _ in range(n):
            raw = np.array([rng.random() + 1e-3 for _ in range(vocab)])
            steps.append(StepDistribution(raw / raw.sum()))
        split = rng.randrange(n + 1)
        whole = sequence_nll(steps, target)
        parts = sequence_nll(steps[:split], target[:split]) + sequence_nll(
            steps[split:], target[split:]
        )
        assert abs(whole - parts) <= 1e-9


def test_criterion_07_filter_laws(tmp_path, capsys):
    """Filtering is idempotent and per-item gates are monotone on 500 random records;
    the fixture corpus reproduces the hand-tallied golden summary through the CLI.

    Monotonicity is asserted for the per-item gates only: the suppression stage
    is order-coupled, so tightening its overlap threshold can legally keep more
    boxes. The per-gate counterexamples live in the engine suite.
    """
    loose = FilterConfig()
    strict = FilterConfig(
        max_objects=2,
        min_object_complexity=2.0,
        min_action_complexity=2.0,
        phrase_confidence_threshold=0.6,
    )
    rng = random.Random(707)
    for i in range(500):
        img = random_annotated_image(rng, f"rec-{i}")
        once, _ = filter_record(img, loose)
        again, counts = filter_record(once, loose)
        assert again == once
        assert counts.as_dict()["texts_kept"] == len(once.texts)

        harder, _ = filter_record(img, strict)
        assert set(harder.texts) <= set(once.texts)
        assert len(harder.triplets) <= len(once.triplets)

    summary = tmp_path / "summary.json"
    code = main([
        "filter", "--input", CORPUS, "--sidecar", SIDECAR,
        "--output", str(tmp_path / "out.jsonl"), "--summary", str(summary),
    ])
    capsys.readouterr()
    assert code == 0
    golden = json.loads((FIXTURES / "filter_summary_golden.json").read_text())
    assert json.loads(summary.read_text()) == golden


def test_criterion_08_merge_laws():
    """Merging an empty refinement into a filtered record is the identity,
    double-merge equals single-merge, and an equal-confidence rival loses to
    the original pair. Merging consumes filter output, so the laws are stated
    on filtered records."""
    config = FilterConfig()
    corpus = [filter_record(img, config)[0] for img in load_fixture_corpus()]

    for img in corpus:
        empty = AnnotatedImage(img.id, img.size)
        assert merge_annotations(img, empty, config) == img

    img_a = corpus[0]
    refined = AnnotatedImage(
        img_a.id,
        img_a.size,
        texts=(replace(img_a.texts[0], parse=None),),
        region_texts=(
            RegionTextPair(
                region=BBox(500.0, 500.0, 700.0, 700.0),
                texts=(RegionCandidate(CandidateRole.PHRASE, "bike"),),
                confidence=0.85,
                selected=0,
            ),
        ),
    )
    once = merge_annotations(img_a, refined, config)
    assert merge_annotations(once, refined, config) == once
    assert any(p.confidence == 0.85 for p in once.region_texts)

    img_b = corpus[1]
    original_pair = img_b.region_texts[0]
    rival = RegionTextPair(
        region=original_pair.region,
        texts=(RegionCandidate(CandidateRole.PHRASE, region_class_key(original_pair)),),
        confidence=original_pair.confidence,
        selected=0,
    )
    merged = merge_annotations(
        img_b, AnnotatedImage(img_b.id, img_b.size, region_texts=(rival,)), config
    )
    assert original_pair in merged.region_texts
    assert rival not in merged.region_texts


def test_criterion_09_stats_determinism(tmp_path, capsys):
    """Synthetic 10,000-record corpus: stats bytes identical at 1 and 8 jobs in under 30 s,
    histograms conserve observations, and the fixture corpus matches its golden JSON."""
    rng = random.Random(909)
    corpus = tmp_path / "synthetic.jsonl"
    corpus.write_text(
        "".join(
            dumps_record(annotated_image_to_record(random_annotated_image(rng, f"syn-{i}")))
            + "\n"
            for i in range(10_000)
        ),
        encoding="utf-8",
    )

    started = time.perf_counter()
    outputs = []
    for jobs in ("1", "8"):
        out = tmp_path / f"stats_j{jobs}.json"
        code = main([
            "stats", "--input", str(corpus), "--output", str(out), "--jobs", jobs,
        ])
        capsys.readouterr()
        assert code == 0
        outputs.append(out.read_bytes())
    elapsed = time.perf_counter() - started
    assert outputs[0] == outputs[1]
    assert elapsed < 30.0, f"two stats passes took {elapsed:.1f}s"

    doc = json.loads(outputs[0])
    assert doc["records"] == 10_000
    for source in ("region_text", "triplets"):
        spatial = doc["spatial"][source]
        boxes = spatial["boxes"]
        assert sum(spatial["area"]["counts"]) == boxes
        assert sum(sum(row) for row in spatial["center_heatmap"]["counts"]) == boxes
        assert sum(spatial["aspect"]["counts"]) == boxes - spatial["aspect_skipped_zero_extent"]

    fixture_out = tmp_path / "fixture_stats.json"
    code = main([
        "stats", "--input", CORPUS, "--sidecar", SIDECAR,
        "--heatmap-resolution", "8", "--output", str(fixture_out),
    ])
    capsys.readouterr()
    assert code == 0
    golden = json.loads((FIXTURES / "stats_golden.json").read_text())
    golden["skipped_records"] = 0
    assert json.loads(fixture_out.read_text()) == golden


def test_criterion_10_end_to_end_round_trip(tmp_path, capsys):
    """decode(encode(fixture)) is bit-exact for all 12 tasks, with the documented prompts."""
    tokens = tmp_path / "tokens.jsonl"
    back = tmp_path / "back.jsonl"
    assert main(["encode", "--input", str(CODEC_RECORDS), "--output", str(tokens)]) == 0
    assert main(["decode", "--input", str(tokens), "--output", str(back)]) == 0
    capsys.readouterr()
    assert back.read_bytes() == CODEC_RECORDS.read_bytes()

    token_records = [json.loads(l) for l in tokens.read_text().splitlines()]
    assert {r["task"] for r in token_records} == {t.value for t in Task}
    prompts = {r["task"]: r["prompt"] for r in token_records}
    assert prompts["phrase_grounding"].startswith("Locate the phrases in the caption:")
    assert prompts["text_detection_recognition"] == (
        "What is the text in the image, with regions?"
    )
