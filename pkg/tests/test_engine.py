"""Record schema, filters, candidate generation, and merge laws."""

from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _strategies import random_annotated_image
from conftest import FIXTURES
from loctok.engine import (
    AnnotatedImage,
    CandidateRole,
    DEFAULT_BLACKLIST,
    FilterConfig,
    FilterCounts,
    Granularity,
    PhraseRegionTriplet,
    PhraseSpan,
    RegionCandidate,
    RegionTextPair,
    TextAnnotation,
    TextSource,
    TripletRegion,
    annotated_image_from_record,
    annotated_image_to_record,
    dumps_record,
    filter_record,
    filter_regions,
    filter_regions_detailed,
    filter_text,
    filter_triplets,
    generate_region_text_candidates,
    merge_annotations,
    region_class_key,
)
from loctok.errors import MergeError, SchemaError
from loctok.geometry import BBox, ImageSize, QuadBox
from loctok.linguistics import parse_conllu
from dataclasses import replace

CFG = FilterConfig()


def parse_one(block: str):
    return parse_conllu(block)[0]


def text_ann(text: str, block: str, granularity=Granularity.BRIEF,
             source=TextSource.SPECIALIST) -> TextAnnotation:
    return TextAnnotation(granularity, text, source, parse=parse_one(block))


def pair(box, conf, label, selected=0, role=CandidateRole.PHRASE) -> RegionTextPair:
    return RegionTextPair(
        region=box, texts=(RegionCandidate(role, label),), confidence=conf,
        selected=selected,
    )


def triplet(ref, start, end, surface, pconf, box_confs, size=1000.0):
    return PhraseRegionTriplet(
        text_ref=ref,
        phrase=PhraseSpan(start, end, surface),
        regions=tuple(
            TripletRegion(BBox(0, 0, min(10 * (i + 1), size), min(10 * (i + 1), size)), c)
            for i, c in enumerate(box_confs)
        ),
        phrase_confidence=pconf,
    )


class TestSchema:
    def test_fixture_round_trip(self, fixture_corpus, fixture_sidecar):
        for img in fixture_corpus:
            again = annotated_image_from_record(
                annotated_image_to_record(img), fixture_sidecar
            )
            assert again == img

    def test_fixture_lines_are_canonical(self, fixture_corpus):
        lines = (FIXTURES / "corpus.jsonl").read_text(encoding="utf-8").splitlines()
        for line, img in zip(lines, fixture_corpus):
            assert dumps_record(annotated_image_to_record(img)) == line

    def test_schema_version_required(self):
        with pytest.raises(SchemaError, match="fld_schema"):
            annotated_image_from_record({"id": "x", "size": {"width": 1, "height": 1}})

    def test_parse_and_ref_are_exclusive(self):
        obj = {
            "fld_schema": 1, "id": "x", "size": {"width": 10.0, "height": 10.0},
            "texts": [{"granularity": "brief", "text": "hi", "source": "human",
                       "parse": "1\thi\t_\tINTJ\t_\t_\t0\troot\t_\t_\n",
                       "parse_ref": "s1"}],
        }
        with pytest.raises(SchemaError, match="both"):
            annotated_image_from_record(obj)

    def test_missing_sidecar_ref(self):
        obj = {
            "fld_schema": 1, "id": "x", "size": {"width": 10.0, "height": 10.0},
            "texts": [{"granularity": "brief", "text": "hi", "source": "human",
                       "parse_ref": "nope"}],
        }
        with pytest.raises(SchemaError, match="nope"):
            annotated_image_from_record(obj, sidecar={})
        # Without a sidecar the ref is kept unresolved.
        img = annotated_image_from_record(obj)
        assert img.texts[0].parse is None and img.texts[0].parse_ref == "nope"

    def test_bad_enum(self):
        obj = {
            "fld_schema": 1, "id": "x", "size": {"width": 10.0, "height": 10.0},
            "texts": [{"granularity": "tiny", "text": "hi", "source": "human"}],
        }
        with pytest.raises(SchemaError, match="tiny"):
            annotated_image_from_record(obj)

    def test_region_arity(self):
        obj = {
            "fld_schema": 1, "id": "x", "size": {"width": 10.0, "height": 10.0},
            "region_texts": [{"region": [1.0, 2.0, 3.0], "confidence": 0.5,
                              "texts": [{"role": "phrase", "text": "a"}]}],
        }
        with pytest.raises(SchemaError, match="4 .box. or 8"):
            annotated_image_from_record(obj)

    def test_validator_text_ref(self):
        with pytest.raises(SchemaError, match="text_ref"):
            AnnotatedImage(
                "x", ImageSize(10, 10), (),
                triplets=(triplet(0, 0, 2, "hi", 0.5, [0.5], size=10.0),),
            )

    def test_validator_span_surface(self):
        texts = (TextAnnotation(Granularity.BRIEF, "a cat", TextSource.HUMAN),)
        with pytest.raises(SchemaError, match="does not match"):
            AnnotatedImage(
                "x", ImageSize(10, 10), texts,
                triplets=(triplet(0, 0, 3, "dog", 0.5, [0.5], size=10.0),),
            )

    def test_validator_bounds(self):
        with pytest.raises(SchemaError, match="outside image"):
            AnnotatedImage(
                "x", ImageSize(10, 10),
                region_texts=(pair(BBox(0, 0, 11, 5), 0.5, "a"),),
            )

    def test_selected_range(self):
        with pytest.raises(SchemaError, match="selected"):
            RegionTextPair(
                region=BBox(0, 0, 1, 1),
                texts=(RegionCandidate(CandidateRole.PHRASE, "a"),),
                confidence=0.5,
                selected=1,
            )

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40)
    def test_random_records_round_trip(self, seed):
        img = random_annotated_image(random.Random(seed), f"r{seed}")
        obj = json.loads(dumps_record(annotated_image_to_record(img)))
        assert annotated_image_from_record(obj) == img


class TestFilterText:
    def test_keep(self, fixture_corpus):
        assert filter_text(fixture_corpus[0].texts[0], CFG).keep

    def test_low_object_complexity(self, fixture_corpus):
        decision = filter_text(fixture_corpus[1].texts[0], CFG)
        assert not decision.keep and decision.reason == "low_object_complexity"

    def test_vacuous_gates(self, fixture_corpus):
        # "it is nice here": no NOUN, no VERB (the copula is AUX).
        assert filter_text(fixture_corpus[1].texts[1], CFG).keep

    def test_excessive_objects(self):
        ann = text_ann("cats see dogs", (
            "1\tcats\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
            "2\tsee\t_\tVERB\t_\t_\t0\troot\t_\t_\n"
            "3\tdogs\t_\tNOUN\t_\t_\t2\tobj\t_\t_\n"
        ))
        decision = filter_text(ann, FilterConfig(max_objects=1))
        assert not decision.keep and decision.reason == "excessive_objects"
        assert filter_text(ann, FilterConfig(max_objects=None)).keep

    def test_reason_precedence(self):
        # Three nouns (mean degree 5/3) and a leaf verb (degree 1): under the
        # config below every gate fires, and they report in a fixed order.
        ann = text_ann("cats dogs birds sleep", (
            "1\tcats\t_\tNOUN\t_\t_\t0\troot\t_\t_\n"
            "2\tdogs\t_\tNOUN\t_\t_\t1\tconj\t_\t_\n"
            "3\tbirds\t_\tNOUN\t_\t_\t1\tconj\t_\t_\n"
            "4\tsleep\t_\tVERB\t_\t_\t1\tconj\t_\t_\n"
        ))
        strict = dict(min_object_complexity=2.0, min_action_complexity=2.0)
        assert filter_text(ann, FilterConfig(max_objects=2, **strict)).reason \
            == "excessive_objects"
        assert filter_text(ann, FilterConfig(**strict)).reason \
            == "low_object_complexity"
        assert filter_text(ann, FilterConfig(min_action_complexity=2.0)).reason \
            == "low_action_complexity"

    def test_config_validation(self):
        with pytest.raises(ValueError):
            FilterConfig(max_objects=0)
        with pytest.raises(ValueError):
            FilterConfig(box_confidence_threshold=1.5)

    def test_low_action_complexity(self):
        ann = text_ann("runs", "1\truns\t_\tVERB\t_\t_\t0\troot\t_\t_\n")
        decision = filter_text(ann, CFG)
        assert not decision.keep and decision.reason == "low_action_complexity"

    def test_mean_equal_to_threshold_passes(self):
        # Chain noun-verb: noun degree 1, mean exactly 1.0.
        ann = text_ann("dog runs", (
            "1\tdog\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_\n"
            "2\truns\t_\tVERB\t_\t_\t0\troot\t_\t_\n"
        ))
        assert filter_text(ann, CFG).keep

    def test_missing_parse(self):
        ann = TextAnnotation(Granularity.BRIEF, "hi", TextSource.HUMAN)
        with pytest.raises(ValueError, match="parse"):
            filter_text(ann, CFG)


class TestFilterRegions:
    def test_confidence_at_threshold_survives(self):
        pairs = [pair(BBox(0, 0, 10, 10), 0.2, "a")]
        assert filter_regions(pairs, CFG) == pairs

    def test_below_threshold_drops(self):
        kept, low, nms = filter_regions_detailed(
            [pair(BBox(0, 0, 10, 10), 0.19999, "a")], CFG
        )
        assert kept == [] and low == 1 and nms == 0

    def test_descending_confidence_output(self):
        pairs = [
            pair(BBox(0, 0, 10, 10), 0.3, "a"),
            pair(BBox(50, 50, 60, 60), 0.9, "b"),
            pair(BBox(100, 100, 110, 110), 0.6, "c"),
        ]
        assert [p.confidence for p in filter_regions(pairs, CFG)] == [0.9, 0.6, 0.3]

    def test_tie_prefers_earlier(self):
        a = pair(BBox(0, 0, 10, 10), 0.5, "x")
        b = RegionTextPair(
            region=BBox(0, 0, 10, 10),
            texts=(RegionCandidate(CandidateRole.PHRASE, "x"),
                   RegionCandidate(CandidateRole.BRIEF, "the x")),
            confidence=0.5,
        )
        assert filter_regions([a, b], CFG) == [a]
        assert filter_regions([b, a], CFG) == [b]

    def test_class_aware_by_selected_text(self):
        same_box = BBox(0, 0, 10, 10)
        kept = filter_regions(
            [pair(same_box, 0.9, "cat"), pair(same_box, 0.8, "dog")], CFG
        )
        assert len(kept) == 2
        kept = filter_regions(
            [pair(same_box, 0.9, "cat"), pair(same_box, 0.8, "cat")], CFG
        )
        assert len(kept) == 1

    def test_class_unaware_config(self):
        same_box = BBox(0, 0, 10, 10)
        cfg = FilterConfig(nms_class_aware=False)
        kept = filter_regions(
            [pair(same_box, 0.9, "cat"), pair(same_box, 0.8, "dog")], cfg
        )
        assert len(kept) == 1

    def test_quad_competes_through_hull(self):
        quad = QuadBox(((0, 0), (10, 0), (10, 10), (0, 10)))
        kept = filter_regions(
            [pair(quad, 0.9, "q"), pair(BBox(0, 0, 10, 10), 0.8, "q")], CFG
        )
        assert len(kept) == 1 and kept[0].region == quad

    def test_class_key_fallbacks(self):
        p = RegionTextPair(
            region=BBox(0, 0, 1, 1),
            texts=(RegionCandidate(CandidateRole.BRIEF, "a brief"),
                   RegionCandidate(CandidateRole.PHRASE, "phrase")),
            confidence=0.5,
        )
        assert region_class_key(p) == "phrase"
        assert region_class_key(replace(p, selected=0)) == "a brief"
        no_phrase = RegionTextPair(
            region=BBox(0, 0, 1, 1),
            texts=(RegionCandidate(CandidateRole.BRIEF, "only brief"),),
            confidence=0.5,
        )
        assert region_class_key(no_phrase) == "only brief"


class TestFilterTriplets:
    def test_blacklist_casefolds(self):
        kept, counts = filter_triplets([triplet(0, 0, 2, "It", 0.9, [0.9])], CFG)
        assert kept == [] and counts.blacklisted == 1

    def test_phrase_threshold(self):
        kept, counts = filter_triplets([triplet(0, 0, 3, "dog", 0.1, [0.9])], CFG)
        assert kept == [] and counts.low_phrase_confidence == 1

    def test_box_screen_and_no_boxes_left(self):
        t_mixed = triplet(0, 0, 3, "dog", 0.9, [0.1, 0.9])
        t_dead = triplet(0, 0, 3, "cat", 0.9, [0.05])
        kept, counts = filter_triplets([t_mixed, t_dead], CFG)
        assert len(kept) == 1 and len(kept[0].regions) == 1
        assert counts.no_boxes_left == 1
        assert counts.boxes_dropped == 2

    def test_custom_blacklist(self):
        cfg = FilterConfig(blacklist=frozenset({"Dog"}))
        kept, counts = filter_triplets([triplet(0, 0, 3, "dog", 0.9, [0.9])], cfg)
        assert kept == [] and counts.blacklisted == 1

    def test_default_blacklist_contents(self):
        for word in ("it", "this", "something", "no one"):
            assert word in DEFAULT_BLACKLIST


class TestFilterRecord:
    def test_fixture_tallies(self, fixture_corpus):
        golden = json.loads(
            (FIXTURES / "filter_summary_golden.json").read_text(encoding="utf-8")
        )
        total = FilterCounts()
        outputs = []
        for img in fixture_corpus:
            out, counts = filter_record(img, CFG)
            outputs.append(out)
            total.update(counts)
        assert total.as_dict() == golden["counts"]

        a, b, c = outputs
        assert [t.text for t in a.texts] == [
            "a red car parked outside", "the red car sits outside the old house",
        ]
        # Descending confidence: the quad (0.95) ahead of the kept box (0.9).
        assert [p.confidence for p in a.region_texts] == [0.95, 0.9]
        assert len(a.triplets) == 1

        assert [t.text for t in b.texts] == ["it is nice here"]
        assert len(b.region_texts) == 1
        # The surviving triplet was re-pointed at the surviving text.
        assert len(b.triplets) == 1
        assert b.triplets[0].text_ref == 0
        assert b.triplets[0].phrase.text == "is"
        assert [r.confidence for r in b.triplets[0].regions] == [0.7]

        assert len(c.texts) == 1 and len(c.region_texts) == 1 and len(c.triplets) == 1

    def test_unassessed_texts_pass_through(self):
        img = AnnotatedImage(
            "x", ImageSize(10, 10),
            texts=(TextAnnotation(Granularity.BRIEF, "no parse here", TextSource.HUMAN),),
        )
        out, counts = filter_record(img, CFG)
        assert out.texts == img.texts
        assert counts.texts_unassessed == 1 and counts.texts_kept == 1

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_idempotent(self, seed):
        img = random_annotated_image(random.Random(seed), f"r{seed}")
        once, _ = filter_record(img, CFG)
        twice, counts = filter_record(once, CFG)
        assert twice == once
        # The second pass must have nothing left to drop.
        dropped = sum(
            v for k, v in counts.as_dict().items()
            if k not in ("records", "texts_kept", "regions_kept", "triplets_kept",
                         "texts_unassessed")
        )
        assert dropped == 0

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_monotone_in_per_item_gates(self, seed):
        # Tightening the per-item gates never keeps more texts or triplets.
        # No such claim holds for the NMS threshold: suppression is a greedy
        # chain, so loosening it can admit a box that then suppresses others.
        img = random_annotated_image(random.Random(seed), f"r{seed}")
        loose, _ = filter_record(img, CFG)
        strict_cfg = FilterConfig(
            max_objects=2,
            min_object_complexity=2.0,
            min_action_complexity=2.0,
            phrase_confidence_threshold=0.6,
        )
        strict, _ = filter_record(img, strict_cfg)
        assert set(t.text for t in strict.texts) <= set(t.text for t in loose.texts)
        assert len(strict.texts) <= len(loose.texts)
        assert len(strict.triplets) <= len(loose.triplets)


class TestCandidates:
    def test_roles_and_order(self, fixture_corpus):
        parse = fixture_corpus[0].texts[0].parse  # "a red car parked outside"
        cands = generate_region_text_candidates("car", "a red car parked outside", parse)
        assert [(c.role.value, c.text) for c in cands] == [
            ("phrase", "car"),
            ("brief", "a red car parked outside"),
            ("noun_chunk", "a red car"),
        ]

    def test_case_insensitive_dedupe(self):
        cands = generate_region_text_candidates("Car", "car", None)
        assert [(c.role.value, c.text) for c in cands] == [("phrase", "Car")]

    def test_all_optional(self):
        assert generate_region_text_candidates(None, None, None) == []


def empty_like(img: AnnotatedImage) -> AnnotatedImage:
    return AnnotatedImage(img.id, img.size)


class TestMerge:
    def test_id_and_size_must_match(self, fixture_corpus):
        a = fixture_corpus[0]
        with pytest.raises(MergeError, match="id"):
            merge_annotations(a, empty_like(fixture_corpus[1]), CFG)
        resized = AnnotatedImage(a.id, ImageSize(10, 10))
        with pytest.raises(MergeError, match="size"):
            merge_annotations(a, resized, CFG)

    def test_empty_refined_is_filtered_identity(self, fixture_corpus):
        for img in fixture_corpus:
            merged = merge_annotations(img, empty_like(img), CFG)
            assert merged.texts == img.texts
            assert merged.triplets == img.triplets
            assert merged.region_texts == tuple(filter_regions(img.region_texts, CFG))

    def test_refined_texts_are_retagged_and_collapsed(self, fixture_corpus):
        img = fixture_corpus[2]
        refined = AnnotatedImage(
            img.id, img.size,
            texts=(
                TextAnnotation(Granularity.BRIEF, "first try", TextSource.SPECIALIST),
                TextAnnotation(Granularity.BRIEF, "second try", TextSource.SPECIALIST),
            ),
        )
        merged = merge_annotations(img, refined, CFG)
        assert [t.text for t in merged.texts] == [
            "the boy quickly eats a green apple", "second try",
        ]
        assert merged.texts[1].source is TextSource.REFINED

    def test_refined_text_replaces_in_place(self, fixture_corpus):
        img = fixture_corpus[2]
        r1 = AnnotatedImage(
            img.id, img.size,
            texts=(TextAnnotation(Granularity.BRIEF, "v1", TextSource.SPECIALIST),),
        )
        r2 = AnnotatedImage(
            img.id, img.size,
            texts=(TextAnnotation(Granularity.BRIEF, "v2", TextSource.SPECIALIST),),
        )
        step1 = merge_annotations(img, r1, CFG)
        step2 = merge_annotations(step1, r2, CFG)
        assert [t.text for t in step2.texts] == [
            "the boy quickly eats a green apple", "v2",
        ]
        assert len(step2.texts) == len(step1.texts)

    def test_double_merge_equals_single(self, fixture_corpus):
        img = fixture_corpus[0]
        # A full refinement pass: the caption is kept verbatim (so the
        # triplet's text_ref lines up), its grounding boxes are re-predicted,
        # and a new region is found.
        refined = AnnotatedImage(
            img.id, img.size,
            texts=(TextAnnotation(Granularity.BRIEF, img.texts[0].text,
                                  TextSource.SPECIALIST),),
            region_texts=(pair(BBox(500, 500, 700, 700), 0.85, "bike"),),
            triplets=(
                PhraseRegionTriplet(
                    text_ref=0,
                    phrase=PhraseSpan(0, 9, "a red car"),
                    regions=(TripletRegion(BBox(90, 90, 310, 310), 0.95),),
                    phrase_confidence=0.95,
                ),
            ),
        )
        once = merge_annotations(img, refined, CFG)
        twice = merge_annotations(once, refined, CFG)
        assert twice == once
        # The colliding key replaced the original grounding in place.
        assert once.triplets[0].phrase_confidence == 0.95
        assert len(once.triplets) == 1
        # Kept caption appended as a refined copy; originals kept their slots.
        assert [t.source.value for t in once.texts] == [
            "specialist", "specialist", "refined",
        ]
        assert [p.confidence for p in once.region_texts] == [0.95, 0.9, 0.85]

    def test_confidence_tie_keeps_original(self, fixture_corpus):
        img = fixture_corpus[1]
        original_pair = img.region_texts[0]
        contender = RegionTextPair(
            region=original_pair.region,
            texts=(RegionCandidate(CandidateRole.PHRASE, "a small dog"),),
            confidence=original_pair.confidence,
        )
        refined = AnnotatedImage(img.id, img.size, region_texts=(contender,))
        merged = merge_annotations(img, refined, CFG)
        # Same box, same class key ("a small dog"), same confidence: the
        # original wins the tie and the refined pair is suppressed.
        assert merged.region_texts == (original_pair,)

    def test_triplet_replaced_in_place(self, fixture_corpus):
        img = fixture_corpus[1]
        target = img.triplets[2]  # ("is", [3, 5)) on text 1
        better = replace(
            target,
            regions=(TripletRegion(BBox(1, 1, 2, 2), 0.99),),
            phrase_confidence=0.99,
        )
        # The refined record re-states the texts it grounds so its own
        # text_ref is valid; ref indices line up with the original's.
        refined = AnnotatedImage(
            img.id, img.size,
            texts=tuple(replace(t, parse=None) for t in img.texts),
            triplets=(better,),
        )
        merged = merge_annotations(img, refined, CFG)
        assert merged.triplets[2] == better
        assert len(merged.triplets) == len(img.triplets)
        # Original texts kept their slots; both refined briefs collapsed to
        # the last one, appended once.
        assert merged.texts[:2] == img.texts
        assert len(merged.texts) == 3
        assert merged.texts[2].source is TextSource.REFINED

    def test_novel_triplet_appends(self, fixture_corpus):
        img = fixture_corpus[0]
        novel = PhraseRegionTriplet(
            text_ref=0,
            phrase=PhraseSpan(2, 5, "red"),
            regions=(TripletRegion(BBox(0, 0, 5, 5), 0.9),),
            phrase_confidence=0.9,
        )
        refined = AnnotatedImage(
            img.id, img.size,
            texts=(replace(img.texts[0], parse=None),),
            triplets=(novel,),
        )
        merged = merge_annotations(img, refined, CFG)
        assert merged.triplets == img.triplets + (novel,)

    def test_misaligned_refined_ref_fails_loudly(self, fixture_corpus):
        # text_ref is read in the original's index space. A refined triplet
        # grounding a brand-new text is valid on its own but points at the
        # wrong slot after the merge, and the merged record rejects it.
        img = fixture_corpus[2]
        refined = AnnotatedImage(
            img.id, img.size,
            texts=(TextAnnotation(Granularity.BRIEF, "a boy eating",
                                  TextSource.SPECIALIST),),
            triplets=(
                PhraseRegionTriplet(
                    text_ref=0,
                    phrase=PhraseSpan(2, 5, "boy"),
                    regions=(TripletRegion(BBox(0, 0, 10, 10), 0.9),),
                    phrase_confidence=0.9,
                ),
            ),
        )
        with pytest.raises(SchemaError, match="does not match"):
            merge_annotations(img, refined, CFG)
