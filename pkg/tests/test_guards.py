import numpy as np
import pytest

from sepsisfusion import presets, synthgen
from sepsisfusion.cohort import NoteDoc
from sepsisfusion.guards import (
    ControlWindowPolicy,
    GuardError,
    GuardSettings,
    Lexicon,
    apply_lexical_mask,
    apply_temporal_firewall,
    enforce_observation_window,
    guard_cohort,
    guard_record,
    mask_record,
)

from conftest import make_cohort, make_record

DRUGS = Lexicon.from_terms("drugs", ["vancomycin", "zosyn"])
BUGS = Lexicon.from_terms("bugs", ["mrsa", "ecoli"])


class TestFirewall:
    def test_no_notes_unchanged(self):
        r = make_record("a")
        out, audit = apply_temporal_firewall(r, 10.0)
        assert out is r
        assert audit.notes_purged == 0

    def test_all_before_cutoff_unchanged(self):
        r = make_record("a", notes=[NoteDoc(("x",), 1.0), NoteDoc(("y",), 2.0)])
        out, audit = apply_temporal_firewall(r, 10.0)
        assert len(out.notes) == 2
        assert audit.notes_purged == 0

    def test_boundary_note_purged(self):
        r = make_record("a", notes=[NoteDoc(("x",), 10.0)])
        out, audit = apply_temporal_firewall(r, 10.0)
        assert out.notes == ()
        assert audit.notes_purged == 1

    def test_idempotent(self):
        r = make_record("a", notes=[NoteDoc(("x",), 5.0), NoteDoc(("y",), 15.0)])
        once, _ = apply_temporal_firewall(r, 10.0)
        twice, audit2 = apply_temporal_firewall(once, 10.0)
        assert twice == once
        assert audit2.notes_purged == 0


class TestLexicalMask:
    def test_drug_masked_pathogen_kept(self):
        doc = NoteDoc(("vancomycin", "for", "mrsa"), 3.0)
        out, audit = apply_lexical_mask(doc, DRUGS, BUGS)
        assert out.tokens == ("<DRUG>", "for", "mrsa")
        assert audit.tokens_masked == 1

    def test_empty_drug_lexicon_noop(self):
        doc = NoteDoc(("vancomycin",), 3.0)
        out, audit = apply_lexical_mask(doc, Lexicon.from_terms("none", []), BUGS)
        assert out.tokens == ("vancomycin",)
        assert audit.tokens_masked == 0

    def test_case_folded_match(self):
        doc = NoteDoc(("Vancomycin",), 3.0)
        out, _ = apply_lexical_mask(doc, DRUGS, BUGS)
        assert out.tokens == ("<DRUG>",)

    def test_token_count_unchanged(self):
        doc = NoteDoc(("a", "zosyn", "b", "vancomycin"), 1.0)
        out, _ = apply_lexical_mask(doc, DRUGS, BUGS)
        assert len(out.tokens) == 4

    def test_overlapping_lexicons_rejected_up_front(self):
        both = Lexicon.from_terms("bad", ["mrsa"])
        with pytest.raises(GuardError, match="ambiguous"):
            apply_lexical_mask(NoteDoc((), 0.0), both, BUGS)

    def test_lexicon_must_be_lowercase(self):
        with pytest.raises(GuardError, match="lowercase"):
            Lexicon.from_terms("bad", ["Vancomycin"])

    def test_mask_idempotent(self):
        r = make_record("a", notes=[NoteDoc(("vancomycin", "mrsa"), 1.0)])
        once, _ = mask_record(r, DRUGS, BUGS)
        twice, audit = mask_record(once, DRUGS, BUGS)
        assert twice == once
        assert audit.tokens_masked == 0

    def test_lexicon_file_parsing(self, tmp_path):
        p = tmp_path / "lex.txt"
        p.write_text("# comment\nvancomycin\n\nzosyn  # inline\n")
        lex = Lexicon.from_file(p, "f")
        assert lex.terms == frozenset({"vancomycin", "zosyn"})


class TestObservationWindow:
    def test_buffer_zero_keeps_strictly_before_onset(self):
        r = make_record("a", onset=24.0, T=30, notes=[NoteDoc(("x",), 23.5)])
        out = enforce_observation_window(r, 0.0, "detection")
        assert out.vitals.length == 24  # hours 0..23 < 24
        assert len(out.notes) == 1

    def test_buffer_four(self):
        r = make_record("a", onset=24.0, T=30, notes=[NoteDoc(("x",), 21.0)])
        out = enforce_observation_window(r, 4.0, "detection")
        assert out.vitals.length == 20
        assert out.notes == ()

    def test_early_onset_flagged_excluded(self):
        r = make_record("a", onset=2.0, T=30)
        out = enforce_observation_window(r, 4.0, "detection")
        assert out.excluded
        assert out.vitals.length == 30  # data untouched, only flagged

    def test_control_reference_deterministic_and_in_range(self):
        r = make_record("ctl", T=48)
        pol = ControlWindowPolicy(lo=30.0, hi=40.0, seed=5)
        a = enforce_observation_window(r, 4.0, "detection", pol)
        b = enforce_observation_window(r, 4.0, "detection", pol)
        assert a == b
        assert 30.0 <= a.vitals.length <= 40.0

    def test_antibiotics_cut_at_admin_minus_buffer(self):
        r = make_record("a", abx="VANC", abx_hour=20.0, T=30)
        out = enforce_observation_window(r, 4.0, "antibiotics")
        assert out.vitals.length == 16

    def test_window_idempotent(self):
        pol = ControlWindowPolicy(lo=10.0, hi=20.0, seed=1)
        r = make_record("a", onset=24.0, T=30)
        once = enforce_observation_window(r, 4.0, "detection", pol)
        twice = enforce_observation_window(once, 4.0, "detection", pol)
        assert twice == once


class TestPipelineSoundness:
    @pytest.fixture(scope="class")
    def guarded(self, detection_spec, guard_settings_detection):
        cohort = synthgen.generate_cohort(detection_spec, 400, 23)
        guarded, audit, excluded = guard_cohort(
            cohort, "detection", guard_settings_detection
        )
        return cohort, guarded, audit

    def test_firewall_soundness(self, guarded):
        _, gc, _ = guarded
        for r in gc.records:
            if r.labels.sepsis_onset is not None:
                assert all(n.timestamp < r.labels.sepsis_onset for n in r.notes)

    def test_mask_soundness(self, guarded, detection_spec):
        _, gc, _ = guarded
        drugs = presets.default_drug_lexicon().terms
        for r in gc.records:
            for note in r.notes:
                assert not any(t.casefold() in drugs for t in note.tokens)

    def test_pathogen_tokens_preserved(self, guarded):
        raw, gc, _ = guarded
        bugs = presets.default_pathogen_lexicon().terms
        for r_raw, r_g in zip(raw.records, gc.records):
            # count pathogen tokens among the *retained* notes only: masking
            # must not change them (purging is the firewall's job)
            kept_ts = {n.timestamp for n in r_g.notes}
            raw_count = sum(
                t in bugs for n in r_raw.notes if n.timestamp in kept_ts for t in n.tokens
            )
            kept_count = sum(t in bugs for n in r_g.notes for t in n.tokens)
            assert kept_count == raw_count

    def test_window_soundness(self, guarded):
        _, gc, _ = guarded
        for r in gc.records:
            if r.labels.sepsis_onset is not None:
                cut = r.labels.sepsis_onset - 4.0
                assert r.vitals.times().max() < cut
                assert all(n.timestamp < cut for n in r.notes)

    def test_guard_pipeline_idempotent(self, guarded, guard_settings_detection):
        _, gc, _ = guarded
        for r in gc.records[:50]:
            again, audit = guard_record(r, "detection", guard_settings_detection)
            assert again == r
            assert audit.notes_purged == 0 and audit.tokens_masked == 0
