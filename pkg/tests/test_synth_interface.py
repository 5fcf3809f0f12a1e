import logging

import numpy as np
import pytest

from first_shot_asd.audio_io import SilenceRemovalConfig, decode_wav
from first_shot_asd.metadata import Caption, CaptionTemplate, ClipMetadata, TemplateSet, load_templates
from first_shot_asd.synth_interface import (CaptionManifest, ManifestEntry, SynthError, build_manifest,
                                            caption_tone_hz, generate_stub, ingest_synthetic, read_manifest,
                                            stable_seed, write_manifest)


@pytest.fixture(scope="module")
def templates():
    return load_templates()


def grinder(index, grindstone="2", plate="2", condition="normal"):
    return ClipMetadata("grinder", "00", "source", "train", condition, f"{index:04d}",
                        (("grindstone", grindstone), ("plate", plate)))


@pytest.fixture
def manifest(templates):
    return build_manifest([grinder(0), grinder(1, plate="1")], templates, per_caption_count=3)


class TestBuildManifest:
    def test_one_caption(self, templates):
        manifest = build_manifest([grinder(0)], templates, per_caption_count=5)
        assert len(manifest) == 2
        assert [e.condition for e in manifest.entries] == ["normal", "anomaly"]
        assert all(e.requested_count == 5 for e in manifest.entries)

    def test_captions_are_deduplicated(self, templates):
        manifest = build_manifest([grinder(0), grinder(1), grinder(2, plate="1")], templates)
        assert len(manifest) == 4
        assert manifest.requested("normal") == manifest.requested("anomaly") == 20

    def test_anomaly_entry_mirrors_normal(self, templates):
        normal, anomaly = build_manifest([grinder(0)], templates).entries
        assert anomaly.caption.text == normal.caption.text.replace("normal", "anomaly")
        assert normal.output_stem == "grinder_cap000_normal"
        assert anomaly.output_stem == "grinder_cap000_anomaly"

    def test_one_anomaly_entry_per_normal_entry(self, templates):
        metadata = [grinder(i, grindstone=g, plate=p) for i, (g, p) in enumerate([("1", "1"), ("1", "2"), ("2", "1"), ("1", "1")])]
        manifest = build_manifest(metadata, templates, per_caption_count=2)
        conditions = [entry.condition for entry in manifest.entries]
        assert conditions.count("normal") == conditions.count("anomaly") == 3
        assert manifest.requested("normal") == manifest.requested("anomaly") == 6

    def test_anomaly_metadata_rejected(self, templates):
        with pytest.raises(SynthError, match="normal-only"):
            build_manifest([grinder(0), grinder(1, condition="anomaly")], templates)

    def test_empty_metadata(self, templates):
        with pytest.raises(SynthError):
            build_manifest([], templates)

    def test_duplicate_stems(self, manifest):
        with pytest.raises(SynthError, match="Duplicate"):
            CaptionManifest(entries=manifest.entries + manifest.entries[:1])

    def test_requested_count_positive(self, manifest):
        entry = manifest.entries[0]
        with pytest.raises(SynthError):
            ManifestEntry(entry.caption, entry.machine_type, entry.condition, 0, entry.output_stem)


class TestManifestFile:
    def test_write_then_read(self, tmp_path, manifest):
        path = write_manifest(manifest, tmp_path / "manifest.tsv")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "output_stem\tmachine_type\tcondition\trequested_count\tcaption"
        assert len(lines) == 5
        assert read_manifest(path).entries == manifest.entries

    def test_rewrite_is_byte_identical(self, tmp_path, manifest):
        first = write_manifest(manifest, tmp_path / "a.tsv").read_bytes()
        second = write_manifest(manifest, tmp_path / "b.tsv").read_bytes()
        assert first == second

    def test_caption_with_double_quote(self, tmp_path):
        templates = TemplateSet([CaptionTemplate("fan", 'This is the {condition} sound of a 12" fan at speed {spd}.')])
        meta = ClipMetadata("fan", "00", "source", "train", "normal", "0000", (("spd", "3"),))
        manifest = build_manifest([meta], templates, per_caption_count=1)
        path = write_manifest(manifest, tmp_path / "manifest.tsv")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[1].endswith('This is the normal sound of a 12" fan at speed 3.')
        assert read_manifest(path).entries == manifest.entries

    def test_failed_write_leaves_no_partial_file(self, tmp_path, manifest):
        target = tmp_path / "taken"
        target.mkdir()
        with pytest.raises(SynthError, match="Error writing manifest"):
            write_manifest(manifest, target)
        assert target.is_dir()
        assert sorted(p.name for p in tmp_path.iterdir()) == ["taken"]

    def test_caption_with_carriage_return(self, manifest):
        entry = manifest.entries[0]
        caption = Caption(text=entry.caption.text + "\r", condition="normal", machine_type="grinder")
        with pytest.raises(SynthError, match="line break"):
            ManifestEntry(caption, entry.machine_type, entry.condition, 1, entry.output_stem)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("stem\tcaption\n")
        with pytest.raises(SynthError, match="header"):
            read_manifest(path)

    def test_missing(self, tmp_path):
        with pytest.raises(SynthError, match="not found"):
            read_manifest(tmp_path / "none.tsv")


class TestIngest:
    def test_complete_directory(self, tmp_path, manifest):
        generate_stub(manifest, tmp_path, clip_seconds=0.5)
        corpus = ingest_synthetic(tmp_path, manifest)
        assert len(corpus.normals) == manifest.requested("normal") == 6
        assert len(corpus.anomalies) == manifest.requested("anomaly") == 6
        assert corpus.missing == [] and corpus.extra == []
        corpus.require_both_conditions()

    def test_missing_file_is_named(self, tmp_path, manifest):
        written = generate_stub(manifest, tmp_path, clip_seconds=0.5)
        written[1].unlink()
        with pytest.raises(SynthError, match=written[1].name):
            ingest_synthetic(tmp_path, manifest)

    def test_missing_within_tolerance(self, tmp_path, manifest, caplog):
        written = generate_stub(manifest, tmp_path, clip_seconds=0.5)
        written[0].unlink()
        with caplog.at_level(logging.WARNING):
            corpus = ingest_synthetic(tmp_path, manifest, missing_tolerance=0.1)
        assert corpus.missing == [written[0].name]
        assert len(corpus.normals) == 5
        assert "missing" in caplog.text

    def test_extra_file_is_reported(self, tmp_path, manifest, caplog):
        written = generate_stub(manifest, tmp_path, clip_seconds=0.5)
        (tmp_path / "stray.wav").write_bytes(written[0].read_bytes())
        with caplog.at_level(logging.WARNING):
            corpus = ingest_synthetic(tmp_path, manifest, workers=2)
        assert corpus.extra == ["stray.wav"]
        assert len(corpus.normals) + len(corpus.anomalies) == 12
        assert "stray.wav" in caplog.text

    def test_silence_removal_is_applied(self, tmp_path, manifest):
        generate_stub(manifest, tmp_path, clip_seconds=0.5)
        cfg = SilenceRemovalConfig(threshold_db=30.0)
        corpus = ingest_synthetic(tmp_path, manifest, silence=cfg)
        assert all(len(clip) <= 8000 for clip in corpus.normals + corpus.anomalies)

    def test_undecodable_file(self, tmp_path, manifest):
        written = generate_stub(manifest, tmp_path, clip_seconds=0.5)
        written[2].write_text("not audio")
        with pytest.raises(SynthError, match="Undecodable"):
            ingest_synthetic(tmp_path, manifest)

    def test_missing_directory(self, tmp_path, manifest):
        with pytest.raises(SynthError, match="does not exist"):
            ingest_synthetic(tmp_path / "nope", manifest)

    def test_one_sided_corpus(self, tmp_path, templates):
        manifest = build_manifest([grinder(0)], templates, per_caption_count=2)
        normal_only = CaptionManifest(entries=manifest.entries[:1])
        generate_stub(normal_only, tmp_path, clip_seconds=0.5)
        corpus = ingest_synthetic(tmp_path, normal_only)
        with pytest.raises(SynthError, match="needs normal and anomaly"):
            corpus.require_both_conditions()


class TestStubGenerator:
    def test_reruns_are_byte_identical(self, tmp_path, manifest):
        first = generate_stub(manifest, tmp_path / "a", clip_seconds=0.25, seed=4)
        second = generate_stub(manifest, tmp_path / "b", clip_seconds=0.25, seed=4)
        assert [p.name for p in first] == [p.name for p in second]
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()

    def test_file_names_follow_manifest(self, tmp_path, manifest):
        names = [p.name for p in generate_stub(manifest, tmp_path, clip_seconds=0.25)]
        expected = [name for entry in manifest.entries for name in entry.file_names()]
        assert names == expected
        assert names[0] == "grinder_cap000_normal_0.wav"

    def test_conditions_share_a_tone(self, manifest):
        normal, anomaly = manifest.entries[:2]
        assert caption_tone_hz(normal.caption.text) == caption_tone_hz(anomaly.caption.text)
        assert 200.0 <= caption_tone_hz(normal.caption.text) < 1200.0

    def test_stable_seed(self):
        assert stable_seed("a", 1) == stable_seed("a", 1)
        assert stable_seed("a", 1) != stable_seed("a", 2)
        assert 0 <= stable_seed("x") < 2 ** 64

    def test_anomalies_carry_more_energy_peaks(self, tmp_path, manifest):
        written = generate_stub(manifest, tmp_path, clip_seconds=1.0)
        normal_peak = max(np.max(np.abs(decode_wav(p).samples)) for p in written if "_normal_" in p.name)
        anomaly_peak = min(np.max(np.abs(decode_wav(p).samples)) for p in written if "_anomaly_" in p.name)
        assert anomaly_peak > normal_peak
