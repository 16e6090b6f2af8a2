"""Data model: feature files, labels, annotations, config."""

import json

import numpy as np
import pytest

from saliseg.data import (
    EventAnnotation,
    FrameFeatures,
    PipelineConfig,
    config_from_json,
    derive_highlight_labels,
    lint_annotations,
    load_annotations,
    load_features,
    save_annotations,
    save_features,
)
from saliseg.errors import ConfigError, DataError


def make_features(F=4, D=2, valid_len=3, seed=0, video_id="v"):
    rng = np.random.default_rng(seed)
    spatial = np.zeros((F, D), dtype=np.float32)
    encoded = np.zeros((F, D), dtype=np.float32)
    spatial[:valid_len] = rng.normal(size=(valid_len, D)).astype(np.float32)
    encoded[:valid_len] = rng.normal(size=(valid_len, D)).astype(np.float32)
    return FrameFeatures(video_id=video_id, spatial=spatial, encoded=encoded, valid_len=valid_len)


class TestFeatureFiles:
    def test_round_trip_identity(self, tmp_path):
        f = make_features(F=4, D=2, valid_len=3)
        path = tmp_path / "v.sfeat"
        save_features(f, path)
        g = load_features(path)
        assert g.video_id == "v"
        assert g.valid_len == 3
        assert g.spatial.tobytes() == f.spatial.tobytes()
        assert g.encoded.tobytes() == f.encoded.tobytes()

    def test_two_saves_byte_identical(self, tmp_path):
        f = make_features(seed=5)
        save_features(f, tmp_path / "a.sfeat")
        save_features(f, tmp_path / "b.sfeat")
        assert (tmp_path / "a.sfeat").read_bytes() == (tmp_path / "b.sfeat").read_bytes()

    def test_truncated_body(self, tmp_path):
        f = make_features(F=2, D=3, valid_len=2)
        path = tmp_path / "v.sfeat"
        save_features(f, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])  # drop one float
        with pytest.raises(DataError, match="truncated body"):
            load_features(path)

    def test_valid_len_exceeds_frames(self, tmp_path):
        f = make_features(F=4, D=2, valid_len=4)
        path = tmp_path / "v.sfeat"
        save_features(f, path)
        raw = bytearray(path.read_bytes())
        # valid_len is the third u64 of the header
        raw[20:28] = (5).to_bytes(8, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(DataError, match="valid_len exceeds F"):
            load_features(path)

    def test_byte_flip_fuzz(self, tmp_path):
        f = make_features(F=6, D=4, valid_len=5, seed=1)
        path = tmp_path / "v.sfeat"
        save_features(f, path)
        original = path.read_bytes()
        rng = np.random.default_rng(7)
        for _ in range(40):
            pos = int(rng.integers(len(original)))
            bit = 1 << int(rng.integers(8))
            corrupted = bytearray(original)
            corrupted[pos] ^= bit
            path.write_bytes(bytes(corrupted))
            try:
                g = load_features(path)
            except DataError:
                continue
            changed = (
                g.spatial.tobytes() != f.spatial.tobytes()
                or g.encoded.tobytes() != f.encoded.tobytes()
                or g.valid_len != f.valid_len
            )
            assert changed, f"flip at byte {pos} went undetected"

    def test_nonzero_padding_rejected(self):
        spatial = np.ones((3, 2), dtype=np.float32)
        with pytest.raises(DataError, match="padding"):
            FrameFeatures(video_id="v", spatial=spatial, encoded=spatial, valid_len=2)


class TestHighlightLabels:
    def test_single_event(self):
        ann = EventAnnotation(video_id="v", valid_len=5, events=((1, 3),))
        lab = derive_highlight_labels(ann, 5, 5)
        np.testing.assert_array_equal(lab.labels, [0, 1, 1, 0, 0])
        np.testing.assert_array_equal(lab.mask, [1, 1, 1, 1, 1])

    def test_overlapping_union(self):
        ann = EventAnnotation(video_id="v", valid_len=4, events=((0, 2), (1, 4)))
        lab = derive_highlight_labels(ann, 4, 4)
        np.testing.assert_array_equal(lab.labels, [1, 1, 1, 1])

    def test_event_exceeds_valid_len(self):
        with pytest.raises(DataError, match="event exceeds valid_len"):
            EventAnnotation(video_id="v", valid_len=4, events=((2, 6),))

    def test_empty_events_warns(self, caplog):
        ann = EventAnnotation(video_id="v", valid_len=4, events=())
        with caplog.at_level("WARNING"):
            lab = derive_highlight_labels(ann, 4, 4)
        assert lab.labels.sum() == 0
        assert any("no events" in r.message for r in caplog.records)

    def test_monotone_in_events(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            n = int(rng.integers(2, 5))
            events = sorted(
                (int(s), int(s) + int(rng.integers(1, 4)))
                for s in rng.integers(0, 16, size=n)
            )
            events = [(s, min(e, 20)) for s, e in events]
            base = derive_highlight_labels(
                EventAnnotation("v", 20, tuple(events[:-1])), 20, 20
            )
            more = derive_highlight_labels(EventAnnotation("v", 20, tuple(events)), 20, 20)
            assert np.all(more.labels >= base.labels)

    def test_total_highlights_equals_union_size(self):
        ann = EventAnnotation(video_id="v", valid_len=10, events=((0, 3), (5, 8)))
        lab = derive_highlight_labels(ann, 12, 10)
        assert lab.n_highlight == 6

    def test_lint_flags_overlaps(self):
        anns = [EventAnnotation(video_id="v", valid_len=6, events=((0, 3), (2, 5)))]
        warnings = lint_annotations(anns)
        assert len(warnings) == 1 and "overlap" in warnings[0]


class TestAnnotationsIO:
    def test_round_trip(self, tmp_path):
        anns = [
            EventAnnotation(video_id="a", valid_len=6, events=((0, 2), (3, 5))),
            EventAnnotation(video_id="b", valid_len=4, events=()),
        ]
        path = tmp_path / "anns.jsonl"
        save_annotations(anns, path)
        loaded = load_annotations(path)
        assert loaded == anns

    def test_bad_json_line(self, tmp_path):
        path = tmp_path / "anns.jsonl"
        path.write_text('{"video_id": "a"\n', encoding="utf-8")
        with pytest.raises(DataError):
            load_annotations(path)


class TestPipelineConfig:
    def test_defaults_valid(self):
        cfg = PipelineConfig()
        assert cfg.tau == 0.5 and cfg.K == 8 and cfg.windows == (8, 32, 64)

    def test_json_round_trip_uses_lambda_key(self):
        cfg = PipelineConfig(lambda_=2.0)
        doc = json.loads(cfg.to_json())
        assert doc["lambda"] == 2.0
        assert config_from_json(cfg.to_json()) == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            config_from_json('{"tau": 0.5, "bogus": 1}')

    @pytest.mark.parametrize(
        "overrides",
        [
            {"tau": 0.0},
            {"epsilon": -1.0},
            {"K": 0},
            {"top_k": 9},
            {"rho": 0.3},
            {"alpha": 1.5},
            {"windows": (8, 8, 64)},
            {"windows": (8, 32, 200)},
        ],
    )
    def test_invalid_values_rejected(self, overrides):
        with pytest.raises(ConfigError):
            PipelineConfig(**overrides)
