"""Dataset serialization, synchronization, and synthetic-generator tests."""

import numpy as np
import pytest

from vvids.data import (SyntheticSpec, generate_synthetic, load_dataset,
                        save_dataset, synchronize)
from vvids.errors import ConfigError, DataError, ParseError, \
    SynchronizationError


class TestLoadDataset:
    def test_empty_file_is_empty_dataset(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert load_dataset(path) == []

    def test_overlapping_clips_rejected_with_named_violation(self, tmp_path):
        records = generate_synthetic(SyntheticSpec(seed=1, n_videos=1,
                                                   clips_per_video=4))
        path = tmp_path / "bad.jsonl"
        save_dataset(records, path)
        import json
        obj = json.loads(path.read_text())
        obj["clips"][1]["t_start"] = 0.5  # overlaps clip 0 ending at 2.0
        path.write_text(json.dumps(obj) + "\n")
        with pytest.raises(ParseError) as exc:
            load_dataset(path)
        msg = str(exc.value)
        assert "clips[1]" in msg and "line 1" in msg and records[0].video_id in msg

    def test_bad_rating_rejected(self, tmp_path):
        records = generate_synthetic(SyntheticSpec(seed=1, n_videos=1,
                                                   clips_per_video=4))
        path = tmp_path / "bad.jsonl"
        save_dataset(records, path)
        import json
        obj = json.loads(path.read_text())
        obj["annotations"]["ratings"][2] = 9
        path.write_text(json.dumps(obj) + "\n")
        with pytest.raises(ParseError) as exc:
            load_dataset(path)
        assert "ratings[2]" in str(exc.value)

    def test_mixed_feature_dims_rejected(self, tmp_path):
        a = generate_synthetic(SyntheticSpec(seed=1, n_videos=1, d_video=8))
        b = generate_synthetic(SyntheticSpec(seed=2, n_videos=1, d_video=16))
        b[0].video_id = "other"
        path = tmp_path / "mixed.jsonl"
        save_dataset(a + b, path)
        with pytest.raises(DataError):
            load_dataset(path)

    def test_round_trip_is_byte_identity(self, tmp_path):
        records = generate_synthetic(SyntheticSpec(seed=3, n_videos=5,
                                                   clips_per_video=6))
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        save_dataset(records, first)
        save_dataset(load_dataset(first), second)
        assert first.read_bytes() == second.read_bytes()


class TestSynchronize:
    def test_identical_grids_align_one_to_one(self):
        times = [0.5, 1.5, 2.5, 3.5]
        vf = np.arange(8.0).reshape(4, 2)
        af = np.arange(8.0, 16.0).reshape(4, 2)
        clips, kept = synchronize(times, vf, times, af, clip_len=1.0)
        assert kept == [0, 1, 2, 3]
        for i, c in enumerate(clips):
            np.testing.assert_array_equal(c.video_feat, vf[i])
            np.testing.assert_array_equal(c.audio_feat, af[i])

    def test_double_rate_audio_is_mean_pooled(self):
        video_times = [0.5, 1.5, 2.5, 3.5]
        vf = np.ones((4, 1))
        audio_times = [0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.25, 3.75]
        af = np.arange(8.0).reshape(8, 1)
        clips, kept = synchronize(video_times, vf, audio_times, af, clip_len=1.0)
        assert kept == [0, 1, 2, 3]
        expected = [[0.5], [2.5], [4.5], [6.5]]  # pairwise means
        for c, e in zip(clips, expected):
            np.testing.assert_array_equal(c.audio_feat, e)

    def test_intervals_missing_in_either_stream_are_dropped(self):
        clips, kept = synchronize([0.5, 3.5], np.ones((2, 1)),
                                  [0.5, 1.5, 3.5], np.ones((3, 1)), 1.0)
        assert kept == [0, 3]

    def test_disjoint_ranges_raise(self):
        with pytest.raises(SynchronizationError):
            synchronize([0.5, 1.5], np.ones((2, 1)),
                        [10.5, 11.5], np.ones((2, 1)), 1.0)

    def test_unsorted_timestamps_rejected(self):
        with pytest.raises(DataError):
            synchronize([1.5, 0.5], np.ones((2, 1)),
                        [0.5, 1.5], np.ones((2, 1)), 1.0)


class TestGenerateSynthetic:
    def test_fixed_seed_is_bitwise_deterministic(self):
        a = generate_synthetic(SyntheticSpec(seed=7, n_videos=3))
        b = generate_synthetic(SyntheticSpec(seed=7, n_videos=3))
        for ra, rb in zip(a, b):
            assert ra.video_id == rb.video_id
            np.testing.assert_array_equal(ra.query_feat, rb.query_feat)
            np.testing.assert_array_equal(ra.video_matrix(), rb.video_matrix())
            assert ra.ratings == rb.ratings
            assert [(m.start, m.end) for m in ra.moments] == \
                [(m.start, m.end) for m in rb.moments]

    def test_planted_moment_rates_exactly_four_clips(self):
        spec = SyntheticSpec(seed=5, n_videos=10, clips_per_video=20,
                             moments_per_video=1, min_moment_clips=4,
                             max_moment_clips=4)
        for rec in generate_synthetic(spec):
            assert sum(1 for r in rec.ratings if r == 4) == 4

    def test_ratings_match_moment_membership(self):
        spec = SyntheticSpec(seed=6, n_videos=8, moments_per_video=2)
        for rec in generate_synthetic(spec):
            for i, clip in enumerate(rec.clips):
                mid = (clip.t_start + clip.t_end) / 2
                inside = any(m.start < mid < m.end for m in rec.moments)
                assert (rec.ratings[i] == 4) == inside
                if not inside:
                    assert rec.ratings[i] in (0, 1)

    def test_zero_signal_changes_features_only_inside_moments(self):
        # identical draw order means the two datasets differ exactly by the
        # planted additive signal
        base = generate_synthetic(SyntheticSpec(seed=9, n_videos=4,
                                                signal_strength=0.0))
        hot = generate_synthetic(SyntheticSpec(seed=9, n_videos=4,
                                               signal_strength=2.0))
        for rb, rh in zip(base, hot):
            assert rb.ratings == rh.ratings
            for i, (cb, ch) in enumerate(zip(rb.clips, rh.clips)):
                same = np.array_equal(cb.video_feat, ch.video_feat)
                inside = rb.ratings[i] == 4
                assert same != inside

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticSpec(moments_per_video=30, clips_per_video=20)
        with pytest.raises(ConfigError):
            SyntheticSpec(signal_strength=-1.0)
        with pytest.raises(ConfigError):
            SyntheticSpec(n_videos=0)

    def test_records_validate_and_round_trip(self, tmp_path):
        records = generate_synthetic(SyntheticSpec(seed=11, n_videos=4))
        path = tmp_path / "synth.jsonl"
        save_dataset(records, path)
        loaded = load_dataset(path)
        assert len(loaded) == 4
        np.testing.assert_array_equal(loaded[0].video_matrix(),
                                      records[0].video_matrix())
