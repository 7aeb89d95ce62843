import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dyad.ingest import (DatasetManifest, FormatError, GrayVideo, ManifestEntry, decode_fl32, decode_fv32,
                         decode_gv8, encode_fl32, encode_gv8, load_features, load_manifest,
                         read_ground_truth, save_manifest, split_segments, store_features, write_ground_truth,
                         write_gv8)


def gv8(w, h, f, payload: bytes) -> bytes:
    return b"GV8\0" + struct.pack("<3I", w, h, f) + payload


def test_decode_tiny_video():
    video = decode_gv8(gv8(2, 2, 1, bytes([0, 255, 7, 9])))
    assert video.frame_count == 1 and (video.height, video.width) == (2, 2)
    assert video.frames[0].tolist() == [[0, 255], [7, 9]]


def test_truncated_payload():
    with pytest.raises(FormatError, match="truncated"):
        decode_gv8(gv8(2, 2, 3, bytes(8)))


@pytest.mark.parametrize("data", [b"", b"GV8", b"XXXX" + bytes(12), gv8(0, 2, 1, b"")])
def test_malformed_header(data):
    with pytest.raises(FormatError):
        decode_gv8(data)


def test_trailing_bytes():
    with pytest.raises(FormatError):
        decode_gv8(gv8(1, 1, 1, bytes(2)))


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4), st.data())
def test_gv8_round_trip(w, h, f, data):
    raw = data.draw(st.binary(min_size=w * h * f, max_size=w * h * f))
    video = decode_gv8(gv8(w, h, f, raw))
    assert encode_gv8(video) == gv8(w, h, f, raw)


def test_split_even():
    views = split_segments(64, 32)
    assert len(views) == 32 and all(v.frame_count == 2 for v in views)


def test_split_with_remainder():
    sizes = [v.frame_count for v in split_segments(70, 32)]
    # floor split with the remainder handed to the leading segments
    base, extra = divmod(70, 32)
    assert sizes == [base + 1] * extra + [base] * (32 - extra)
    assert sizes == [3] * 6 + [2] * 26


def test_split_too_short():
    with pytest.raises(ValueError):
        split_segments(10, 32)


@given(st.integers(1, 40), st.integers(0, 200))
def test_split_partitions_frames(count, extra):
    n = 2 * count + extra
    views = split_segments(n, count, "v")
    assert views[0].start == 0 and views[-1].end == n
    assert all(a.end == b.start for a, b in zip(views, views[1:]))
    assert max(v.frame_count for v in views) - min(v.frame_count for v in views) <= 1


def test_segment_id_and_center():
    v = split_segments(64, 32, "cam")[3]
    assert v.segment_id == "cam_03"
    assert v.center == (v.start + v.end - 1) / 2


def test_fv32_two_vectors(tmp_path):
    store_features(tmp_path / "f.fv32", [[1, 2, 3], [4, 5, 6]])
    vecs = load_features(tmp_path / "f.fv32")
    assert vecs.shape == (2, 3)
    assert vecs.tolist() == [[1, 2, 3], [4, 5, 6]]


def test_fv32_nan_rejected():
    data = b"FV32" + struct.pack("<2I", 1, 2) + np.array([1.0, np.nan], "<f4").tobytes()
    with pytest.raises(FormatError, match="non-finite"):
        decode_fv32(data)


def test_fv32_size_mismatch():
    data = b"FV32" + struct.pack("<2I", 2, 3) + bytes(4 * 5)
    with pytest.raises(FormatError, match="mismatch"):
        decode_fv32(data)


def test_fl32_round_trip(rng):
    flows = rng.normal(size=(3, 2, 4, 5)).astype(np.float32)
    back = decode_fl32(encode_fl32(flows))
    assert np.array_equal(back, flows)


def test_fl32_mismatch():
    with pytest.raises(FormatError):
        decode_fl32(b"FL32" + struct.pack("<3I", 1, 2, 2) + bytes(4))


def test_ground_truth(tmp_path):
    write_ground_truth(tmp_path / "g.txt", [0, 1, 1, 0])
    assert read_ground_truth(tmp_path / "g.txt").tolist() == [0, 1, 1, 0]
    (tmp_path / "bad.txt").write_text("0\n2\n")
    with pytest.raises(FormatError):
        read_ground_truth(tmp_path / "bad.txt")


def test_manifest_round_trip(tmp_path):
    write_gv8(tmp_path / "v" / "a.gv8", GrayVideo(np.zeros((4, 8, 8), np.uint8)))
    m = DatasetManifest([ManifestEntry("v/a.gv8")], 2, tmp_path)
    save_manifest(tmp_path / "manifest.json", m)
    back = load_manifest(tmp_path / "manifest.json")
    assert back == m
    assert back.entries[0].video_id == "a"


def test_manifest_rejects_unknown_keys_and_missing_files(tmp_path):
    (tmp_path / "m.json").write_text('{"entries": [], "extra": 1}')
    with pytest.raises(FormatError, match="unknown"):
        load_manifest(tmp_path / "m.json")
    (tmp_path / "m.json").write_text('{"entries": [{"video": "nope.gv8"}]}')
    with pytest.raises(FormatError, match="does not exist"):
        load_manifest(tmp_path / "m.json")
