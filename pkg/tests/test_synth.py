import filecmp

import numpy as np
import pytest

from dyad.ingest import load_manifest, read_ground_truth, split_segments
from dyad.synth import SynthSpec, generate, make_video


def test_anomalous_segment_count():
    spec = SynthSpec(videos=8, segments=32, anomaly_rate=0.25)
    total = sum(int(make_video(spec, i)[2].sum()) for i in range(spec.videos))
    assert total == 64


def test_frame_labels_follow_segments():
    spec = SynthSpec(videos=1, frames=70)
    video, frames, segs = make_video(spec, 0)
    assert video.frame_count == 70 and len(frames) == 70
    views = split_segments(70, spec.segments)
    assert frames.sum() == sum(v.frame_count for v in views if segs[v.index])
    run = np.flatnonzero(frames)
    assert np.all(np.diff(run) == 1)  # one contiguous anomalous run


def test_same_seed_same_bytes(tmp_path):
    spec = SynthSpec(videos=2, seed=3)
    generate(spec, tmp_path / "a")
    generate(spec, tmp_path / "b")
    for sub in ("videos", "gt"):
        names = sorted(p.name for p in (tmp_path / "a" / sub).iterdir())
        match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a" / sub, tmp_path / "b" / sub, names, shallow=False)
        assert not mismatch and not errors
    assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()


def test_different_seed_differs():
    a = make_video(SynthSpec(seed=1), 0)[0].frames
    b = make_video(SynthSpec(seed=2), 0)[0].frames
    assert not np.array_equal(a, b)


def test_generated_manifest_loads(tmp_path):
    generate(SynthSpec(videos=2), tmp_path)
    m = load_manifest(tmp_path / "manifest.json")
    assert [e.video_id for e in m.entries] == ["vid000", "vid001"]
    assert len(read_ground_truth(m.resolve(m.entries[0].ground_truth))) == 96


@pytest.mark.parametrize("kwargs", [{"anomaly_rate": 0.0}, {"anomaly_rate": 1.0}, {"separation": -1},
                                    {"frames": 40}, {"size": 8}])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SynthSpec(**kwargs)


def test_anomaly_is_brighter_and_moving():
    spec = SynthSpec(videos=1, nuisance_rate=0, walker_rate=0)
    video, labels, _ = make_video(spec, 0)
    f = video.frames.astype(float)
    anom = np.flatnonzero(labels)
    normal = np.flatnonzero(labels == 0)
    step = lambda idx: np.abs(np.diff(f[idx], axis=0)).mean()
    assert step(anom) > 2 * step(normal)
