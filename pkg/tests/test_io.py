import numpy as np
import pytest

from vecnet.core import frame_to_uint8
from vecnet.io import (
    ClipPair, list_frames, load_clip_pair, load_dataset, read_frames, read_kv, save_clip_pair, write_frames,
    write_kv,
)


def _frames(rng, n=3, shape=(10, 12)):
    # values already on the 8-bit grid so PNG round trips are exact
    return [frame_to_uint8(rng.random(shape + (3,))) / 255.0 for _ in range(n)]


def test_frames_round_trip(tmp_path, rng):
    frames = _frames(rng)
    write_frames(tmp_path / "f", frames)
    assert [p.name for p in list_frames(tmp_path / "f")] == ["000000.png", "000001.png", "000002.png"]
    for a, b in zip(read_frames(tmp_path / "f"), frames):
        np.testing.assert_array_equal(a, b)


def test_channel_order_preserved(tmp_path):
    red = np.zeros((8, 8, 3))
    red[..., 0] = 1.0
    write_frames(tmp_path, [red])
    back = read_frames(tmp_path)[0]
    assert back[..., 0].min() == 1.0 and back[..., 1:].max() == 0.0


def test_no_temp_files_left(tmp_path, rng):
    write_frames(tmp_path, _frames(rng, 2))
    assert sorted(p.suffix for p in tmp_path.iterdir()) == [".png", ".png"]


def test_read_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_frames(tmp_path / "missing")
    (tmp_path / "empty").mkdir()
    with pytest.raises(FileNotFoundError, match="no frames"):
        read_frames(tmp_path / "empty")
    (tmp_path / "bad").mkdir()
    (tmp_path / "bad/000000.png").write_bytes(b"junk")
    with pytest.raises(OSError, match="cannot read"):
        read_frames(tmp_path / "bad")


def test_kv_round_trip_and_comments(tmp_path):
    write_kv(tmp_path / "m.txt", {"mode": "under", "gamma": 2.2})
    assert read_kv(tmp_path / "m.txt") == {"mode": "under", "gamma": "2.2"}
    (tmp_path / "c.txt").write_text("# header\n\na = 1  # trailing\n b=two words \n")
    assert read_kv(tmp_path / "c.txt") == {"a": "1", "b": "two words"}


def test_clip_pair_round_trip(tmp_path, rng):
    pair = ClipPair("clip_7", _frames(rng), _frames(rng), {"mode": "over"})
    save_clip_pair(tmp_path, pair)
    back = load_clip_pair(tmp_path / "clip_7")
    assert back.clip_id == "clip_7" and back.mode == "over"
    for a, b in zip(back.inputs + back.gts, pair.inputs + pair.gts):
        np.testing.assert_array_equal(a, b)


def test_clip_without_gt_or_meta(tmp_path, rng):
    write_frames(tmp_path / "c/input", _frames(rng, 2))
    pair = load_clip_pair(tmp_path / "c")
    assert pair.gts is None and pair.meta == {} and pair.mode == "unknown"


def test_length_mismatch(tmp_path, rng):
    write_frames(tmp_path / "c/input", _frames(rng, 3))
    write_frames(tmp_path / "c/gt", _frames(rng, 2))
    with pytest.raises(ValueError, match="3 input frames but 2 gt"):
        load_clip_pair(tmp_path / "c")


def test_dataset_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path / "nope")
    (tmp_path / "stray").mkdir()
    with pytest.raises(FileNotFoundError, match="no clips"):
        load_dataset(tmp_path)
