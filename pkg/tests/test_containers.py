"""Binary container round-trips and format guards."""

import numpy as np
import pytest

from tyrppg import containers
from tyrppg.preprocess import VideoClip


@pytest.fixture
def rng():
    return np.random.default_rng(3)


class TestTensorContainer:
    def test_roundtrip(self, rng, tmp_path):
        arr = rng.standard_normal((3, 4, 5))
        path = tmp_path / "t.tyt"
        containers.save_tensor(path, arr)
        np.testing.assert_array_equal(containers.load_tensor(path), arr)

    def test_roundtrip_scalar_and_noncontiguous(self, rng):
        for arr in (np.asarray(2.5), rng.standard_normal((4, 6)).T):
            got, _ = containers.tensor_from_bytes(containers.tensor_to_bytes(arr))
            np.testing.assert_array_equal(got, arr)

    def test_layout(self):
        buf = containers.tensor_to_bytes(np.arange(6.0).reshape(2, 3))
        assert buf[:4] == b"TYT1"
        assert int.from_bytes(buf[4:8], "little") == 2          # rank
        assert int.from_bytes(buf[8:16], "little") == 2         # extent 0
        assert int.from_bytes(buf[16:24], "little") == 3        # extent 1
        assert np.frombuffer(buf, dtype="<f8", offset=24)[1] == 1.0  # row-major

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="magic"):
            containers.tensor_from_bytes(b"NOPE" + bytes(20))


class TestClipContainer:
    def test_roundtrip_quantizes_frames_to_f32(self, rng, tmp_path):
        frames = rng.uniform(0, 1, (5, 3, 4, 4))
        bvp = rng.standard_normal(5)
        clip = VideoClip(frames=frames, fs=30.0, gt_bvp=bvp, gt_hr_bpm=72.5)
        path = tmp_path / "c.tyc"
        containers.save_clip(path, clip)
        back = containers.load_clip(path)
        np.testing.assert_array_equal(back.frames, frames.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(back.gt_bvp, bvp)  # BVP stays f64
        assert back.fs == 30.0 and back.gt_hr_bpm == 72.5

    def test_deterministic_bytes(self, rng):
        frames = rng.uniform(0, 1, (4, 3, 4, 4))
        clip = VideoClip(frames=frames, fs=30.0, gt_bvp=np.zeros(4), gt_hr_bpm=60.0)
        assert containers.clip_to_bytes(clip) == containers.clip_to_bytes(clip)

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="magic"):
            containers.clip_from_bytes(b"XXXX" + bytes(64))


class TestCheckpointContainer:
    def test_roundtrip(self, rng):
        tensors = {"a.w": rng.standard_normal((2, 3)), "b": np.asarray(1.5)}
        manifest = {"seed": 7, "epoch": 3, "model": {"depth": 2}}
        buf = containers.checkpoint_to_bytes(manifest, tensors)
        got_manifest, got_tensors = containers.checkpoint_from_bytes(buf)
        assert got_manifest["seed"] == 7 and got_manifest["model"]["depth"] == 2
        assert got_manifest["tensors"] == ["a.w", "b"]
        for name, arr in tensors.items():
            np.testing.assert_array_equal(got_tensors[name], arr)

    def test_deterministic_bytes(self, rng):
        tensors = {"w": rng.standard_normal(4)}
        a = containers.checkpoint_to_bytes({"seed": 1}, tensors)
        b = containers.checkpoint_to_bytes({"seed": 1}, tensors)
        assert a == b
