"""Binary container formats: tensors, video clips, and model checkpoints.

All integers are little-endian.

TYT1 (tensor):      magic b"TYT1", u32 rank, u64 extents[rank], f64 payload
                    in row-major order.
TYC1 (video clip):  magic b"TYC1", u32 T, u32 C, u32 H, u32 W, f64 fs,
                    f64 gt_hr_bpm, f32 frames payload (T*C*H*W, row-major),
                    f64 BVP payload (T).
TYK1 (checkpoint):  magic b"TYK1", u64 manifest length, manifest JSON
                    (UTF-8, sorted keys), then per tensor: u32 name length,
                    name UTF-8, one TYT1 record. Tensor order follows the
                    manifest's "tensors" list.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

TENSOR_MAGIC = b"TYT1"
CLIP_MAGIC = b"TYC1"
CHECKPOINT_MAGIC = b"TYK1"


def tensor_to_bytes(arr):
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    out = bytearray(TENSOR_MAGIC)
    out += struct.pack("<I", arr.ndim)
    out += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    out += arr.astype("<f8").tobytes()
    return bytes(out)


def tensor_from_bytes(buf, offset=0):
    """Decode one TYT1 record; returns (array, next_offset)."""
    if buf[offset : offset + 4] != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {buf[offset:offset + 4]!r}, expected {TENSOR_MAGIC!r}")
    offset += 4
    (rank,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    shape = struct.unpack_from(f"<{rank}Q", buf, offset)
    offset += 8 * rank
    n = int(np.prod(shape)) if rank else 1
    arr = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(shape)
    return arr.astype(np.float64), offset + 8 * n


def save_tensor(path, arr):
    with open(path, "wb") as fh:
        fh.write(tensor_to_bytes(arr))


def load_tensor(path):
    with open(path, "rb") as fh:
        arr, _ = tensor_from_bytes(fh.read())
    return arr


# ---------------------------------------------------------------------------
# video clips
# ---------------------------------------------------------------------------


def clip_to_bytes(clip):
    t, c, h, w = clip.frames.shape
    out = bytearray(CLIP_MAGIC)
    out += struct.pack("<4I", t, c, h, w)
    out += struct.pack("<d", float(clip.fs))
    out += struct.pack("<d", float(clip.gt_hr_bpm))
    out += np.ascontiguousarray(clip.frames, dtype="<f4").tobytes()
    out += np.ascontiguousarray(clip.gt_bvp, dtype="<f8").tobytes()
    return bytes(out)


def clip_from_bytes(buf):
    from .preprocess import VideoClip

    if buf[:4] != CLIP_MAGIC:
        raise ValueError(f"bad clip magic {buf[:4]!r}, expected {CLIP_MAGIC!r}")
    t, c, h, w = struct.unpack_from("<4I", buf, 4)
    (fs,) = struct.unpack_from("<d", buf, 20)
    (gt_hr,) = struct.unpack_from("<d", buf, 28)
    offset = 36
    n = t * c * h * w
    frames = np.frombuffer(buf, dtype="<f4", count=n, offset=offset)
    offset += 4 * n
    bvp = np.frombuffer(buf, dtype="<f8", count=t, offset=offset)
    return VideoClip(
        frames=frames.astype(np.float64).reshape(t, c, h, w),
        fs=fs,
        gt_bvp=bvp.astype(np.float64),
        gt_hr_bpm=gt_hr,
    )


def save_clip(path, clip):
    with open(path, "wb") as fh:
        fh.write(clip_to_bytes(clip))


def load_clip(path):
    with open(path, "rb") as fh:
        return clip_from_bytes(fh.read())


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def checkpoint_to_bytes(manifest, tensors):
    """manifest: JSON-serializable dict; tensors: {name: ndarray}.

    The manifest's "tensors" key is (re)written with the sorted tensor names
    so readers know the record order.
    """
    manifest = dict(manifest)
    names = sorted(tensors)
    manifest["tensors"] = names
    mbytes = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    out = io.BytesIO()
    out.write(CHECKPOINT_MAGIC)
    out.write(struct.pack("<Q", len(mbytes)))
    out.write(mbytes)
    for name in names:
        nbytes = name.encode()
        out.write(struct.pack("<I", len(nbytes)))
        out.write(nbytes)
        out.write(tensor_to_bytes(tensors[name]))
    return out.getvalue()


def checkpoint_from_bytes(buf):
    if buf[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {buf[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    (mlen,) = struct.unpack_from("<Q", buf, 4)
    offset = 12
    manifest = json.loads(buf[offset : offset + mlen].decode())
    offset += mlen
    tensors = {}
    for expected in manifest["tensors"]:
        (nlen,) = struct.unpack_from("<I", buf, offset)
        offset += 4
        name = buf[offset : offset + nlen].decode()
        offset += nlen
        if name != expected:
            raise ValueError(f"checkpoint tensor order mismatch: {name!r} != {expected!r}")
        arr, offset = tensor_from_bytes(buf, offset)
        tensors[name] = arr
    return manifest, tensors


def save_checkpoint(path, manifest, tensors):
    with open(path, "wb") as fh:
        fh.write(checkpoint_to_bytes(manifest, tensors))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())
