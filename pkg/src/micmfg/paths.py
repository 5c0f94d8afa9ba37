"""Seeded Brownian increments and Euler-Maruyama stepping.

Increments are produced by a counter-based generator (Philox 4x32-10), so the
normal variate attached to a (path, step, class) index is a pure function of
(seed, draw, path, step, class). Batches are therefore identical no matter how
paths are chunked across workers or in which order they are evaluated, and the
same seed always reproduces the same batch bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "NonFiniteState",
    "PathBatch",
    "brownian_increments",
    "counter_normals",
    "counter_uniforms",
    "euler_step",
]


class NonFiniteState(RuntimeError):
    """A simulated state became NaN or infinite; carries the step index."""

    def __init__(self, step: int, what: str = "state"):
        super().__init__(f"non-finite {what} at step {step}")
        self.step = step


# Philox 4x32 round constants (Salmon et al. reference values).
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)


def _philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten-round Philox 4x32 block. Inputs are broadcastable uint32 arrays."""
    c0 = c0.astype(np.uint64)
    c1 = c1.astype(np.uint64)
    c2 = c2.astype(np.uint64)
    c3 = c3.astype(np.uint64)
    key0 = np.uint64(k0)
    key1 = np.uint64(k1)
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> np.uint64(32), p0 & _MASK32
        hi1, lo1 = p1 >> np.uint64(32), p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ key0, lo1, hi0 ^ c3 ^ key1, lo0
        key0 = (key0 + _W0) & _MASK32
        key1 = (key1 + _W1) & _MASK32
    return c0, c1, c2, c3


def _to_unit(hi, lo):
    """Two 32-bit words -> double in the open interval (0, 1)."""
    bits = ((hi << np.uint64(32)) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (2.0 ** -53)


def counter_uniforms(seed, c0, c1, c2, c3):
    """Uniform(0,1) variates addressed by four 32-bit counter words."""
    k0 = np.uint32(seed & 0xFFFFFFFF)
    k1 = np.uint32((seed >> 32) & 0xFFFFFFFF)
    w0, w1, w2, w3 = _philox4x32(
        np.asarray(c0, dtype=np.uint32),
        np.asarray(c1, dtype=np.uint32),
        np.asarray(c2, dtype=np.uint32),
        np.asarray(c3, dtype=np.uint32),
        k0,
        k1,
    )
    return _to_unit(w0, w1)


def counter_normals(seed, c0, c1, c2, c3):
    """Standard-normal pair addressed by four 32-bit counter words.

    One Philox block yields two independent N(0,1) variates (Box-Muller on the
    two 53-bit uniforms packed from the four output words).
    """
    k0 = np.uint32(seed & 0xFFFFFFFF)
    k1 = np.uint32((seed >> 32) & 0xFFFFFFFF)
    w0, w1, w2, w3 = _philox4x32(
        np.asarray(c0, dtype=np.uint32),
        np.asarray(c1, dtype=np.uint32),
        np.asarray(c2, dtype=np.uint32),
        np.asarray(c3, dtype=np.uint32),
        k0,
        k1,
    )
    u1 = _to_unit(w0, w1)
    u2 = _to_unit(w2, w3)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2
    return radius * np.cos(angle), radius * np.sin(angle)


# Step-word markers for auxiliary draws that must never collide with the
# per-step Brownian blocks (step pairs occupy 0 .. ceil(n_steps/2)-1 < 2**30).
STEP_WORD_INITIAL_WEALTH = np.uint32(0xFFFFFFFF)
STEP_WORD_EXIT_TIME = np.uint32(0xFFFFFFFE)


def standard_normals(seed, n_paths, n_steps, n_classes, draw=0, path_offset=0):
    """(n_paths, n_steps, n_classes) standard normals from counter blocks.

    Steps are paired two per Philox block; the block for (path p, pair j,
    class h, draw) is independent of every other block, so any subset of path
    indices can be generated in isolation (``path_offset`` shifts the indices).
    """
    n_pairs = (n_steps + 1) // 2
    paths = (np.arange(n_paths, dtype=np.uint64) + np.uint64(path_offset)).astype(
        np.uint32
    )[:, None, None]
    pairs = np.arange(n_pairs, dtype=np.uint32)[None, :, None]
    classes = np.arange(n_classes, dtype=np.uint32)[None, None, :]
    d = np.uint32(draw)
    z_even, z_odd = counter_normals(
        seed,
        np.broadcast_to(paths, (n_paths, n_pairs, n_classes)),
        np.broadcast_to(pairs, (n_paths, n_pairs, n_classes)),
        np.broadcast_to(classes, (n_paths, n_pairs, n_classes)),
        np.full((n_paths, n_pairs, n_classes), d, dtype=np.uint32),
    )
    out = np.empty((n_paths, 2 * n_pairs, n_classes))
    out[:, 0::2, :] = z_even
    out[:, 1::2, :] = z_odd
    return out[:, :n_steps, :]


@dataclass(frozen=True)
class PathBatch:
    """Seeded Brownian increment tensor for one simulation batch.

    dW has shape (n_paths, n_steps, n_classes) with entries N(0, dt).
    """

    n_paths: int
    n_steps: int
    n_classes: int
    dt: float
    seed: int
    draw: int
    dW: np.ndarray

    def __post_init__(self):
        self.dW.setflags(write=False)

    _HEADER = struct.Struct("<BIHBQ")  # magic, n_paths, n_steps, H, seed: 16 bytes
    _MAGIC = 0xB7

    def dump(self, path):
        """Binary dump: 16-byte header, then dt and the increments as LE f64."""
        with open(path, "wb") as fh:
            fh.write(
                self._HEADER.pack(
                    self._MAGIC, self.n_paths, self.n_steps, self.n_classes, self.seed
                )
            )
            fh.write(struct.pack("<dI", self.dt, self.draw))
            fh.write(np.ascontiguousarray(self.dW, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic, n_paths, n_steps, n_classes, seed = cls._HEADER.unpack(
                fh.read(cls._HEADER.size)
            )
            if magic != cls._MAGIC:
                raise ValueError("not a PathBatch dump")
            dt, draw = struct.unpack("<dI", fh.read(12))
            dW = np.frombuffer(fh.read(), dtype="<f8").reshape(
                n_paths, n_steps, n_classes
            )
        return cls(n_paths, n_steps, n_classes, dt, seed, draw, dW.copy())


def brownian_increments(n_paths, n_steps, n_classes, seed, dt, draw=0):
    """Generate a PathBatch of N(0, dt) increments.

    ``draw`` selects a fresh, non-overlapping batch for the same seed (used
    when resampling every training iteration).
    """
    if n_paths < 1 or n_steps < 1:
        raise ValueError("n_paths and n_steps must be >= 1")
    z = standard_normals(seed, n_paths, n_steps, n_classes, draw=draw)
    return PathBatch(n_paths, n_steps, n_classes, dt, int(seed), int(draw), z * np.sqrt(dt))


def euler_step(state, drift, diffusion, dW, dt, step=None):
    """One Euler-Maruyama update: state + drift*dt + diffusion*dW (componentwise)."""
    nxt = state + drift * dt + diffusion * dW
    if not np.all(np.isfinite(nxt)):
        raise NonFiniteState(-1 if step is None else step)
    return nxt
