"""Linear layout encoder/decoder with unit-norm embeddings."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..render import EMBED_DIMS, PanoDepth

EMBED_DIM = 128
INPUT_SHAPE = (EMBED_DIMS[1], EMBED_DIMS[0])    # (H, W) = (32, 64)
INPUT_DIM = INPUT_SHAPE[0] * INPUT_SHAPE[1]
DEPTH_CLIP = (0.1, 20.0)
DEPTH_SCALE = 20.0

BRANCHES = ("layout", "query")


class EmbedError(ValueError):
    pass


@dataclass
class EncoderParams:
    branch: str
    weight: np.ndarray                  # (out, in)
    bias: np.ndarray                    # (out,)
    dec_weight: np.ndarray | None = None    # (in, out)
    dec_bias: np.ndarray | None = None      # (in,)

    def __post_init__(self):
        if self.branch not in BRANCHES:
            raise EmbedError(f"unknown branch {self.branch!r}")
        has_dec = self.dec_weight is not None
        if has_dec != (self.branch == "layout") or has_dec != (self.dec_bias is not None):
            raise EmbedError("decoder must be present iff branch is 'layout'")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def arrays(self) -> list:
        out = [self.weight, self.bias]
        if self.dec_weight is not None:
            out += [self.dec_weight, self.dec_bias]
        return out

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.branch, *[a.copy() for a in self.arrays()])

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())

    def to_bytes(self) -> bytes:
        head = struct.pack("<4sIII", b"LLLC", BRANCHES.index(self.branch), self.in_dim, self.out_dim)
        body = b"".join(a.astype("<f4").tobytes() for a in self.arrays())
        return head + body


def init_params(branch: str, seed: int, in_dim: int = INPUT_DIM,
                out_dim: int = EMBED_DIM) -> EncoderParams:
    rng = np.random.default_rng(seed)
    weight = rng.normal(0.0, 1.0 / np.sqrt(in_dim), (out_dim, in_dim))
    bias = np.zeros(out_dim)
    if branch == "layout":
        dec_weight = rng.normal(0.0, 0.01, (in_dim, out_dim))
        dec_bias = np.zeros(in_dim)
        return EncoderParams(branch, weight, bias, dec_weight, dec_bias)
    return EncoderParams(branch, weight, bias)


def preprocess(depth) -> np.ndarray:
    """Clip to [0.1, 20] m and scale to [0.005, 1]; returns flat (N, 2048)."""
    arr = depth.depth if isinstance(depth, PanoDepth) else np.asarray(depth, dtype=float)
    if arr.shape[-2:] != INPUT_SHAPE:
        raise EmbedError(f"encoder input must be {INPUT_SHAPE[0]}x{INPUT_SHAPE[1]}, got {arr.shape[-2:]}")
    flat = arr.reshape(-1, INPUT_DIM)
    return np.clip(flat, *DEPTH_CLIP) / DEPTH_SCALE


def forward(params: EncoderParams, x: np.ndarray):
    """Pre-normalisation outputs and unit embeddings for preprocessed inputs."""
    z = x @ params.weight.T + params.bias
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    if (norm == 0).any():
        raise EmbedError("encoder output has zero norm")
    return z, z / norm


def normalize_backward(z: np.ndarray, grad_e: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. z given the gradient w.r.t. e = z / |z|."""
    norm = np.linalg.norm(z, axis=-1, keepdims=True)
    e = z / norm
    return (grad_e - e * (e * grad_e).sum(-1, keepdims=True)) / norm


def encode(params: EncoderParams, depth) -> np.ndarray:
    """Unit-norm embedding(s). A single image gives shape (128,), a stack (N, 128)."""
    arr = depth.depth if isinstance(depth, PanoDepth) else np.asarray(depth, dtype=float)
    _, e = forward(params, preprocess(arr))
    return e[0] if arr.ndim == 2 else e


def decode_normalized(params: EncoderParams, e: np.ndarray) -> np.ndarray:
    if params.dec_weight is None:
        raise EmbedError("query-branch params have no decoder")
    return e @ params.dec_weight.T + params.dec_bias


def decode(params: EncoderParams, e: np.ndarray) -> np.ndarray:
    """Decoded layout depth in metres, shape (32, 64) (or (N, 32, 64))."""
    out = decode_normalized(params, np.asarray(e, dtype=float)) * DEPTH_SCALE
    return out.reshape(*np.shape(e)[:-1], *INPUT_SHAPE)


def save_params(path, params: EncoderParams):
    Path(path).write_bytes(params.to_bytes())


def load_params(path) -> EncoderParams:
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise EmbedError(f"{path}: truncated params file")
    magic, branch, in_dim, out_dim = struct.unpack_from("<4sIII", data)
    if magic != b"LLLC":
        raise EmbedError(f"{path}: bad magic {magic!r}")
    if branch >= len(BRANCHES):
        raise EmbedError(f"{path}: bad branch id {branch}")
    n_enc = out_dim * in_dim + out_dim
    n_dec = in_dim * out_dim + in_dim
    n = (len(data) - 16) // 4
    if n not in (n_enc, n_enc + n_dec):
        raise EmbedError(f"{path}: unexpected payload of {n} floats")
    vals = np.frombuffer(data, "<f4", n, 16).astype(float)
    weight = vals[:out_dim * in_dim].reshape(out_dim, in_dim)
    bias = vals[out_dim * in_dim:n_enc]
    dec_w = dec_b = None
    if n > n_enc:
        dec_w = vals[n_enc:n_enc + in_dim * out_dim].reshape(in_dim, out_dim)
        dec_b = vals[n_enc + in_dim * out_dim:]
    return EncoderParams(BRANCHES[branch], weight.copy(), bias.copy(),
                         None if dec_w is None else dec_w.copy(),
                         None if dec_b is None else dec_b.copy())
