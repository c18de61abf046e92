"""
Forward-only reference of the spatio-temporal feature fusion block.

Windowed motion-aware attention between two consecutive feature maps, a
motion-driven gate that aligns the previous frame, and a per-pixel softmax
fusion of the three resulting maps blended back into the current frame.
All functions take (B, C, H, W) arrays and fixed parameters; there is no
training.
"""

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Tuple, Union

import numpy as np
from loguru import logger
from scipy.special import expit, softmax

from app.core.config import (
    FUSION_ALPHA, STFF_CHANNELS, STFF_HEADS, STFF_MOTION_DIM, STFF_SIZE, STFF_WINDOW
)
from app.core.exceptions import DataIOError, InputValidationError

_ARRAY_FIELDS = ("w_q", "w_kv", "w_pos", "b_pos", "gate_w", "gate_b", "fuse_w", "fuse_b")
SIMPLEX_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class StffParams:
    """
    Fixed parameters of the fusion block.

    w_q (C, C) and w_kv (C, 2C) project tokens to queries and keys/values;
    w_pos (2, dim_m) and b_pos project normalized window coordinates to the
    positional encoding; gate_w (C, dim_m) and gate_b are the 1x1 gating conv;
    fuse_w (3, 3C) and fuse_b are the 1x1 fusion conv.
    """
    alpha: float
    window: int
    heads: int
    w_q: np.ndarray
    w_kv: np.ndarray
    w_pos: np.ndarray
    b_pos: np.ndarray
    gate_w: np.ndarray
    gate_b: np.ndarray
    fuse_w: np.ndarray
    fuse_b: np.ndarray

    def __post_init__(self):
        c = self.channels
        if not 0.0 <= self.alpha <= 1.0:
            raise InputValidationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.window < 1 or self.heads < 1:
            raise InputValidationError("window and heads must be positive")
        if c % self.heads:
            raise InputValidationError(f"{c} channels cannot be split into {self.heads} heads")
        expected = {
            "w_q": (c, c), "w_kv": (c, 2 * c), "w_pos": (2, self.motion_dim), "b_pos": (self.motion_dim,),
            "gate_w": (c, self.motion_dim), "gate_b": (c,), "fuse_w": (3, 3 * c), "fuse_b": (3,),
        }
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise InputValidationError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def motion_dim(self) -> int:
        return self.w_pos.shape[1]

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @classmethod
    def zeros(cls, channels: int = STFF_CHANNELS, *, window: int = STFF_WINDOW, heads: int = STFF_HEADS,
              motion_dim: int = STFF_MOTION_DIM, alpha: float = FUSION_ALPHA) -> "StffParams":
        c, m = channels, motion_dim
        return cls(
            alpha=alpha, window=window, heads=heads,
            w_q=np.zeros((c, c)), w_kv=np.zeros((c, 2 * c)),
            w_pos=np.zeros((2, m)), b_pos=np.zeros(m),
            gate_w=np.zeros((c, m)), gate_b=np.zeros(c),
            fuse_w=np.zeros((3, 3 * c)), fuse_b=np.zeros(3),
        )

    @classmethod
    def random(cls, seed: int, channels: int = STFF_CHANNELS, *, window: int = STFF_WINDOW,
               heads: int = STFF_HEADS, motion_dim: int = STFF_MOTION_DIM,
               alpha: float = FUSION_ALPHA) -> "StffParams":
        """Seeded parameters scaled by 1/sqrt(fan_in)."""
        rng = np.random.default_rng(seed)
        c, m = channels, motion_dim

        def draw(shape, fan_in):
            return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)

        return cls(
            alpha=alpha, window=window, heads=heads,
            w_q=draw((c, c), c), w_kv=draw((c, 2 * c), c),
            w_pos=draw((2, m), 2), b_pos=draw(m, 2),
            gate_w=draw((c, m), m), gate_b=draw(c, m),
            fuse_w=draw((3, 3 * c), 3 * c), fuse_b=draw(3, 3 * c),
        )


@dataclass(frozen=True, eq=False)
class AttentionOutputs:
    x_app: np.ndarray        # (B, C, H, W)
    x_motion: np.ndarray     # (B, dim_m, H, W)
    attention: np.ndarray    # (B, nH, nW, heads, S*S, S*S)


def _check_pair(x_t: np.ndarray, x_prev: np.ndarray, p: StffParams) -> None:
    if x_t.ndim != 4 or x_t.shape != x_prev.shape:
        raise InputValidationError(f"Feature maps must share a (B, C, H, W) shape, got {x_t.shape} and {x_prev.shape}")
    _, c, h, w = x_t.shape
    if c != p.channels:
        raise InputValidationError(f"Feature maps have {c} channels, parameters expect {p.channels}")
    if h % p.window or w % p.window:
        raise InputValidationError(f"Spatial size {h}x{w} is not divisible by window {p.window}")
    if not (np.all(np.isfinite(x_t)) and np.all(np.isfinite(x_prev))):
        raise InputValidationError("Feature maps contain non-finite values")


def _to_windows(x: np.ndarray, s: int) -> np.ndarray:
    """(B, C, H, W) -> (B, H/s, W/s, s*s, C) tokens."""
    b, c, h, w = x.shape
    tiles = x.reshape(b, c, h // s, s, w // s, s).transpose(0, 2, 4, 3, 5, 1)
    return tiles.reshape(b, h // s, w // s, s * s, c)


def _from_windows(tokens: np.ndarray, s: int) -> np.ndarray:
    """Inverse of _to_windows."""
    b, nh, nw, _, c = tokens.shape
    tiles = tokens.reshape(b, nh, nw, s, s, c).transpose(0, 5, 1, 3, 2, 4)
    return tiles.reshape(b, c, nh * s, nw * s)


def positional_encoding(p: StffParams) -> np.ndarray:
    """Projected normalized (row, col) coordinates of the window positions, shape (S*S, dim_m)."""
    s = p.window
    axis = np.arange(s) / (s - 1) if s > 1 else np.zeros(1)
    rows, cols = np.meshgrid(axis, axis, indexing="ij")
    coords = np.stack([rows.ravel(), cols.ravel()], axis=1)
    return coords @ p.w_pos + p.b_pos


def motion_attention(x_t: np.ndarray, x_prev: np.ndarray, p: StffParams) -> AttentionOutputs:
    """
    Windowed attention with queries from the current frame and keys/values
    from the previous one.

    The motion feature is the attention-weighted positional encoding minus
    the encoding itself, averaged over heads.

    Raises:
        InputValidationError: On mismatched or non-divisible shapes
    """
    _check_pair(x_t, x_prev, p)
    s, heads, d_k, c = p.window, p.heads, p.head_dim, p.channels

    q = _to_windows(x_t, s) @ p.w_q
    kv = _to_windows(x_prev, s) @ p.w_kv
    k, v = kv[..., :c], kv[..., c:]

    def split_heads(t):
        return t.reshape(*t.shape[:-1], heads, d_k).swapaxes(-2, -3)

    q, k, v = split_heads(q), split_heads(k), split_heads(v)
    scores = q @ k.swapaxes(-1, -2) / math.sqrt(d_k)
    attention = softmax(scores, axis=-1)

    x_app = (attention @ v).swapaxes(-2, -3)
    x_app = x_app.reshape(*x_app.shape[:-2], c)

    e_pos = positional_encoding(p)
    x_motion = (attention @ e_pos - e_pos).mean(axis=-3)

    return AttentionOutputs(
        x_app=_from_windows(x_app, s),
        x_motion=_from_windows(x_motion, s),
        attention=attention,
    )


def _conv1x1(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return np.einsum("ok,bkhw->bohw", weight, x) + bias[None, :, None, None]


def gating_weights(x_motion: np.ndarray, p: StffParams) -> np.ndarray:
    return expit(_conv1x1(x_motion, p.gate_w, p.gate_b))


def gated_align(x_prev: np.ndarray, x_motion: np.ndarray, p: StffParams) -> np.ndarray:
    """Scale the previous frame elementwise by sigmoid gates computed from the motion feature."""
    if x_motion.shape[0] != x_prev.shape[0] or x_motion.shape[2:] != x_prev.shape[2:]:
        raise InputValidationError(f"Motion feature {x_motion.shape} does not match feature map {x_prev.shape}")
    return x_prev * gating_weights(x_motion, p)


def fusion_weights(x_t: np.ndarray, x_app: np.ndarray, x_aligned: np.ndarray, p: StffParams) -> np.ndarray:
    """Per-pixel softmax weights over the three inputs, shape (B, 3, H, W)."""
    stacked = np.concatenate([x_t, x_app, x_aligned], axis=1)
    return softmax(_conv1x1(stacked, p.fuse_w, p.fuse_b), axis=1)


def dynamic_fuse(x_t: np.ndarray, x_app: np.ndarray, x_aligned: np.ndarray, p: StffParams) -> np.ndarray:
    if not x_t.shape == x_app.shape == x_aligned.shape:
        raise InputValidationError(f"Fusion inputs differ in shape: {x_t.shape}, {x_app.shape}, {x_aligned.shape}")
    weights = fusion_weights(x_t, x_app, x_aligned, p)
    return weights[:, 0:1] * x_t + weights[:, 1:2] * x_app + weights[:, 2:3] * x_aligned


def stff_forward(x_t: np.ndarray, x_prev: np.ndarray, p: StffParams) -> np.ndarray:
    """
    Full block: attention, gated alignment, fusion and the residual blend
    alpha * fused + (1 - alpha) * x_t.
    """
    outputs = motion_attention(x_t, x_prev, p)
    aligned = gated_align(x_prev, outputs.x_motion, p)
    fused = dynamic_fuse(x_t, outputs.x_app, aligned, p)
    return p.alpha * fused + (1.0 - p.alpha) * x_t


def dump_params(p: StffParams, path: Union[str, Path]) -> None:
    """
    Write parameters as plain text.

    Scalars are `key = value` lines; each array is an `array <name> <shape...>`
    header followed by one line of values printed with 17 significant digits.
    """
    lines = [f"alpha = {format(float(p.alpha), '.17g')}", f"window = {p.window}", f"heads = {p.heads}"]
    for name in _ARRAY_FIELDS:
        values = getattr(p, name)
        lines.append(f"array {name} {' '.join(str(d) for d in values.shape)}")
        lines.append(" ".join(format(float(v), ".17g") for v in values.ravel()))
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"Could not write parameters to {path}: {e}")


def load_params(path: Union[str, Path]) -> StffParams:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataIOError(f"Could not read parameters from {path}: {e}")

    values: Dict[str, object] = {}
    index = 0
    try:
        while index < len(lines):
            line = lines[index].strip()
            index += 1
            if not line:
                continue
            if line.startswith("array "):
                _, name, *shape = line.split()
                data = [float(v) for v in lines[index].split()] if index < len(lines) else []
                index += 1
                values[name] = np.array(data, dtype=float).reshape(tuple(int(d) for d in shape))
            else:
                key, _, raw = line.partition("=")
                values[key.strip()] = raw.strip()
        return StffParams(
            alpha=float(values["alpha"]),
            window=int(values["window"]),
            heads=int(values["heads"]),
            **{name: values[name] for name in _ARRAY_FIELDS},
        )
    except (KeyError, ValueError) as e:
        if isinstance(e, InputValidationError):
            raise
        raise InputValidationError(f"Malformed parameter file {path}: {e}")


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def _feature_pair(rng: np.random.Generator, shape: Tuple[int, int, int, int]) -> Tuple[np.ndarray, np.ndarray]:
    return rng.standard_normal(shape), rng.standard_normal(shape)


def _check_simplex(rng, p) -> CheckResult:
    x_t, x_prev = _feature_pair(rng, (1, p.channels, STFF_SIZE, STFF_SIZE))
    outputs = motion_attention(x_t, x_prev, p)
    aligned = gated_align(x_prev, outputs.x_motion, p)
    weights = fusion_weights(x_t, outputs.x_app, aligned, p)
    attention_error = float(np.max(np.abs(outputs.attention.sum(axis=-1) - 1.0)))
    fusion_error = float(np.max(np.abs(weights.sum(axis=1) - 1.0)))
    passed = (attention_error <= SIMPLEX_TOLERANCE and fusion_error <= SIMPLEX_TOLERANCE
              and outputs.attention.min() >= 0.0 and weights.min() >= 0.0)
    return CheckResult("simplex", passed,
                       f"attention row error {attention_error:.2e}, fusion weight error {fusion_error:.2e}")


def _check_gate_range(rng, p) -> CheckResult:
    x_t, x_prev = _feature_pair(rng, (1, p.channels, STFF_SIZE, STFF_SIZE))
    gates = gating_weights(motion_attention(x_t, x_prev, p).x_motion, p)
    passed = bool(np.all(gates > 0.0) and np.all(gates < 1.0))
    return CheckResult("gate_range", passed, f"gates in [{gates.min():.4f}, {gates.max():.4f}]")


def _check_zero_motion(rng, p) -> CheckResult:
    single = replace(p, window=1)
    x_t, x_prev = _feature_pair(rng, (1, p.channels, 4, 4))
    x_motion = motion_attention(x_t, x_prev, single).x_motion
    return CheckResult("zero_motion", bool(np.all(x_motion == 0.0)),
                       f"max |motion| {float(np.max(np.abs(x_motion))):.2e} with 1x1 windows")


def _check_residual_identity(rng, p) -> CheckResult:
    x_t, x_prev = _feature_pair(rng, (1, p.channels, STFF_SIZE, STFF_SIZE))
    out = stff_forward(x_t, x_prev, replace(p, alpha=0.0))
    return CheckResult("residual_identity", bool(np.array_equal(out, x_t)), "alpha = 0 returns the current frame")


def _check_fixed_point(rng, p) -> CheckResult:
    # A dominant bias on the current-frame fusion channel makes the fused map x_t.
    pinned = replace(p, fuse_w=np.zeros_like(p.fuse_w), fuse_b=np.array([40.0, 0.0, 0.0]))
    x_t = rng.standard_normal((1, p.channels, STFF_SIZE, STFF_SIZE))
    error = float(np.max(np.abs(stff_forward(x_t, x_t.copy(), pinned) - x_t)))
    return CheckResult("fixed_point", error <= SIMPLEX_TOLERANCE, f"max deviation {error:.2e}")


def _check_uniform_fusion(rng, p) -> CheckResult:
    zero = StffParams.zeros(p.channels, window=p.window, heads=p.heads, motion_dim=p.motion_dim)
    x_t, x_app, x_aligned = (rng.standard_normal((1, p.channels, 8, 8)) for _ in range(3))
    error = float(np.max(np.abs(dynamic_fuse(x_t, x_app, x_aligned, zero) - (x_t + x_app + x_aligned) / 3.0)))
    return CheckResult("uniform_fusion", error <= SIMPLEX_TOLERANCE, f"max deviation from mean {error:.2e}")


def _check_shapes(rng, p) -> CheckResult:
    failures = []
    for _ in range(20):
        heads = int(rng.choice([1, 2, 4]))
        channels = heads * int(rng.integers(1, 5))
        window = int(rng.choice([1, 2, 4]))
        shape = (int(rng.integers(1, 3)), channels, window * int(rng.integers(1, 5)), window * int(rng.integers(1, 5)))
        params = StffParams.random(int(rng.integers(0, 2**31)), channels, window=window, heads=heads,
                                   motion_dim=int(rng.integers(1, 6)))
        x_t, x_prev = _feature_pair(rng, shape)
        out = stff_forward(x_t, x_prev, params)
        if out.shape != shape or not np.all(np.isfinite(out)):
            failures.append(shape)
    return CheckResult("shape_preservation", not failures,
                       f"{20 - len(failures)}/20 configurations preserved shape")


def _check_smoothness(rng, p, epsilon: float = 1e-4) -> CheckResult:
    x_t, x_prev = _feature_pair(rng, (1, p.channels, STFF_SIZE, STFF_SIZE))
    base = stff_forward(x_t, x_prev, p)
    norm = max(float(np.linalg.norm(getattr(p, name))) for name in ("w_q", "w_kv", "gate_w", "fuse_w"))
    bound = 10.0 * epsilon * (1.0 + norm)
    worst = 0.0
    for source in (x_t, x_prev):
        index = tuple(int(rng.integers(0, d)) for d in source.shape)
        source[index] += epsilon
        worst = max(worst, float(np.max(np.abs(stff_forward(x_t, x_prev, p) - base))))
        source[index] -= epsilon
    return CheckResult("finite_difference", worst <= bound, f"max change {worst:.2e}, bound {bound:.2e}")


_CHECKS: List[Callable[[np.random.Generator, StffParams], CheckResult]] = [
    _check_simplex,
    _check_gate_range,
    _check_zero_motion,
    _check_residual_identity,
    _check_fixed_point,
    _check_uniform_fusion,
    _check_shapes,
    _check_smoothness,
]


def run_invariant_checks(seed: int = 0) -> List[CheckResult]:
    """Run every numerical invariant of the fusion block on seeded toy tensors."""
    rng = np.random.default_rng(seed)
    params = StffParams.random(seed)
    results = [check(rng, params) for check in _CHECKS]
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning(f"Fusion block checks failed: {', '.join(failed)}")
    else:
        logger.info(f"All {len(results)} fusion block checks passed (seed {seed})")
    return results
