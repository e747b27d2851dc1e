"""Heatmap decoders: the adaptive (content-aware) decoder and three baselines.

The adaptive decoder has two heads that both read the low-resolution
feature map:

* a coarse affordance head: 1x1 conv to one channel, then sigmoid;
* a kernel generator: 1x1 compressor -> 3x3 expander producing ``s*s*k*k``
  channels -> pixel shuffle to ``k*k`` logits per output pixel -> softmax.

Each output pixel is the kernel-weighted (convex) combination of the ``k x k``
coarse neighborhood around its source cell ``(y // s, x // s)``, with
out-of-range neighbors clamped to the border.

Every decoder exposes ``forward_batch`` / ``backward_batch`` on raw arrays of
shape ``(B, C, h, w)`` so the training loop can stay vectorized; the
single-sample functions at the bottom wrap them with the grid types.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from affordmap.errors import DimensionError, NumericalError, ParameterError
from affordmap.grid import FeatureMap, Heatmap

DECODER_KINDS = ("ahd", "bilinear", "deconv", "pixelshuffle")
KERNEL_SUM_TOL = 1e-6


def sigmoid(z):
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax_normalize(logits, axis=-1):
    """Numerically stable softmax along ``axis``."""
    logits = np.asarray(logits)
    logits = logits.astype(np.result_type(logits.dtype, np.float32), copy=False)
    if not np.all(np.isfinite(logits)):
        raise NumericalError("softmax input must be finite")
    e = np.exp(logits - logits.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class DecoderConfig:
    kind: str = "ahd"
    channels: int = 256
    c_m: int = 36
    k: int = 5
    s: int = 14

    def __post_init__(self):
        if self.kind not in DECODER_KINDS:
            raise ParameterError(f"unknown decoder kind {self.kind!r}; expected one of {DECODER_KINDS}")
        if self.channels < 1 or self.c_m < 1 or self.s < 1:
            raise ParameterError("channels, c_m and s must be >= 1")
        if self.k < 1 or self.k % 2 == 0:
            raise ParameterError(f"kernel size k must be odd and >= 1, got {self.k}")


class _Params:
    """Shared plumbing: named tensor access and functional updates."""

    tensor_names: tuple[str, ...] = ()

    def tensors(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.tensor_names}

    def with_tensors(self, new: dict[str, np.ndarray]):
        return replace(self, **new)

    def num_parameters(self) -> int:
        return int(sum(t.size for t in self.tensors().values()))

    def astype(self, dtype):
        return self.with_tensors({n: t.astype(dtype) for n, t in self.tensors().items()})

    def equals(self, other) -> bool:
        if type(self) is not type(other):
            return False
        a, b = self.tensors(), other.tensors()
        same_meta = all(getattr(self, f.name) == getattr(other, f.name)
                        for f in fields(self) if f.name not in self.tensor_names)
        return same_meta and all(np.array_equal(a[n], b[n]) for n in a)

    def _check_features(self, f):
        if f.ndim != 4:
            raise DimensionError(f"expected features of shape (B, C, h, w), got {f.shape}")
        if f.shape[1] != self.channels:
            raise DimensionError(f"features have {f.shape[1]} channels, decoder expects {self.channels}")


def _conv1x1(w, f):
    """``(O, C)`` weights applied to ``(B, C, h, w)`` features."""
    bsz, c, h, wd = f.shape
    return np.matmul(w, f.reshape(bsz, c, h * wd)).reshape(bsz, w.shape[0], h, wd)


def _batched_outer(a, b):
    """``sum_b a[b] @ b[b].T`` for ``(B, O, P)`` and ``(B, I, P)``."""
    return np.matmul(a, b.transpose(0, 2, 1)).sum(axis=0)


def _cap(f, w, b):
    z = np.einsum("c,bchw->bhw", w, f) + b[0]
    return sigmoid(z)


def _cap_grads(f, mlow, dmlow, w):
    dz = dmlow * mlow * (1.0 - mlow)
    return np.einsum("bhw,bchw->c", dz, f), np.array([dz.sum()]), np.einsum("c,bhw->bchw", w, dz)


def _clamped_patches(m, k):
    """``(B, k*k, h, w)`` stack of edge-replicated shifts; index ``a*k + b`` is offset ``(a-r, b-r)``."""
    _, h, w = m.shape
    r = k // 2
    padded = np.pad(m, ((0, 0), (r, r), (r, r)), mode="edge")
    return np.stack([padded[:, a:a + h, b:b + w] for a in range(k) for b in range(k)], axis=1)


def _fold_clamped_patches(dpatches, k):
    """Adjoint of ``_clamped_patches``."""
    bsz, _, h, w = dpatches.shape
    r = k // 2
    dpad = np.zeros((bsz, h + 2 * r, w + 2 * r), dtype=dpatches.dtype)
    for a in range(k):
        for b in range(k):
            dpad[:, a:a + h, b:b + w] += dpatches[:, a * k + b]
    # edge replication sends every padded row/column back to the border cell
    dpad[:, r, :] += dpad[:, :r, :].sum(axis=1)
    dpad[:, r + h - 1, :] += dpad[:, r + h:, :].sum(axis=1)
    dpad[:, :, r] += dpad[:, :, :r].sum(axis=2)
    dpad[:, :, r + w - 1] += dpad[:, :, r + w:].sum(axis=2)
    return dpad[:, r:r + h, r:r + w]


def _im2col3(x):
    bsz, c, h, w = x.shape
    p = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.stack([p[:, :, a:a + h, b:b + w] for a in range(3) for b in range(3)], axis=2)
    return cols.reshape(bsz, c * 9, h * w)


def _col2im3(dcols, c, h, w):
    bsz = dcols.shape[0]
    d = dcols.reshape(bsz, c, 9, h, w)
    dp = np.zeros((bsz, c, h + 2, w + 2), dtype=dcols.dtype)
    for a in range(3):
        for b in range(3):
            dp[:, :, a:a + h, b:b + w] += d[:, :, a * 3 + b]
    return dp[:, :, 1:-1, 1:-1]


def _reassemble(weights, patches, s):
    """Convex reassembly: weights ``(B, kk, H, W)``, patches ``(B, kk, h, w)`` -> ``(B, H, W)``."""
    bsz, kk, h, w = patches.shape
    w6 = weights.reshape(bsz, kk, h, s, w, s)
    out = (w6 * patches[:, :, :, None, :, None]).sum(axis=1)
    return out.reshape(bsz, h * s, w * s)


@dataclass(frozen=True, eq=False)
class AHDParams(_Params):
    cap_w: np.ndarray
    cap_b: np.ndarray
    comp_w: np.ndarray
    comp_b: np.ndarray
    exp_w: np.ndarray
    exp_b: np.ndarray
    k: int
    s: int

    kind = "ahd"
    tensor_names = ("cap_w", "cap_b", "comp_w", "comp_b", "exp_w", "exp_b")

    def __post_init__(self):
        c, cm = self.channels, self.c_m
        out_ch = self.s * self.s * self.k * self.k
        expected = {"cap_w": (c,), "cap_b": (1,), "comp_w": (cm, c), "comp_b": (cm,),
                    "exp_w": (out_ch, cm, 3, 3), "exp_b": (out_ch,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ParameterError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")

    @property
    def channels(self) -> int:
        return self.cap_w.shape[0]

    @property
    def c_m(self) -> int:
        return self.comp_w.shape[0]

    @property
    def config(self) -> DecoderConfig:
        return DecoderConfig("ahd", self.channels, self.c_m, self.k, self.s)

    def coarse(self, f):
        self._check_features(f)
        return _cap(f, self.cap_w, self.cap_b)

    def kernel_logits(self, f):
        """Raw ``(B, k*k, s*h, s*w)`` logits before softmax, plus the im2col cache."""
        self._check_features(f)
        bsz, _, h, w = f.shape
        k, s = self.k, self.s
        comp = _conv1x1(self.comp_w, f) + self.comp_b[:, None, None]
        cols = _im2col3(comp)
        e = np.matmul(self.exp_w.reshape(self.exp_w.shape[0], -1), cols) + self.exp_b[:, None]
        # channel kk*s*s + dy*s + dx lands on output pixel (y*s + dy, x*s + dx)
        e = e.reshape(bsz, k * k, s, s, h, w).transpose(0, 1, 4, 2, 5, 3)
        return e.reshape(bsz, k * k, h * s, w * s), cols

    def kernels(self, f):
        logits, _ = self.kernel_logits(f)
        return softmax_normalize(logits, axis=1)

    def forward_batch(self, f):
        mlow = self.coarse(f)
        logits, cols = self.kernel_logits(f)
        kern = softmax_normalize(logits, axis=1)
        patches = _clamped_patches(mlow, self.k)
        out = _reassemble(kern, patches, self.s)
        return out, (f, mlow, cols, kern, patches)

    def backward_batch(self, cache, dout):
        f, mlow, cols, kern, patches = cache
        bsz, _, h, w = f.shape
        k, s, kk = self.k, self.s, self.k * self.k
        g6 = dout.reshape(bsz, h, s, w, s)
        w6 = kern.reshape(bsz, kk, h, s, w, s)
        dkern = g6[:, None] * patches[:, :, :, None, :, None]
        dpatches = (g6[:, None] * w6).sum(axis=(3, 5))
        dmlow = _fold_clamped_patches(dpatches, k)

        dlogits = w6 * (dkern - (w6 * dkern).sum(axis=1, keepdims=True))
        de = dlogits.transpose(0, 1, 3, 5, 2, 4).reshape(bsz, kk * s * s, h * w)
        exp2 = self.exp_w.reshape(self.exp_w.shape[0], -1)
        g_exp_w = _batched_outer(de, cols).reshape(self.exp_w.shape)
        g_exp_b = de.sum(axis=(0, 2))
        dcomp = _col2im3(np.matmul(exp2.T, de), self.c_m, h, w)
        g_comp_w = _batched_outer(dcomp.reshape(bsz, self.c_m, -1), f.reshape(bsz, f.shape[1], -1))
        g_comp_b = dcomp.sum(axis=(0, 2, 3))

        g_cap_w, g_cap_b, _ = _cap_grads(f, mlow, dmlow, self.cap_w)
        return {"cap_w": g_cap_w, "cap_b": g_cap_b, "comp_w": g_comp_w, "comp_b": g_comp_b,
                "exp_w": g_exp_w, "exp_b": g_exp_b}


def bilinear_matrix(n_in: int, s: int, dtype=np.float64) -> np.ndarray:
    """``(n_in*s, n_in)`` align-corners-false interpolation matrix."""
    n_out = n_in * s
    src = (np.arange(n_out) + 0.5) / s - 0.5
    src = np.clip(src, 0.0, None)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    mat = np.zeros((n_out, n_in), dtype=dtype)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - t)
    np.add.at(mat, (rows, i1), t)
    return mat


@dataclass(frozen=True, eq=False)
class BilinearParams(_Params):
    cap_w: np.ndarray
    cap_b: np.ndarray
    s: int

    kind = "bilinear"
    tensor_names = ("cap_w", "cap_b")

    @property
    def channels(self) -> int:
        return self.cap_w.shape[0]

    def forward_batch(self, f):
        self._check_features(f)
        mlow = _cap(f, self.cap_w, self.cap_b)
        _, h, w = mlow.shape
        rh, rw = bilinear_matrix(h, self.s, f.dtype), bilinear_matrix(w, self.s, f.dtype)
        out = rh @ mlow @ rw.T
        return out, (f, mlow, rh, rw)

    def backward_batch(self, cache, dout):
        f, mlow, rh, rw = cache
        dmlow = rh.T @ dout @ rw
        g_w, g_b, _ = _cap_grads(f, mlow, dmlow, self.cap_w)
        return {"cap_w": g_w, "cap_b": g_b}


def _deconv_logits(mlow, kernel, s):
    """Transposed conv, kernel ``2s x 2s``, stride ``s``, cropped to ``(s*h, s*w)``.

    The full output is ``(h+1)*s`` per side; the crop starts at ``s // 2``.
    """
    bsz, h, w = mlow.shape
    blk = kernel.reshape(2, s, 2, s).transpose(0, 2, 1, 3)  # (ia, ib, u, v)
    full = np.zeros((bsz, h + 1, s, w + 1, s), dtype=mlow.dtype)
    for ia in range(2):
        for ib in range(2):
            full[:, ia:ia + h, :, ib:ib + w, :] += np.einsum("byx,uv->byuxv", mlow, blk[ia, ib])
    full = full.reshape(bsz, (h + 1) * s, (w + 1) * s)
    c = s // 2
    return full[:, c:c + h * s, c:c + w * s]


def _deconv_logits_backward(dlog, mlow, kernel, s):
    bsz, h, w = mlow.shape
    c = s // 2
    dfull = np.zeros((bsz, (h + 1) * s, (w + 1) * s), dtype=dlog.dtype)
    dfull[:, c:c + h * s, c:c + w * s] = dlog
    d6 = dfull.reshape(bsz, h + 1, s, w + 1, s)
    blk = kernel.reshape(2, s, 2, s).transpose(0, 2, 1, 3)
    dblk = np.zeros_like(blk)
    dmlow = np.zeros_like(mlow)
    for ia in range(2):
        for ib in range(2):
            part = d6[:, ia:ia + h, :, ib:ib + w, :]
            dblk[ia, ib] = np.einsum("byuxv,byx->uv", part, mlow)
            dmlow += np.einsum("byuxv,uv->byx", part, blk[ia, ib])
    return dblk.transpose(0, 2, 1, 3).reshape(2 * s, 2 * s), dmlow


@dataclass(frozen=True, eq=False)
class DeconvParams(_Params):
    cap_w: np.ndarray
    cap_b: np.ndarray
    deconv_w: np.ndarray
    deconv_b: np.ndarray
    s: int

    kind = "deconv"
    tensor_names = ("cap_w", "cap_b", "deconv_w", "deconv_b")

    def __post_init__(self):
        if self.deconv_w.shape != (2 * self.s, 2 * self.s):
            raise ParameterError(f"deconv kernel must be {2 * self.s}x{2 * self.s}, got {self.deconv_w.shape}")

    @property
    def channels(self) -> int:
        return self.cap_w.shape[0]

    def forward_batch(self, f):
        self._check_features(f)
        mlow = _cap(f, self.cap_w, self.cap_b)
        out = sigmoid(_deconv_logits(mlow, self.deconv_w, self.s) + self.deconv_b[0])
        return out, (f, mlow, out)

    def backward_batch(self, cache, dout):
        f, mlow, out = cache
        dlog = dout * out * (1.0 - out)
        g_k, dmlow = _deconv_logits_backward(dlog, mlow, self.deconv_w, self.s)
        g_w, g_b, _ = _cap_grads(f, mlow, dmlow, self.cap_w)
        return {"cap_w": g_w, "cap_b": g_b, "deconv_w": g_k, "deconv_b": np.array([dlog.sum()])}


def _depth_to_space(x, s):
    """``(B, s*s, h, w)`` -> ``(B, s*h, s*w)``; channel ``dy*s + dx`` fills sub-pixel ``(dy, dx)``."""
    bsz, _, h, w = x.shape
    return x.reshape(bsz, s, s, h, w).transpose(0, 3, 1, 4, 2).reshape(bsz, h * s, w * s)


def _space_to_depth(x, s):
    bsz, hh, ww = x.shape
    h, w = hh // s, ww // s
    return x.reshape(bsz, h, s, w, s).transpose(0, 2, 4, 1, 3).reshape(bsz, s * s, h, w)


@dataclass(frozen=True, eq=False)
class PixelShuffleParams(_Params):
    ps_w: np.ndarray
    ps_b: np.ndarray
    s: int

    kind = "pixelshuffle"
    tensor_names = ("ps_w", "ps_b")

    def __post_init__(self):
        if self.ps_w.ndim != 2 or self.ps_w.shape[0] != self.s * self.s:
            raise ParameterError(f"pixel-shuffle weights must be (s*s, C), got {self.ps_w.shape}")

    @property
    def channels(self) -> int:
        return self.ps_w.shape[1]

    def forward_batch(self, f):
        self._check_features(f)
        z = _conv1x1(self.ps_w, f) + self.ps_b[:, None, None]
        out = sigmoid(_depth_to_space(z, self.s))
        return out, (f, out)

    def backward_batch(self, cache, dout):
        f, out = cache
        dz = _space_to_depth(dout * out * (1.0 - out), self.s)
        bsz, c = f.shape[:2]
        g_w = _batched_outer(dz.reshape(bsz, dz.shape[1], -1), f.reshape(bsz, c, -1))
        return {"ps_w": g_w, "ps_b": dz.sum(axis=(0, 2, 3))}


def init_params(seed: int, config: DecoderConfig):
    """Seeded init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero."""
    if not isinstance(config, DecoderConfig):
        raise ParameterError("config must be a DecoderConfig")
    rng = np.random.default_rng(seed)
    c, s = config.channels, config.s

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    if config.kind == "pixelshuffle":
        return PixelShuffleParams(uniform((s * s, c), c), np.zeros(s * s), s)
    cap_w, cap_b = uniform((c,), c), np.zeros(1)
    if config.kind == "bilinear":
        return BilinearParams(cap_w, cap_b, s)
    if config.kind == "deconv":
        kk = 2 * s
        return DeconvParams(cap_w, cap_b, uniform((kk, kk), kk * kk), np.zeros(1), s)
    cm, out_ch = config.c_m, s * s * config.k * config.k
    return AHDParams(cap_w, cap_b, uniform((cm, c), c), np.zeros(cm),
                     uniform((out_ch, cm, 3, 3), cm * 9), np.zeros(out_ch), config.k, s)


def zero_params(config: DecoderConfig):
    p = init_params(0, config)
    return p.with_tensors({n: np.zeros_like(t) for n, t in p.tensors().items()})


def decoder_forward(params, features: np.ndarray) -> np.ndarray:
    """Batched forward: ``(B, C, h, w)`` -> ``(B, s*h, s*w)``."""
    out, _ = params.forward_batch(features)
    return out


# ---------------------------------------------------------------------------
# Single-sample operations on the grid types.


@dataclass(frozen=True, eq=False)
class CoarseAffordance(Heatmap):
    """Sigmoid output of the coarse head, one value per feature cell."""


@dataclass(frozen=True, eq=False)
class KernelField:
    """Per-output-pixel ``k x k`` weights, stored as ``(k*k, out_height, out_width)``."""

    weights: np.ndarray
    k: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 3 or w.shape[0] != self.k * self.k:
            raise DimensionError(f"kernel field must be (k*k, H, W) with k={self.k}, got {w.shape}")
        if np.any(w < 0):
            raise ValueError("kernel weights must be nonnegative")
        if np.max(np.abs(w.sum(axis=0) - 1.0)) > KERNEL_SUM_TOL:
            raise ValueError("kernel weights must sum to 1 per pixel")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "weights", w)

    @property
    def out_height(self) -> int:
        return self.weights.shape[1]

    @property
    def out_width(self) -> int:
        return self.weights.shape[2]

    def at(self, x: int, y: int) -> np.ndarray:
        """``k x k`` kernel for output pixel ``(x, y)``; row index is the vertical offset."""
        return self.weights[:, y, x].reshape(self.k, self.k)


def _batch(f: FeatureMap) -> np.ndarray:
    return f.values[None]


def cap_forward(f: FeatureMap, p: AHDParams) -> CoarseAffordance:
    return CoarseAffordance(p.coarse(_batch(f))[0])


def akg_forward(f: FeatureMap, p: AHDParams) -> KernelField:
    return KernelField(p.kernels(_batch(f))[0], p.k)


def convex_upsample(m: Heatmap, kf: KernelField, s: int) -> Heatmap:
    h, w = m.shape
    if (kf.out_height, kf.out_width) != (s * h, s * w):
        raise DimensionError(
            f"kernel field is {kf.out_width}x{kf.out_height}, expected {s * w}x{s * h}")
    patches = _clamped_patches(m.values[None], kf.k)
    out = _reassemble(kf.weights[None], patches, s)[0]
    # rounding can leave a convex combination a few ulp outside [0, 1]
    return Heatmap(np.clip(out, 0.0, 1.0))


def ahd_forward(f: FeatureMap, p: AHDParams) -> Heatmap:
    return Heatmap(decoder_forward(p, _batch(f))[0])


def bilinear_upsample(m: Heatmap, s: int) -> Heatmap:
    h, w = m.shape
    out = bilinear_matrix(h, s) @ m.values @ bilinear_matrix(w, s).T
    return Heatmap(np.clip(out, 0.0, 1.0))


def deconv_upsample(m: Heatmap, weights, s: int) -> Heatmap:
    """``weights`` is ``(kernel, bias)`` with a ``2s x 2s`` kernel."""
    kernel, bias = weights
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (2 * s, 2 * s):
        raise DimensionError(f"deconv kernel must be {2 * s}x{2 * s}, got {kernel.shape}")
    logits = _deconv_logits(m.values[None], kernel, s)[0] + float(np.ravel(bias)[0])
    return Heatmap(sigmoid(logits))


def pixelshuffle_upsample(f: FeatureMap, weights, s: int) -> Heatmap:
    """``weights`` is ``(w, b)`` with ``w`` of shape ``(s*s, C)``."""
    w, b = weights
    p = PixelShuffleParams(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64).reshape(-1), s)
    return Heatmap(decoder_forward(p, _batch(f))[0])
