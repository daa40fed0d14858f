"""Off-ResNet: a 3D residual CNN mapping blurred complex images to corrected ones.

Complex volumes travel through the network as two real channels (real,
imaginary).  Convolutions are channels-last, zero-padded to keep the spatial
shape, and evaluated as im2col slabs (one GEMM per kernel depth offset) so
that the heavy lifting lands in BLAS.  Gradients are written out by hand.
"""
import csv
import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .data import ComplexVolume, as_complex_array
from .errors import TrainingDivergence, ValidationError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
_COLS_BUDGET = 64 * 2 ** 20  # bytes per im2col slab


@dataclass(frozen=True)
class NetConfig:
    n_res_blocks: int = 3
    channels: int = 32
    kernel: int = 5
    global_skip: bool = True
    learning_rate: float = 1e-4
    patch: int = 32
    patch_stride: int = 16
    batch: int = 1
    seed: int = 0
    dtype: str = "float32"
    #: std multiplier of the output conv relative to He scaling
    out_init_scale: float = 0.1

    def __post_init__(self):
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValidationError(f"kernel must be odd, got {self.kernel}")
        if self.patch < self.kernel:
            raise ValidationError("patch must be >= kernel")
        if not 1 <= self.patch_stride <= self.patch:
            raise ValidationError("patch_stride must be in [1, patch]")
        if self.n_res_blocks < 0 or self.channels < 1 or self.batch < 1:
            raise ValidationError("n_res_blocks >= 0, channels >= 1, batch >= 1 required")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError("dtype must be float32 or float64")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive")

    @property
    def n_convs(self):
        return 2 * self.n_res_blocks + 2

    @property
    def receptive_radius(self):
        """Voxels an output can see in each direction."""
        return self.n_convs * (self.kernel - 1) // 2

    def as_dict(self):
        return asdict(self)


class NetParams:
    """Learnable tensors plus Adam moments and step counter."""

    def __init__(self, cfg, tensors, m=None, v=None, step=0):
        self.cfg = cfg
        self.tensors = dict(tensors)
        self.m = m if m is not None else {k: np.zeros_like(a) for k, a in self.tensors.items()}
        self.v = v if v is not None else {k: np.zeros_like(a) for k, a in self.tensors.items()}
        self.step = int(step)

    def names(self):
        return list(self.tensors)

    def copy(self):
        return NetParams(self.cfg, {k: a.copy() for k, a in self.tensors.items()},
                         {k: a.copy() for k, a in self.m.items()},
                         {k: a.copy() for k, a in self.v.items()}, self.step)

    def astype(self, dtype):
        cast = lambda d: {k: a.astype(dtype) for k, a in d.items()}  # noqa: E731
        cfg = NetConfig(**{**self.cfg.as_dict(), "dtype": np.dtype(dtype).name})
        return NetParams(cfg, cast(self.tensors), cast(self.m), cast(self.v), self.step)


def _layer_names(n_res_blocks):
    names = ["in"]
    for i in range(n_res_blocks):
        names += [f"block{i}.a", f"block{i}.b"]
    return names + ["out"]


def net_init(cfg):
    """He-initialized weights (output conv scaled by ``cfg.out_init_scale``), zero biases."""
    rng = np.random.default_rng(cfg.seed)
    k, c = cfg.kernel, cfg.channels
    dtype = np.dtype(cfg.dtype)
    tensors = {}
    for name in _layer_names(cfg.n_res_blocks):
        cin = 2 if name == "in" else c
        cout = 2 if name == "out" else c
        std = np.sqrt(2.0 / (cin * k ** 3))
        if name == "out":
            std *= cfg.out_init_scale
        tensors[f"{name}.w"] = (rng.standard_normal((k, k, k, cin, cout)) * std).astype(dtype)
        tensors[f"{name}.b"] = np.zeros(cout, dtype=dtype)
    return NetParams(cfg, tensors)


# --- convolution primitives (channels-last) --------------------------------

def _z_chunk(b, y, x, k, c, itemsize):
    per_z = b * y * x * k * k * c * itemsize
    return max(1, int(_COLS_BUDGET // max(per_z, 1)))


def _cols(xp, z0, z1, dz, k):
    slab = xp[:, z0 + dz:z1 + dz]
    win = sliding_window_view(slab, (k, k), axis=(2, 3))
    c = slab.shape[-1]
    return win.transpose(0, 1, 2, 3, 5, 6, 4).reshape(-1, k * k * c)


def conv3d(x, w, b=None):
    """Zero-padded 'same' 3D cross-correlation.

    ``x``: (B, Z, Y, X, Cin); ``w``: (k, k, k, Cin, Cout); returns (B, Z, Y, X, Cout).
    """
    bsz, nz, ny, nx, cin = x.shape
    k, cout = w.shape[0], w.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0)))
    out = np.zeros((bsz, nz, ny, nx, cout), dtype=np.result_type(x, w))
    wmat = w.reshape(k, k * k * cin, cout)
    zc = _z_chunk(bsz, ny, nx, k, cin, x.itemsize)
    for z0 in range(0, nz, zc):
        z1 = min(nz, z0 + zc)
        acc = out[:, z0:z1].reshape(-1, cout)
        for dz in range(k):
            acc += _cols(xp, z0, z1, dz, k) @ wmat[dz]
        out[:, z0:z1] = acc.reshape(bsz, z1 - z0, ny, nx, cout)
    if b is not None:
        out += b
    return out


def conv3d_weight_grad(x, g, k):
    """Gradient of ``sum(g * conv3d(x, w))`` with respect to ``w``."""
    bsz, nz, ny, nx, cin = x.shape
    cout = g.shape[-1]
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (p, p), (0, 0)))
    dw = np.zeros((k, k * k * cin, cout), dtype=np.result_type(x, g))
    zc = _z_chunk(bsz, ny, nx, k, cin, x.itemsize)
    for z0 in range(0, nz, zc):
        z1 = min(nz, z0 + zc)
        gm = g[:, z0:z1].reshape(-1, cout)
        for dz in range(k):
            dw[dz] += _cols(xp, z0, z1, dz, k).T @ gm
    return dw.reshape(k, k, k, cin, cout)


def conv3d_input_grad(g, w):
    """Gradient of ``sum(g * conv3d(x, w))`` with respect to ``x``."""
    wt = np.ascontiguousarray(w[::-1, ::-1, ::-1].transpose(0, 1, 2, 4, 3))
    return conv3d(g, wt)


# --- network ------------------------------------------------------------------

def _to_channels(x):
    arr = as_complex_array(x)
    if arr.ndim == 3:
        arr = arr[None]
    return np.stack([arr.real, arr.imag], axis=-1)


def _from_channels(y):
    return y[..., 0] + 1j * y[..., 1]


def _check_input(p, shape):
    if any(s < p.cfg.kernel for s in shape[-3:]):
        raise ValidationError(f"input shape {shape} smaller than kernel {p.cfg.kernel}")


def _forward(p, x2, keep=False):
    t = p.tensors
    cache = {"x": x2}
    pre = conv3d(x2, t["in.w"], t["in.b"])
    h = np.maximum(pre, 0)
    if keep:
        cache["in.pre"], cache["in.out"] = pre, h
    for i in range(p.cfg.n_res_blocks):
        a_pre = conv3d(h, t[f"block{i}.a.w"], t[f"block{i}.a.b"])
        a = np.maximum(a_pre, 0)
        c = conv3d(a, t[f"block{i}.b.w"], t[f"block{i}.b.b"])
        if keep:
            cache[f"block{i}.in"], cache[f"block{i}.a.pre"], cache[f"block{i}.a.out"] = h, a_pre, a
        h = h + c
    if keep:
        cache["out.in"] = h
    y = conv3d(h, t["out.w"], t["out.b"])
    if p.cfg.global_skip:
        y = y + x2
    return y, cache


def net_forward(p, x):
    """Apply the network to a complex volume of any shape >= kernel per axis.

    ``x`` may be a ComplexVolume, a complex array (Z, Y, X), or a batch
    (B, Z, Y, X). Returns the same kind of object.
    """
    single = isinstance(x, ComplexVolume) or np.ndim(as_complex_array(x)) == 3
    arr = as_complex_array(x)
    _check_input(p, arr.shape)
    dtype = np.dtype(p.cfg.dtype)
    y, _ = _forward(p, _to_channels(arr).astype(dtype, copy=False))
    out = _from_channels(y.astype(np.float64))
    if single:
        out = out[0]
        return ComplexVolume(out) if isinstance(x, ComplexVolume) else out
    return out


def loss_l1(pred, target):
    """Mean absolute difference over voxels and the real/imaginary channels."""
    a = as_complex_array(pred)
    b = as_complex_array(target)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return float((np.abs(d.real).sum() + np.abs(d.imag).sum()) / (2 * d.size))


def _loss_and_grad_out(y, t2):
    d = y - t2
    loss = float(np.abs(d).sum(dtype=np.float64) / d.size)
    return loss, (np.sign(d) / d.size).astype(y.dtype)


def _backward(p, cache, gy):
    t = p.tensors
    k = p.cfg.kernel
    grads = {}
    h = cache["out.in"]
    grads["out.w"] = conv3d_weight_grad(h, gy, k)
    grads["out.b"] = gy.sum(axis=(0, 1, 2, 3))
    gh = conv3d_input_grad(gy, t["out.w"])
    for i in reversed(range(p.cfg.n_res_blocks)):
        a = cache[f"block{i}.a.out"]
        grads[f"block{i}.b.w"] = conv3d_weight_grad(a, gh, k)
        grads[f"block{i}.b.b"] = gh.sum(axis=(0, 1, 2, 3))
        ga = conv3d_input_grad(gh, t[f"block{i}.b.w"]) * (cache[f"block{i}.a.pre"] > 0)
        hin = cache[f"block{i}.in"]
        grads[f"block{i}.a.w"] = conv3d_weight_grad(hin, ga, k)
        grads[f"block{i}.a.b"] = ga.sum(axis=(0, 1, 2, 3))
        gh = gh + conv3d_input_grad(ga, t[f"block{i}.a.w"])
    g0 = gh * (cache["in.pre"] > 0)
    grads["in.w"] = conv3d_weight_grad(cache["x"], g0, k)
    grads["in.b"] = g0.sum(axis=(0, 1, 2, 3))
    return grads


def net_backward(p, x, target, return_loss=False):
    """Exact gradients of :func:`loss_l1` with respect to every parameter.

    The subgradient of ``|.|`` at zero is taken as 0.
    """
    xa = as_complex_array(x)
    ta = as_complex_array(target)
    if xa.shape != ta.shape:
        raise ValidationError(f"shape mismatch {xa.shape} vs {ta.shape}")
    _check_input(p, xa.shape)
    dtype = np.dtype(p.cfg.dtype)
    x2 = _to_channels(xa).astype(dtype, copy=False)
    t2 = _to_channels(ta).astype(dtype, copy=False)
    y, cache = _forward(p, x2, keep=True)
    loss, gy = _loss_and_grad_out(y, t2)
    grads = _backward(p, cache, gy)
    return (grads, loss) if return_loss else grads


def adam_step(p, grads, lr=None):
    """One Adam update in place; returns ``p``.

    Raises :class:`TrainingDivergence` (leaving ``p`` untouched) if any
    gradient is non-finite.
    """
    lr = p.cfg.learning_rate if lr is None else lr
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDivergence(f"non-finite gradient in {name}")
    p.step += 1
    bc1 = 1.0 - ADAM_BETA1 ** p.step
    bc2 = 1.0 - ADAM_BETA2 ** p.step
    for name, g in grads.items():
        m = p.m[name]
        v = p.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * (g * g)
        upd = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        p.tensors[name] -= upd.astype(p.tensors[name].dtype)
    return p


# --- patches and tiling --------------------------------------------------------

def _axis_origins(n, patch, stride):
    if n <= patch:
        return [(n - patch) // 2]
    origins = list(range(0, n - patch + 1, stride))
    if origins[-1] != n - patch:
        origins.append(n - patch)
    return origins


def patch_origins(shape, patch, stride):
    """Regular grid of patch origins; the last origin per axis is clamped to the edge."""
    axes = [_axis_origins(n, patch, stride) for n in shape]
    return [(a, b, c) for a in axes[0] for b in axes[1] for c in axes[2]]


def crop_patch(arr, origin, patch):
    """Patch at ``origin``; negative origins (volume smaller than patch) are zero-padded."""
    out = np.zeros((patch,) * 3, dtype=arr.dtype)
    src, dst = [], []
    for o, n in zip(origin, arr.shape):
        lo = max(o, 0)
        hi = min(o + patch, n)
        src.append(slice(lo, hi))
        dst.append(slice(lo - o, hi - o))
    out[tuple(dst)] = arr[tuple(src)]
    return out


def extract_patches(vol, patch, stride):
    """List of ``(origin, patch_array)`` covering the volume."""
    arr = as_complex_array(vol)
    return [(o, crop_patch(arr, o, patch)) for o in patch_origins(arr.shape, patch, stride)]


def _axis_windows(n, tile, overlap):
    if tile >= n:
        return [0], n
    stride = max(1, tile - overlap)
    starts = list(range(0, n - tile + 1, stride))
    if starts[-1] != n - tile:
        starts.append(n - tile)
    return starts, tile


def _blend_weights(start, size, n, margin, overlap):
    d = np.arange(size, dtype=np.float64)
    ramp_len = max(overlap - 2 * margin, 0) + 1
    w = np.ones(size)
    if start > 0:
        w = np.minimum(w, np.clip((d - margin + 1) / ramp_len, 0, 1))
    if start + size < n:
        w = np.minimum(w, np.clip((size - 1 - d - margin + 1) / ramp_len, 0, 1))
    return w


def apply(p, vol, tile=64, overlap=None):
    """Tiled full-volume inference with linear blending in overlaps.

    Each tile discards (zero weight) a margin of ``min(receptive radius,
    overlap // 2)`` voxels next to interior tile edges, then ramps linearly to
    full weight. With ``overlap >= 2 * receptive radius`` the result equals
    :func:`net_forward` up to rounding; with ``tile`` covering the volume it
    is identical.
    """
    cfg = p.cfg
    overlap = 2 * cfg.receptive_radius if overlap is None else int(overlap)
    if overlap < cfg.kernel - 1:
        raise ValidationError(f"overlap must be >= kernel-1 = {cfg.kernel - 1}")
    arr = as_complex_array(vol)
    shape = arr.shape
    windows = [_axis_windows(n, tile, overlap) for n in shape]
    if all(len(s) == 1 for s, _ in windows):
        out = net_forward(p, arr)
        return ComplexVolume(out) if isinstance(vol, ComplexVolume) else out
    margin = min(cfg.receptive_radius, overlap // 2)
    acc = np.zeros(shape, dtype=np.complex128)
    wsum = np.zeros(shape)
    (zs, zn), (ys, yn), (xs, xn) = windows
    for z in zs:
        wz = _blend_weights(z, zn, shape[0], margin, overlap)
        for y in ys:
            wy = _blend_weights(y, yn, shape[1], margin, overlap)
            for x in xs:
                wx = _blend_weights(x, xn, shape[2], margin, overlap)
                w = wz[:, None, None] * wy[None, :, None] * wx[None, None, :]
                sl = (slice(z, z + zn), slice(y, y + yn), slice(x, x + xn))
                acc[sl] += w * net_forward(p, arr[sl])
                wsum[sl] += w
    out = acc / wsum
    return ComplexVolume(out) if isinstance(vol, ComplexVolume) else out


# --- checkpoints -----------------------------------------------------------------

def save_checkpoint(p, path):
    """Write ``<path>.npz`` (little-endian float32 tensors) and ``<path>.json``."""
    arrays = {}
    for prefix, d in (("param", p.tensors), ("adam_m", p.m), ("adam_v", p.v)):
        for k, a in d.items():
            arrays[f"{prefix}/{k}"] = np.asarray(a, dtype="<f4")
    tmp = f"{path}.tmp.npz"
    np.savez(tmp, **arrays)
    os.replace(tmp, f"{path}.npz")
    manifest = {"config": p.cfg.as_dict(), "step": p.step,
                "tensors": {k: list(a.shape) for k, a in p.tensors.items()},
                "format": "npz-float32-le"}
    with open(f"{path}.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_checkpoint(path, dtype=None):
    path = str(path)
    for suffix in (".npz", ".json"):
        if path.endswith(suffix):
            path = path[: -len(suffix)]
    with open(f"{path}.json") as fh:
        manifest = json.load(fh)
    cfg = NetConfig(**manifest["config"])
    if dtype is not None:
        cfg = NetConfig(**{**cfg.as_dict(), "dtype": np.dtype(dtype).name})
    dt = np.dtype(cfg.dtype)
    groups = {"param": {}, "adam_m": {}, "adam_v": {}}
    with np.load(f"{path}.npz") as z:
        for key in z.files:
            prefix, name = key.split("/", 1)
            groups[prefix][name] = z[key].astype(dt)
    return NetParams(cfg, groups["param"], groups["adam_m"], groups["adam_v"], manifest["step"])


# --- training ---------------------------------------------------------------------

def _patch_index(pairs, patch, stride):
    index = []
    for i, (inp, _) in enumerate(pairs):
        for o in patch_origins(as_complex_array(inp).shape, patch, stride):
            index.append((i, o))
    return index


def _batch(pairs, items, patch, dtype):
    xs, ts = [], []
    for i, o in items:
        inp, tgt = pairs[i]
        xs.append(crop_patch(as_complex_array(inp), o, patch))
        ts.append(crop_patch(as_complex_array(tgt), o, patch))
    return (_to_channels(np.stack(xs)).astype(dtype), _to_channels(np.stack(ts)).astype(dtype))


def evaluate_l1(p, pairs, index=None):
    """Mean L1 over all patches of ``pairs`` (forward only)."""
    cfg = p.cfg
    dtype = np.dtype(cfg.dtype)
    index = _patch_index(pairs, cfg.patch, cfg.patch_stride) if index is None else index
    if not index:
        return float("nan")
    total = 0.0
    for s in range(0, len(index), cfg.batch):
        items = index[s:s + cfg.batch]
        x2, t2 = _batch(pairs, items, cfg.patch, dtype)
        y, _ = _forward(p, x2)
        total += float(np.abs(y - t2).sum(dtype=np.float64)) / (y.size / len(items))
    return total / len(index)


def _write_history(path, history):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_l1", "val_l1"])
        for row in history:
            w.writerow([row["epoch"], repr(row["train_l1"]), repr(row["val_l1"])])


def train(cfg, dataset, epochs=8, checkpoint_dir=None, val_dataset=None,
          val_fraction=0.1, params=None, log=None, log_every=0):
    """Patch-based L1 training with Adam.

    Parameters
    ----------
    cfg : NetConfig
    dataset : list of (input, target) complex volumes
    epochs : int
    checkpoint_dir : path, optional
        Receives ``epoch_XXX.npz/json`` after every epoch and ``history.csv``.
    val_dataset : list of pairs, optional
        If omitted, a seeded ``val_fraction`` of ``dataset`` is held out.
    params : NetParams, optional
        Resume from these parameters instead of :func:`net_init`.
    log : callable, optional
        Called with a message string after every epoch, and every
        ``log_every`` updates if that is positive.

    Returns
    -------
    (NetParams, list of dict)
        Final parameters and the loss history; row 0 holds the losses before
        the first update.
    """
    pairs = list(dataset)
    if not pairs:
        raise ValidationError("empty training dataset")
    rng = np.random.default_rng(cfg.seed)
    if val_dataset is None and val_fraction > 0 and len(pairs) > 1:
        order = rng.permutation(len(pairs))
        n_val = max(1, int(round(val_fraction * len(pairs))))
        val_pairs = [pairs[i] for i in sorted(order[:n_val])]
        pairs = [pairs[i] for i in sorted(order[n_val:])]
    else:
        val_pairs = list(val_dataset or [])
    p = params.copy() if params is not None else net_init(cfg)
    dtype = np.dtype(cfg.dtype)
    index = _patch_index(pairs, cfg.patch, cfg.patch_stride)
    val_index = _patch_index(val_pairs, cfg.patch, cfg.patch_stride)
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)

    history = [{"epoch": 0, "train_l1": evaluate_l1(p, pairs, index),
                "val_l1": evaluate_l1(p, val_pairs, val_index) if val_index else float("nan")}]
    for epoch in range(1, int(epochs) + 1):
        perm = rng.permutation(len(index))
        total = 0.0
        for s in range(0, len(perm), cfg.batch):
            items = [index[j] for j in perm[s:s + cfg.batch]]
            x2, t2 = _batch(pairs, items, cfg.patch, dtype)
            y, cache = _forward(p, x2, keep=True)
            loss, gy = _loss_and_grad_out(y, t2)
            if not np.isfinite(loss):
                raise TrainingDivergence(f"non-finite loss at epoch {epoch}")
            adam_step(p, _backward(p, cache, gy))
            total += loss * len(items)
            if log is not None and log_every and (s // cfg.batch + 1) % log_every == 0:
                log(f"epoch {epoch} step {s // cfg.batch + 1}: l1={loss:.6g}")
        row = {"epoch": epoch, "train_l1": total / len(index),
               "val_l1": evaluate_l1(p, val_pairs, val_index) if val_index else float("nan")}
        history.append(row)
        if checkpoint_dir is not None:
            save_checkpoint(p, os.path.join(checkpoint_dir, f"epoch_{epoch:03d}"))
            _write_history(os.path.join(checkpoint_dir, "history.csv"), history)
        if log is not None:
            log(f"epoch {epoch}: train_l1={row['train_l1']:.6g} val_l1={row['val_l1']:.6g}")
    return p, history
