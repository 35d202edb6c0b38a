"""Binary tensor/model containers, CSV labels and features, JSON run configs.

Tensor file (``.tbvt``), all integers little-endian::

    b"TBVT" | u8 version=1 | u8 order N | 2 zero bytes | N x u64 extents
    | prod(extents) x f64, row-major

Model file (``.tbvm``)::

    b"TBVM" | u8 version=1 | u64 N | u64 K | u64 R | N x u64 dims | u8 flags
    | W1 .. WN (D_n x R, row-major f64) | Wh (K x R) | f64 a_bar, b_bar, a0, b0, tol
    | mean tensor (prod(dims) x f64) when flags bit 0 is set
"""

import json
import struct

import numpy as np

from .model import CpBasis, ModelConfig, NoisePosterior, TbvModel

TENSOR_MAGIC = b"TBVT"
MODEL_MAGIC = b"TBVM"
VERSION = 1
_MAX_ELEMENTS = 1 << 56


class FormatError(ValueError):
    pass


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ConfigError(ValueError):
    pass


def _f64(values):
    return np.ascontiguousarray(values, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, buf, what):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedError(
                f"{self.what}: truncated, need {n} bytes at offset {self.pos}, "
                f"have {len(self.buf) - self.pos}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, shape):
        count = _element_count(shape, self.what)
        arr = np.frombuffer(self.take(8 * count), dtype="<f8").astype(float)
        return arr.reshape(shape)

    def finish(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes")


def _element_count(shape, what):
    count = 1
    for d in shape:
        count *= int(d)
        if count > _MAX_ELEMENTS:
            raise FormatError(f"{what}: extents {tuple(shape)} overflow the element count")
    return count


def _check_header(reader, magic):
    got = reader.take(4)
    if got != magic:
        raise BadMagicError(f"{reader.what}: bad magic {got!r}, expected {magic!r}")
    (version,) = reader.unpack("<B")
    if version != VERSION:
        raise UnsupportedVersionError(f"{reader.what}: unsupported version {version}")


def tensor_to_bytes(t):
    t = np.asarray(t, dtype=float)
    if t.ndim < 1 or t.ndim > 255 or min(t.shape) < 1:
        raise ValueError(f"cannot serialize tensor of shape {t.shape}")
    header = TENSOR_MAGIC + struct.pack("<BB2x", VERSION, t.ndim)
    return header + struct.pack(f"<{t.ndim}Q", *t.shape) + _f64(t)


def tensor_from_bytes(buf, what="tensor"):
    r = _Reader(buf, what)
    _check_header(r, TENSOR_MAGIC)
    order, pad0, pad1 = r.unpack("<BBB")
    if order < 1:
        raise FormatError(f"{what}: order must be at least 1")
    if pad0 or pad1:
        raise FormatError(f"{what}: nonzero padding bytes")
    shape = r.unpack(f"<{order}Q")
    if min(shape) < 1:
        raise FormatError(f"{what}: zero extent in {shape}")
    out = r.floats(shape)
    r.finish()
    return out


def save_tensor(path, t):
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(t))


def load_tensor(path):
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read(), str(path))


def model_to_bytes(model):
    b = model.basis
    centered = model.mean is not None
    parts = [
        MODEL_MAGIC,
        struct.pack("<B", VERSION),
        struct.pack("<QQQ", b.order, b.k, b.r),
        struct.pack(f"<{b.order}Q", *b.dims),
        struct.pack("<B", 1 if centered else 0),
    ]
    parts += [_f64(f) for f in b.factors]
    parts.append(_f64(b.w_h))
    c = model.config
    parts.append(struct.pack("<5d", model.noise.a_bar, model.noise.b_bar, c.a0, c.b0, c.tol))
    if centered:
        parts.append(_f64(model.mean))
    return b"".join(parts)


def model_from_bytes(buf, what="model"):
    r = _Reader(buf, what)
    _check_header(r, MODEL_MAGIC)
    order, k, rank = r.unpack("<QQQ")
    if order < 1 or k < 1 or rank < 1 or order > 255:
        raise FormatError(f"{what}: invalid sizes N={order} K={k} R={rank}")
    dims = r.unpack(f"<{order}Q")
    if min(dims) < 1:
        raise FormatError(f"{what}: zero extent in {dims}")
    (flags,) = r.unpack("<B")
    if flags & ~1:
        raise FormatError(f"{what}: unknown flag bits {flags:#x}")
    factors = tuple(r.floats((d, rank)) for d in dims)
    w_h = r.floats((k, rank))
    a_bar, b_bar, a0, b0, tol = r.unpack("<5d")
    mean = None
    if flags & 1:
        try:
            mean = r.floats(tuple(dims))
        except TruncatedError as exc:
            raise FormatError(f"{what}: centered flag set but mean payload missing") from exc
    r.finish()
    config = ModelConfig(k=int(k), r=int(rank), a0=a0, b0=b0, tol=tol, center=mean is not None)
    return TbvModel(
        basis=CpBasis(factors=factors, w_h=w_h),
        noise=NoisePosterior(a_bar, b_bar),
        config=config,
        mean=mean,
    )


def save_model(path, model):
    with open(path, "wb") as f:
        f.write(model_to_bytes(model))


def load_model(path):
    with open(path, "rb") as f:
        return model_from_bytes(f.read(), str(path))


def load_labels(path):
    labels = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            text = line.strip()
            if not text:
                continue
            try:
                value = int(text)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: not an integer label: {text!r}") from None
            if value < 0:
                raise FormatError(f"{path}:{lineno}: negative label {value}")
            labels.append(value)
    return np.array(labels, dtype=int)


def save_labels(path, labels):
    with open(path, "w") as f:
        f.writelines(f"{int(v)}\n" for v in labels)


def save_features(path, features):
    """Write an ``M x K`` matrix, one sample per line, 17 significant digits."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    with open(path, "w") as f:
        for row in features:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_features(path):
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            text = line.strip()
            if not text:
                continue
            try:
                row = [float(v) for v in text.split(",")]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: malformed number in {text!r}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}:{lineno}: ragged row, {len(row)} values, expected {width}")
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no feature rows")
    return np.array(rows, dtype=float)


def load_csv_stack(paths):
    """Stack equally-shaped CSV matrices as frontal slices of a ``(D1, D2, M)`` tensor."""
    mats = [load_features(p) for p in paths]
    if not mats:
        raise ValueError("no CSV files given")
    shape = mats[0].shape
    for p, m in zip(paths, mats):
        if m.shape != shape:
            raise FormatError(f"{p}: shape {m.shape} differs from {shape}")
    return np.stack(mats, axis=-1)


RUN_CONFIG_KEYS = ("k", "r", "a0", "b0", "tol", "max_iters", "seed", "init_scale", "center")


def load_run_config(path):
    """Parse a JSON run configuration; unknown keys are an error."""
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    for key in data:
        if key not in RUN_CONFIG_KEYS:
            raise ConfigError(f"{path}: unknown config key {key!r}")
    return data


def make_config(file_values=None, **overrides):
    """Merge config-file values with explicit overrides (``None`` means unset)."""
    values = dict(file_values or {})
    values.update({k: v for k, v in overrides.items() if v is not None})
    missing = [k for k in ("k", "r") if k not in values]
    if missing:
        raise ConfigError(f"missing required setting(s): {', '.join(missing)}")
    try:
        return ModelConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
