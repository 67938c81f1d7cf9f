"""A small reverse-mode autodiff kernel over numpy arrays.

Operations are recorded on a :class:`Tape` in execution order; ``backward``
walks the tape in reverse and accumulates vector-Jacobian products. Only what
the displacement model and its losses need is provided: valid 2D
cross-correlation, dense layers, ReLU, concatenation, reshapes, a handful of
elementwise ops and the mean squared error. Everything runs in float64.

Tensors carry a leading batch axis where it matters: convolutions take
``(N, C, H, W)`` and dense layers ``(N, features)``.
"""

import hashlib
import json
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DataError, InvalidArgumentError, SchemaError, ShapeError, UsageError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_tape")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._tape = None

    @classmethod
    def leaf(cls, data, requires_grad=False, name=None):
        """Checked constructor for user-supplied values."""
        t = cls(data, requires_grad, name)
        if not np.all(np.isfinite(t.data)):
            raise InvalidArgumentError(f"tensor {name or ''} has non-finite entries")
        return t

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


class Tape:
    """Records operations for reverse-mode differentiation.

    With ``record=False`` the same ops run forward only, which is what the
    inference paths use.
    """

    def __init__(self, record=True):
        self.record = record
        self._nodes = []

    def __len__(self):
        return len(self._nodes)

    def _out(self, value, inputs, vjp):
        out = Tensor(value)
        if self.record and any(
            isinstance(x, Tensor) and (x.requires_grad or x._tape is self) for x in inputs
        ):
            out._tape = self
            self._nodes.append((out, inputs, vjp))
        return out

    # -- layers ---------------------------------------------------------

    def conv2d(self, x, w, b):
        """Valid cross-correlation: ``out[n,o,i,j] = sum w[o,c,a,b] x[n,c,i+a,j+b] + b[o]``."""
        xd, wd, bd = _data(x), _data(w), _data(b)
        if xd.ndim != 4 or wd.ndim != 4:
            raise ShapeError(f"conv2d expects 4-D input and kernel, got {xd.shape}, {wd.shape}")
        _, C, H, W = xd.shape
        O, Ck, kh, kw = wd.shape
        if C != Ck:
            raise ShapeError(f"input has {C} channels, kernel expects {Ck}")
        if H < kh or W < kw:
            raise ShapeError(f"input {H}x{W} smaller than kernel {kh}x{kw}")
        if bd.shape != (O,):
            raise ShapeError(f"bias shape {bd.shape} != ({O},)")
        win = sliding_window_view(xd, (kh, kw), axis=(2, 3))  # N,C,Ho,Wo,kh,kw
        out = np.tensordot(win, wd, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        out = out + bd[None, :, None, None]

        def vjp(g):
            gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
            gb = g.sum(axis=(0, 2, 3))
            gx = None
            if _needs(x, self):
                gp = np.pad(g, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
                gwin = sliding_window_view(gp, (kh, kw), axis=(2, 3))  # N,O,H,W,kh,kw
                flipped = wd[:, :, ::-1, ::-1]
                gx = np.tensordot(gwin, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
            return gx, gw, gb

        return self._out(np.ascontiguousarray(out), (x, w, b), vjp)

    def dense(self, x, w, b):
        """``z = x @ w.T + b`` for ``x`` of shape (N, in) or (in,)."""
        xd, wd, bd = _data(x), _data(w), _data(b)
        if wd.ndim != 2 or xd.shape[-1] != wd.shape[1] or xd.ndim not in (1, 2):
            raise ShapeError(f"dense: input {xd.shape} incompatible with weights {wd.shape}")
        if bd.shape != (wd.shape[0],):
            raise ShapeError(f"bias shape {bd.shape} != ({wd.shape[0]},)")
        out = xd @ wd.T + bd

        def vjp(g):
            g2 = np.atleast_2d(g)
            x2 = np.atleast_2d(xd)
            return g @ wd, g2.T @ x2, g2.sum(axis=0)

        return self._out(out, (x, w, b), vjp)

    def relu(self, x):
        xd = _data(x)
        mask = xd > 0
        return self._out(np.where(mask, xd, 0.0), (x,), lambda g: (g * mask,))

    def concat(self, xs, axis=1):
        datas = [_data(x) for x in xs]
        sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

        def vjp(g):
            return tuple(np.split(g, sizes, axis=axis))

        return self._out(np.concatenate(datas, axis=axis), tuple(xs), vjp)

    def reshape(self, x, shape):
        xd = _data(x)
        return self._out(xd.reshape(shape), (x,), lambda g: (g.reshape(xd.shape),))

    def flatten(self, x):
        xd = _data(x)
        return self.reshape(x, (xd.shape[0], -1))

    # -- elementwise and reductions -------------------------------------

    def add(self, a, b):
        ad, bd = _data(a), _data(b)
        _same(ad, bd, "add")
        return self._out(ad + bd, (a, b), lambda g: (g, g))

    def sub(self, a, b):
        ad, bd = _data(a), _data(b)
        _same(ad, bd, "sub")
        return self._out(ad - bd, (a, b), lambda g: (g, -g))

    def scale(self, x, c):
        c = float(c)
        return self._out(_data(x) * c, (x,), lambda g: (g * c,))

    def shift(self, x, c):
        return self._out(_data(x) + float(c), (x,), lambda g: (g,))

    def square(self, x):
        xd = _data(x)
        return self._out(xd * xd, (x,), lambda g: (2.0 * xd * g,))

    def sqrt(self, x):
        r = np.sqrt(_data(x))
        return self._out(r, (x,), lambda g: (g * 0.5 / r,))

    def abs(self, x):
        xd = _data(x)
        return self._out(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))

    def sum(self, x, axis=None):
        xd = _data(x)

        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, xd.shape).copy(),)
            return (np.broadcast_to(np.expand_dims(g, axis), xd.shape).copy(),)

        return self._out(np.asarray(xd.sum(axis=axis)), (x,), vjp)

    def mean(self, x):
        n = _data(x).size
        return self.scale(self.sum(x), 1.0 / n)

    def weighted_sum(self, terms, weights):
        """Scalar ``sum_i w_i * t_i`` over scalar tensors."""
        out = None
        for t, w in zip(terms, weights):
            st = self.scale(t, w)
            out = st if out is None else self._out(_data(out) + _data(st), (out, st), lambda g: (g, g))
        return out

    def mse(self, pred, target):
        """``(1/n) sum_i ||pred_i - target_i||^2`` with n the leading extent."""
        pd, td = _data(pred), _data(target)
        _same(pd, td, "mse")
        n = pd.shape[0] if pd.ndim else 1
        diff = pd - td
        value = np.asarray(np.sum(diff * diff) / n)

        def vjp(g):
            gp = (2.0 / n) * g * diff
            return gp, -gp

        return self._out(value, (pred, target), vjp)

    # -- reverse pass ---------------------------------------------------

    def backward(self, loss):
        """Accumulate d(loss)/d(x) into ``x.grad`` for every tensor on the tape.

        Returns a dict mapping each ``requires_grad`` tensor reached to its
        gradient. Tensors that do not influence the loss get zero gradients.
        """
        if not self.record:
            raise UsageError("this tape does not record; nothing to differentiate")
        if not isinstance(loss, Tensor) or loss._tape is not self or not self._nodes:
            raise UsageError("backward called before a forward pass recorded this loss")
        if loss.data.size != 1:
            raise UsageError(f"loss must be a scalar, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}
        for out, inputs, vjp in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for x, gx in zip(inputs, vjp(g)):
                if gx is None or not isinstance(x, Tensor):
                    continue
                if not (x.requires_grad or x._tape is self):
                    continue
                k = id(x)
                grads[k] = grads[k] + gx if k in grads else gx
                if x.requires_grad:
                    leaves[k] = x
        result = {}
        for k, x in leaves.items():
            x.grad = grads[k]
            result[x] = x.grad
        return result

    def gradients(self, loss, params):
        """Gradients for a name->Tensor mapping; zeros where the loss does not depend."""
        got = self.backward(loss)
        return {
            name: got.get(t, np.zeros_like(t.data)) for name, t in params.items()
        }


def _needs(x, tape):
    return isinstance(x, Tensor) and (x.requires_grad or x._tape is tape)


def _same(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- layer value types and forward-only helpers -------------------------


@dataclass
class ConvLayer:
    weight: np.ndarray  # (out, in, m1, m2)
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 4 or min(self.weight.shape[2:]) < 1:
            raise ShapeError("conv kernel must be (out, in, m1, m2) with m1, m2 >= 1")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("one bias per output channel")


@dataclass
class DenseLayer:
    weight: np.ndarray  # (n_out, n_in)
    bias: np.ndarray

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("dense weight must be (n_out, n_in) with one bias per output")


_FORWARD = Tape(record=False)


def conv2d_forward(x, layer: ConvLayer) -> Tensor:
    """Convolve a (C, H, W) or (N, C, H, W) input."""
    xd = _data(x)
    single = xd.ndim == 3
    out = _FORWARD.conv2d(xd[None] if single else xd, layer.weight, layer.bias)
    return Tensor(out.data[0] if single else out.data)


def dense_forward(x, layer: DenseLayer) -> Tensor:
    return Tensor(_FORWARD.dense(_data(x), layer.weight, layer.bias).data)


def relu(x) -> Tensor:
    return Tensor(np.maximum(_data(x), 0.0))


def mse(pred, target) -> float:
    return float(_FORWARD.mse(_data(pred), _data(target)).data)


# -- optimisers ----------------------------------------------------------


def _check_keys(params, other, what):
    if params.keys() != other.keys():
        raise ShapeError(f"{what} keys do not match parameters")
    for k in params:
        if np.shape(params[k]) != np.shape(other[k]):
            raise ShapeError(f"{what}[{k}] shape {np.shape(other[k])} != {np.shape(params[k])}")


def sgd_step(params, grads, eta):
    """Plain gradient step; returns new arrays."""
    _check_keys(params, grads, "grads")
    return {k: params[k] - eta * grads[k] for k in params}


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            **kw,
        )


def adam_step(params, grads, state: AdamState, eta):
    """Bias-corrected Adam update. Returns (new params, new state)."""
    _check_keys(params, grads, "grads")
    _check_keys(params, state.m, "first moment")
    _check_keys(params, state.v, "second moment")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_p[k] = p - eta * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


# -- array container -----------------------------------------------------
#
# Layout, version 1:
#   line 1  b"WHEELNAV-ARRAYS 1\n"
#   line 2  decimal byte length L of the header, then b"\n"
#   L bytes UTF-8 JSON: {"meta": {...}, "arrays": [{"name", "dtype", "shape",
#           "offset", "nbytes"}, ...]} with sorted keys
#   payload: arrays back to back, little-endian, row-major, at the listed
#           offsets from the start of the payload
# The writer is deterministic, so identical inputs give identical bytes.

MAGIC = b"WHEELNAV-ARRAYS"
FORMAT_VERSION = 1


def save_arrays(path, arrays, meta=None):
    entries, chunks, offset = [], [], 0
    for name, a in arrays.items():
        a = np.asarray(a)
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder not in ("|",) else a.dtype
        buf = np.ascontiguousarray(a, dtype=dt).tobytes()
        entries.append(
            {"name": name, "dtype": dt.str, "shape": list(a.shape), "offset": offset, "nbytes": len(buf)}
        )
        chunks.append(buf)
        offset += len(buf)
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC + b" %d\n" % FORMAT_VERSION)
        fh.write(b"%d\n" % len(header))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_arrays(path):
    """Read a container written by :func:`save_arrays`; returns (arrays, meta)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        line1, rest = raw.split(b"\n", 1)
        magic, version = line1.split(b" ")
        if magic != MAGIC:
            raise ValueError("bad magic")
        if int(version) != FORMAT_VERSION:
            raise SchemaError(f"{path}: unsupported container version {int(version)}")
        hlen_s, rest = rest.split(b"\n", 1)
        hlen = int(hlen_s)
        header = json.loads(rest[:hlen])
        payload = rest[hlen:]
    except SchemaError:
        raise
    except (ValueError, json.JSONDecodeError) as exc:
        raise SchemaError(f"{path}: not a wheelnav array container") from exc
    arrays = {}
    for e in header["arrays"]:
        chunk = payload[e["offset"] : e["offset"] + e["nbytes"]]
        if len(chunk) != e["nbytes"]:
            raise SchemaError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = np.frombuffer(chunk, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return arrays, header["meta"]


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
