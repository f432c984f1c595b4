"""Small feed-forward networks with hand-written reverse-mode gradients.

Two layouts share one flat parameter vector convention:

* ``conv``: same-padded 2-D convolutions over a (batch, channel, rows, cols)
  tensor, a smooth activation between layers, one output channel.
* ``mlp``: dense layers over the flattened patch.

Both add a learned scalar skip term ``s * x`` to the final layer, so the raw
output is ``body(x) + s * x`` and an all-zero parameter vector gives an
all-zero output.

With ``conditioning="input"`` the body also receives log std(t) as an extra
constant input channel (conv) or input unit (mlp). The default ``"scale"``
leaves the body blind to t.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import SeededRng


def _silu(x):
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return x * sig, sig


def _silu_grad(x, sig):
    return sig * (1.0 + x * (1.0 - sig))


_ACTIVATIONS = ("silu", "tanh")
_CONDITIONING = ("scale", "input")


@dataclass(frozen=True)
class Architecture:
    kind: str = "conv"
    patch_shape: tuple[int, int] = (128, 64)
    widths: tuple[int, ...] = (16, 16, 16)
    kernel: tuple[int, int] = (3, 3)
    activation: str = "silu"
    conditioning: str = "scale"

    def __post_init__(self):
        if self.kind not in ("conv", "mlp"):
            raise ValueError(f"unknown network kind {self.kind!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}, got {self.activation!r}")
        if self.conditioning not in _CONDITIONING:
            raise ValueError(f"conditioning must be one of {_CONDITIONING}, got {self.conditioning!r}")
        object.__setattr__(self, "patch_shape", tuple(int(v) for v in self.patch_shape))
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        kernel = self.kernel
        kernel = (kernel, kernel) if np.isscalar(kernel) else tuple(int(v) for v in kernel)
        if any(k < 1 or k % 2 == 0 for k in kernel):
            raise ValueError(f"kernel sizes must be odd, got {kernel}")
        object.__setattr__(self, "kernel", kernel)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def layer_shapes(self) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
        """(weight shape, bias shape) per layer."""
        shapes = []
        extra = 1 if self.conditioning == "input" else 0
        if self.kind == "conv":
            sizes = (1 + extra, *self.widths, 1)
            for c_in, c_out in zip(sizes[:-1], sizes[1:]):
                shapes.append(((c_out, c_in, *self.kernel), (c_out,)))
        else:
            dim = self.patch_shape[0] * self.patch_shape[1]
            sizes = (dim + extra, *self.widths, dim)
            for n_in, n_out in zip(sizes[:-1], sizes[1:]):
                shapes.append(((n_in, n_out), (n_out,)))
        return shapes

    @property
    def n_params(self) -> int:
        return 1 + sum(int(np.prod(w)) + int(np.prod(b)) for w, b in self.layer_shapes())


class Network:
    """Parameter unpacking plus forward/backward passes for an Architecture."""

    def __init__(self, arch: Architecture):
        self.arch = arch
        self._shapes = arch.layer_shapes()

    def init_params(self, rng: SeededRng) -> np.ndarray:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, zero skip."""
        chunks = []
        for w_shape, b_shape in self._shapes:
            fan_in = int(np.prod(w_shape[1:])) if self.arch.kind == "conv" else w_shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            chunks.append((2.0 * rng.uniform(int(np.prod(w_shape))) - 1.0) * bound)
            chunks.append(np.zeros(int(np.prod(b_shape))))
        chunks.append(np.zeros(1))
        return np.concatenate(chunks)

    def unpack(self, params: np.ndarray):
        if params.shape != (self.arch.n_params,):
            raise ValueError(f"expected {self.arch.n_params} parameters, got shape {params.shape}")
        layers, pos = [], 0
        for w_shape, b_shape in self._shapes:
            nw, nb = int(np.prod(w_shape)), int(np.prod(b_shape))
            layers.append((params[pos : pos + nw].reshape(w_shape), params[pos + nw : pos + nw + nb]))
            pos += nw + nb
        return layers, params[pos]

    def _act(self, z):
        if self.arch.activation == "tanh":
            a = np.tanh(z)
            return a, a
        return _silu(z)

    def _act_grad(self, z, saved):
        if self.arch.activation == "tanh":
            return 1.0 - saved * saved
        return _silu_grad(z, saved)

    def forward(self, params: np.ndarray, x: np.ndarray, std=None):
        """Raw output for a batch ``x`` of shape (batch, rows, cols).

        ``std`` (scalar or one value per item) is required for input conditioning.
        """
        layers, skip = self.unpack(params)
        batch = x.shape[0]
        h = x[:, None] if self.arch.kind == "conv" else x.reshape(batch, -1)
        if self.arch.conditioning == "input":
            if std is None:
                raise ValueError("input-conditioned network needs std(t)")
            level = np.log(np.broadcast_to(np.asarray(std, dtype=np.float64), (batch,)))
            if self.arch.kind == "conv":
                plane = np.broadcast_to(level[:, None, None, None], (batch, 1) + x.shape[1:])
                h = np.concatenate([h, plane], axis=1)
            else:
                h = np.concatenate([h, level[:, None]], axis=1)
        cache = []
        for i, (w, b) in enumerate(layers):
            if self.arch.kind == "conv":
                z, win = _conv_forward(h, w, b)
            else:
                z, win = h @ w + b, h
            last = i == len(layers) - 1
            if last:
                cache.append((win, z, None))
                h = z
            else:
                a, saved = self._act(z)
                cache.append((win, z, saved))
                h = a
        out = h.reshape(x.shape) + skip * x
        return out, (x, cache)

    def backward(self, params: np.ndarray, state, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of sum(grad_out * raw_output) with respect to ``params``."""
        layers, _ = self.unpack(params)
        x, cache = state
        batch = x.shape[0]
        grads = []
        g_skip = np.sum(grad_out * x)
        g = grad_out[:, None] if self.arch.kind == "conv" else grad_out.reshape(batch, -1)
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            win, z, saved = cache[i]
            if saved is not None:
                g = g * self._act_grad(z, saved)
            if self.arch.kind == "conv":
                gw, gb = _conv_param_grads(win, g)
                g_in = _conv_input_grad(g, w) if i > 0 else None
            else:
                gw, gb = win.T @ g, g.sum(axis=0)
                g_in = g @ w.T if i > 0 else None
            grads.append((gw, gb))
            g = g_in
        flat = []
        for gw, gb in reversed(grads):
            flat.append(gw.ravel())
            flat.append(gb.ravel())
        flat.append(np.array([g_skip]))
        return np.concatenate(flat)


def _pad(x: np.ndarray, kernel: tuple[int, int]) -> np.ndarray:
    ph, pw = kernel[0] // 2, kernel[1] // 2
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    kernel = w.shape[2:]
    win = sliding_window_view(_pad(x, kernel), kernel, axis=(2, 3))  # (B, C, H, W, kh, kw)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # (B, H, W, O)
    out = np.moveaxis(out, 3, 1) + b[None, :, None, None]
    return out, win


def _conv_param_grads(win: np.ndarray, g: np.ndarray):
    gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # (O, C, kh, kw)
    return gw, g.sum(axis=(0, 2, 3))


def _conv_input_grad(g: np.ndarray, w: np.ndarray) -> np.ndarray:
    kernel = w.shape[2:]
    win = sliding_window_view(_pad(g, kernel), kernel, axis=(2, 3))  # (B, O, H, W, kh, kw)
    flipped = w[:, :, ::-1, ::-1]
    out = np.tensordot(win, flipped, axes=([1, 4, 5], [0, 2, 3]))  # (B, H, W, C)
    return np.moveaxis(out, 3, 1)
