"""Score models s(x_t, t) ~ grad log p_t(x_t).

Analytic Gaussian and Gaussian-mixture scores serve as exact references;
:class:`ScoreNet` is a small network trained by denoising score matching.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from ._validation import as_array, check_frames, check_positive
from .errors import NumericalError
from .nn import Architecture, Network
from .sde import VESchedule
from .tensor import SeededRng

logger = logging.getLogger(__name__)

_CKPT_MAGIC = b"HSNT"


@runtime_checkable
class ScoreModel(Protocol):
    def evaluate(self, x: np.ndarray, t: float) -> np.ndarray: ...


def analytic_gaussian_score(x, t: float, mean, variance: float, schedule: VESchedule) -> np.ndarray:
    """Score of N(mean, variance) convolved with the diffusion kernel at t."""
    variance = check_positive(variance, "variance")
    x = as_array(x, "x")
    return -(x - mean) / (variance + schedule.beta(t))


def analytic_gmm_score(x, t: float, components, schedule: VESchedule) -> np.ndarray:
    """Elementwise score of sum_i w_i N(m_i, v_i + beta(t))."""
    weights, means, variances = _check_components(components)
    x = as_array(x, "x")
    var = variances + schedule.beta(t)
    shape = (-1,) + (1,) * x.ndim
    diff = x[None] - means.reshape(shape)
    log_terms = (
        np.log(weights).reshape(shape)
        - 0.5 * np.log(2 * np.pi * var).reshape(shape)
        - 0.5 * diff**2 / var.reshape(shape)
    )
    resp = np.exp(log_terms - log_terms.max(axis=0))
    resp /= resp.sum(axis=0)
    return np.sum(resp * (-diff / var.reshape(shape)), axis=0)


def _check_components(components):
    comps = np.asarray(components, dtype=np.float64)
    if comps.ndim != 2 or comps.shape[1] != 3 or len(comps) == 0:
        raise ValueError("mixture components must be a list of (weight, mean, variance)")
    weights, means, variances = comps.T
    if np.any(weights <= 0) or not math.isclose(weights.sum(), 1.0, rel_tol=1e-9):
        raise ValueError(f"mixture weights must be positive and sum to 1, got {weights.tolist()}")
    if np.any(variances <= 0):
        raise ValueError("mixture variances must be positive")
    return weights, means, variances


class AnalyticGaussianScore:
    """Exact perturbed score of a Gaussian prior N(mean, variance I)."""

    def __init__(self, mean=0.0, variance: float = 1.0, schedule: VESchedule | None = None):
        self.mean = mean
        self.variance = check_positive(variance, "variance")
        self.schedule = schedule or VESchedule()

    def evaluate(self, x, t):
        return analytic_gaussian_score(x, t, self.mean, self.variance, self.schedule)

    def header(self) -> dict:
        return {
            "kind": "gaussian",
            "mean": float(self.mean),
            "variance": self.variance,
            "schedule": {"sigma": self.schedule.sigma},
        }


class AnalyticGmmScore:
    """Exact perturbed score of a scalar Gaussian mixture, applied elementwise."""

    def __init__(self, components, schedule: VESchedule | None = None):
        _check_components(components)
        self.components = [tuple(map(float, c)) for c in components]
        self.schedule = schedule or VESchedule()

    def evaluate(self, x, t):
        return analytic_gmm_score(x, t, self.components, self.schedule)

    def header(self) -> dict:
        return {
            "kind": "gmm",
            "components": [list(c) for c in self.components],
            "schedule": {"sigma": self.schedule.sigma},
        }


def augment(patch, rng: SeededRng, flip: bool | None = None, offset: float | None = None,
            max_offset: float = 0.1, bounds: tuple[float, float] = (-1.0, 1.0)) -> np.ndarray:
    """Random left-right flip (p = 0.5) plus a uniform brightness offset, then clip.

    ``flip`` and ``offset`` force the random decisions when given.
    """
    patch = as_array(patch, "patch")
    if flip is None:
        flip = bool(rng.uniform(1)[0] < 0.5)
    if offset is None:
        offset = (2.0 * rng.uniform(1)[0] - 1.0) * max_offset
    out = patch[..., ::-1] if flip else patch
    return np.clip(out + offset, *bounds)


class ScoreNet(BaseEstimator):
    """Trainable score model: ``evaluate(x, t) = raw_net(x) / std(t)``.

    Training minimizes the denoising score-matching loss with Adam. The loss
    uses ``t ~ U[t_min, 1]`` and weighting ``beta(t)``, which reduces each
    term to ``||raw_net(x_0 + std(t) z) + z||^2`` (averaged per element).

    Parameters
    ----------
    kind : {"conv", "mlp"}
        Convolutional body for image patches, dense body for tiny grids.
    patch_shape : tuple of int
        Rows and columns the network accepts.
    widths : tuple of int
        Hidden channels (conv) or units (mlp).
    kernel : int or tuple of int
        Odd convolution kernel size.
    epochs, batch_size, learning_rate : training loop settings.
    augment : bool
        Apply random flip / brightness offset to training patches.
    conditioning : {"scale", "input"}
        Noise conditioning: output scaling by 1/std(t) only, or additionally
        feeding log std(t) to the network as an input feature.
    """

    def __init__(
        self,
        kind: str = "conv",
        patch_shape=(128, 64),
        widths=(16, 16, 16),
        kernel=3,
        activation: str = "silu",
        sigma: float = 25.0,
        epochs: int = 100,
        batch_size: int = 8,
        learning_rate: float = 1e-4,
        t_min: float = 0.005,
        augment: bool = False,
        max_offset: float = 0.1,
        conditioning: str = "scale",
        seed: int = 0,
    ):
        self.kind = kind
        self.patch_shape = patch_shape
        self.widths = widths
        self.kernel = kernel
        self.activation = activation
        self.sigma = sigma
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.t_min = t_min
        self.augment = augment
        self.max_offset = max_offset
        self.conditioning = conditioning
        self.seed = seed

    @property
    def architecture(self) -> Architecture:
        return Architecture(self.kind, tuple(self.patch_shape), tuple(self.widths), self.kernel,
                            self.activation, self.conditioning)

    @property
    def schedule(self) -> VESchedule:
        return VESchedule(sigma=self.sigma)

    @property
    def network(self) -> Network:
        return Network(self.architecture)

    def initialize(self) -> "ScoreNet":
        """Deterministic parameter initialization from ``seed``."""
        arch = self.architecture
        if arch.n_params > 100_000:
            raise ValueError(f"architecture has {arch.n_params} parameters; limit is 100000")
        self.params_ = self.network.init_params(SeededRng(self.seed).child(1))
        self.loss_curve_ = []
        return self

    def set_parameters(self, params) -> "ScoreNet":
        params = np.asarray(params, dtype=np.float64).copy()
        self.network.unpack(params)
        self.params_ = params
        self.loss_curve_ = getattr(self, "loss_curve_", [])
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("ScoreNet has no parameters yet; call fit or initialize")

    def _check_input(self, x) -> tuple[np.ndarray, bool]:
        x = as_array(x, "x")
        single = x.ndim == 2
        batch = x[None] if single else x
        if batch.ndim != 3 or batch.shape[1:] != tuple(self.patch_shape):
            raise ValueError(f"expected patches of shape {tuple(self.patch_shape)}, got {x.shape}")
        return batch, single

    def raw(self, x, t: float | None = None) -> np.ndarray:
        """Network output before the 1/std(t) scale (``t`` needed for input conditioning)."""
        self._check_fitted()
        batch, single = self._check_input(x)
        std = None if t is None else self.schedule.std(t)
        out, _ = self.network.forward(self.params_, batch, std)
        return out[0] if single else out

    def evaluate(self, x, t: float) -> np.ndarray:
        if not t > 0:
            raise ValueError("score network is undefined at t = 0")
        return self.raw(x, t) / self.schedule.std(t)

    # -- training -----------------------------------------------------------

    def _forward(self, batch: np.ndarray, std: np.ndarray):
        return self.network.forward(self.params_, batch, std)

    def _backward(self, state, grad_out):
        return self.network.backward(self.params_, state, grad_out)

    def fit(self, X, y=None):
        """Train on patches ``X`` of shape (n, rows, cols) in companded units."""
        X = check_frames(X, "X")
        if X.shape[1:] != tuple(self.patch_shape):
            raise ValueError(f"training patches have shape {X.shape[1:]}, expected {tuple(self.patch_shape)}")
        self.initialize()
        train(self, X, self.epochs, self.batch_size, self.learning_rate, SeededRng(self.seed).child(2))
        return self

    def header(self) -> dict:
        return {
            "kind": "net",
            "architecture": self.architecture.to_dict(),
            "schedule": {"sigma": self.sigma},
            "training": {
                "epochs": self.epochs,
                "batch_size": self.batch_size,
                "learning_rate": self.learning_rate,
                "t_min": self.t_min,
                "augment": self.augment,
                "max_offset": self.max_offset,
                "seed": self.seed,
                "final_loss": float(self.loss_curve_[-1]) if getattr(self, "loss_curve_", None) else None,
            },
        }


def dsm_loss_and_grad(net: ScoreNet, batch, schedule: VESchedule, rng: SeededRng,
                      t: np.ndarray | None = None, noise: np.ndarray | None = None):
    """Denoising score-matching loss and its exact parameter gradient.

    ``t`` and ``noise`` override the random draws (for finite-difference
    checks, which must hold the draws fixed).
    """
    batch = check_frames(batch, "batch")
    n = batch.shape[0]
    if t is None:
        t = net.t_min + (1.0 - net.t_min) * rng.uniform(n)
    if noise is None:
        noise = rng.normal(batch.shape)
    std = np.sqrt(np.expm1(2.0 * np.asarray(t) * math.log(schedule.sigma)) / (2.0 * math.log(schedule.sigma)))
    xt = batch + std[:, None, None] * noise
    raw, state = net._forward(xt, std)
    resid = raw + noise
    loss = float(np.mean(resid**2))
    grad = net._backward(state, 2.0 * resid / resid.size)
    return loss, grad


def train(net: ScoreNet, dataset, epochs: int, batch_size: int, learning_rate: float, rng: SeededRng,
          betas=(0.9, 0.999), eps: float = 1e-8) -> ScoreNet:
    """Adam on the DSM loss; appends one loss value per batch to ``loss_curve_``."""
    dataset = check_frames(dataset, "dataset")
    if not hasattr(net, "params_"):
        net.initialize()
    n = dataset.shape[0]
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    m = np.zeros_like(net.params_)
    v = np.zeros_like(net.params_)
    b1, b2 = betas
    step = 0
    schedule = net.schedule
    for epoch in range(epochs):
        order = np.argsort(rng.uniform(n), kind="stable")
        for start in range(0, n, batch_size):
            batch = dataset[order[start : start + batch_size]]
            if net.augment:
                batch = np.stack([augment(p, rng, max_offset=net.max_offset) for p in batch])
            loss, grad = dsm_loss_and_grad(net, batch, schedule, rng)
            if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
                last = next((v for v in reversed(net.loss_curve_) if np.isfinite(v)), None)
                raise NumericalError(
                    f"training diverged at epoch {epoch}, step {step}: loss={loss}, last finite loss={last}"
                )
            step += 1
            m = b1 * m + (1 - b1) * grad
            v = b2 * v + (1 - b2) * grad * grad
            m_hat = m / (1 - b1**step)
            v_hat = v / (1 - b2**step)
            net.params_ = net.params_ - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
            net.loss_curve_.append(loss)
        logger.info("epoch %d/%d: mean loss %.5f", epoch + 1, epochs,
                    float(np.mean(net.loss_curve_[-max(1, -(-n // batch_size)):])))
    return net


# -- checkpoints ------------------------------------------------------------------


def save_checkpoint(model, path) -> None:
    """Write ``HSNT`` + u32 header length + JSON header + f32 parameters."""
    header = model.header()
    params = getattr(model, "params_", None)
    body = b"" if params is None else np.asarray(params, dtype="<f4").tobytes()
    header["n_params"] = 0 if params is None else int(params.size)
    blob = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(_CKPT_MAGIC + struct.pack("<I", len(blob)) + blob + body)


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[:4] != _CKPT_MAGIC:
        raise ValueError(f"{path}: not a .hsnet checkpoint")
    (length,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8 : 8 + length])
    params = np.frombuffer(data, dtype="<f4", offset=8 + length).astype(np.float64)
    schedule = VESchedule(sigma=header["schedule"]["sigma"])
    kind = header["kind"]
    if kind == "gaussian":
        return AnalyticGaussianScore(header["mean"], header["variance"], schedule)
    if kind == "gmm":
        return AnalyticGmmScore(header["components"], schedule)
    if kind != "net":
        raise ValueError(f"{path}: unknown model kind {kind!r}")
    if params.size != header["n_params"]:
        raise ValueError(f"{path}: expected {header['n_params']} parameters, found {params.size}")
    arch, training = header["architecture"], header["training"]
    net = ScoreNet(
        kind=arch["kind"], patch_shape=tuple(arch["patch_shape"]), widths=tuple(arch["widths"]),
        kernel=tuple(arch["kernel"]), activation=arch["activation"], sigma=schedule.sigma,
        epochs=training["epochs"], batch_size=training["batch_size"],
        learning_rate=training["learning_rate"], t_min=training["t_min"],
        augment=training["augment"], max_offset=training["max_offset"], seed=training["seed"],
        conditioning=arch.get("conditioning", "scale"),
    )
    return net.set_parameters(params)
