"""Joint posterior diffusion sampling for tissue / haze separation.

Two reverse diffusions run side by side, one driven by the tissue score and
one by the haze score. Before every reverse step both iterates take a
data-consistency step toward the measurement under the companded forward
model ``y = C(C^-1(x) + gamma C^-1(h))``. Sampling starts from the forward-
diffused measurement at ``t = tau`` and runs on overlapping patches that are
interleaved after every step.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.exceptions import NotFittedError

from . import patchwork
from ._validation import as_array, check_frames, check_positive, check_same_shape
from .compand import DEFAULT_MU, decode, decode_deriv, encode, encode_deriv
from .errors import NumericalError
from .patchwork import PatchLayout
from .sde import DiffusionState, VESchedule, reverse_step
from .tensor import RFGrid, SeededRng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DehazeConfig:
    """Sampler settings beyond the two score models.

    ``mu=None`` turns companding off (identity forward model); ``normalize``
    divides each frame by its peak magnitude before companding.
    ``independent_init`` draws separate CCDF noise for the haze chain, and
    ``frozen_path`` reuses one corruption draw for every y_hat_t.
    ``iterate_clip`` bounds x and h to [-c, c] at the start of every joint step.
    """

    lambda_: float = 0.5
    kappa: float = 0.5
    gamma: float = 1.0
    mu: float | None = DEFAULT_MU
    schedule: VESchedule = field(default_factory=VESchedule)
    patch: PatchLayout = field(default_factory=PatchLayout)
    seed: int = 0
    normalize: bool = True
    independent_init: bool = False
    frozen_path: bool = False
    iterate_clip: float | None = None

    def __post_init__(self):
        if self.iterate_clip is not None:
            check_positive(self.iterate_clip, "iterate_clip")
        check_positive(self.lambda_, "lambda", strict=False)
        check_positive(self.kappa, "kappa", strict=False)
        check_positive(self.gamma, "gamma", strict=False)
        if self.mu is not None:
            check_positive(self.mu, "mu")


@dataclass
class JointState:
    x: np.ndarray
    h: np.ndarray
    t: float

    def __post_init__(self):
        check_same_shape(self.x, self.h, "x and h")


@dataclass
class DehazeResult:
    x_rf: np.ndarray
    h_rf: np.ndarray
    diagnostics: list[dict] = field(default_factory=list)
    scale: np.ndarray | None = None

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "t", "residual_sq_norm", "clip_x", "clip_h"])
            writer.writeheader()
            writer.writerows(self.diagnostics)


def ccdf_init(y, cfg: DehazeConfig, rng: SeededRng) -> JointState:
    """x_tau = y + std(tau) z and h_tau = x_tau (CCDF start)."""
    y = as_array(y, "y")
    tau = cfg.schedule.start_step / cfg.schedule.steps
    std = cfg.schedule.std(tau)
    x = y + std * rng.normal(y.shape)
    h = y + std * rng.normal(y.shape) if cfg.independent_init else x.copy()
    return JointState(x, h, tau)


def _expand(v, mu):
    """Clip to [-1, 1] (companded mode only) and decode; returns value, slope, clip mask."""
    if mu is None:
        return v, np.ones_like(v), np.ones(v.shape, dtype=bool)
    inside = np.abs(v) <= 1.0
    vc = np.clip(v, -1.0, 1.0)
    return decode(vc, mu), decode_deriv(vc, mu), inside


def _forward_model(x, h, cfg: DehazeConfig):
    ex, dx, in_x = _expand(x, cfg.mu)
    eh, dh, in_h = _expand(h, cfg.mu)
    u = ex + cfg.gamma * eh
    if cfg.mu is None:
        return u, np.ones_like(u), (dx, in_x, dh, in_h)
    inside_u = np.abs(u) <= 1.0
    uc = np.clip(u, -1.0, 1.0)
    return encode(uc, cfg.mu), encode_deriv(uc, cfg.mu) * inside_u, (dx, in_x, dh, in_h)


def dc_residual(y_hat, x, h, cfg: DehazeConfig) -> tuple[np.ndarray, float]:
    """r = y_hat - C(C^-1(x) + gamma C^-1(h)) and its squared norm."""
    y_hat, x, h = (as_array(a, n) for a, n in ((y_hat, "y_hat"), (x, "x"), (h, "h")))
    check_same_shape(y_hat, x, "y_hat and x")
    pred, _, _ = _forward_model(x, h, cfg)
    r = y_hat - pred
    return r, float(np.sum(r * r))


def dc_gradients(y_hat, x, h, cfg: DehazeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the log-likelihood -||r||^2 / 2 with respect to x and h.

    Both are evaluated at the same (x, h). With lambda = kappa = 0.5 in the
    uncompanded case, one step splits the residual evenly and lands exactly
    on x + h = y_hat.
    """
    y_hat, x, h = (as_array(a, n) for a, n in ((y_hat, "y_hat"), (x, "x"), (h, "h")))
    check_same_shape(y_hat, x, "y_hat and x")
    check_same_shape(x, h, "x and h")
    pred, slope_u, (dx, in_x, dh, in_h) = _forward_model(x, h, cfg)
    common = (y_hat - pred) * slope_u
    grad_x = common * dx * in_x
    grad_h = cfg.gamma * common * dh * in_h
    return grad_x, grad_h


def _score(model, x: np.ndarray, t: float) -> np.ndarray:
    flat = x.reshape((-1,) + x.shape[-2:])
    return np.asarray(model.evaluate(flat, t)).reshape(x.shape)


def joint_step(state: JointState, y_hat, tissue, haze, cfg: DehazeConfig, rng: SeededRng | None,
               noise: tuple[np.ndarray, np.ndarray] | None = None, info: dict | None = None) -> JointState:
    """Data consistency on x and h, then one reverse step for each chain."""
    if not state.t > 0:
        raise ValueError(f"joint_step needs t > 0, got {state.t}")
    x, h = state.x, state.h
    if cfg.iterate_clip is not None:
        x = np.clip(x, -cfg.iterate_clip, cfg.iterate_clip)
        h = np.clip(h, -cfg.iterate_clip, cfg.iterate_clip)
    grad_x, grad_h = dc_gradients(y_hat, x, h, cfg)
    x = x + cfg.lambda_ * grad_x
    h = h + cfg.kappa * grad_h
    if info is not None:
        info["clip_x"] = int(np.count_nonzero(np.abs(x) > 1.0))
        info["clip_h"] = int(np.count_nonzero(np.abs(h) > 1.0))
    zx, zh = noise if noise is not None else (None, None)
    nx = reverse_step(DiffusionState(x, state.t), _score(tissue, x, state.t), cfg.schedule, rng, zx)
    nh = reverse_step(DiffusionState(h, state.t), _score(haze, h, state.t), cfg.schedule, rng, zh)
    if not (np.all(np.isfinite(nx.x)) and np.all(np.isfinite(nh.x))):
        raise NumericalError(f"non-finite iterate at t={state.t:.4f}; diagnostics: {info}")
    return JointState(nx.x, nh.x, nx.t)


def dehaze(y_rf, tissue, haze, cfg: DehazeConfig, observer=None) -> DehazeResult:
    """Separate measurement frame(s) into tissue and haze RF estimates.

    ``y_rf`` is one frame or a stack (n, rows, cols); stacks share one random
    stream and are processed in lockstep. The returned haze already includes
    gamma, so ``x_rf + h_rf`` approximates ``y_rf``. ``observer(step, x, h, plan)``,
    if given, sees the interleaved patch stacks after every joint step.
    """
    single = isinstance(y_rf, RFGrid) or np.ndim(y_rf) == 2
    frames = check_frames(y_rf, "y_rf")
    n_frames, rows, cols = frames.shape
    sched = cfg.schedule
    plan = patchwork.plan(rows, cols, cfg.patch)
    pairs = plan.overlaps()

    if cfg.normalize:
        scale = np.max(np.abs(frames), axis=(1, 2))
        if np.any(scale == 0):
            raise ValueError("cannot dehaze an all-zero frame")
    else:
        scale = np.ones(n_frames)
    y = encode(frames / scale[:, None, None], cfg.mu) if cfg.mu is not None else frames / scale[:, None, None]

    rng = SeededRng(cfg.seed)
    init = ccdf_init(y, cfg, rng)
    x = patchwork.extract_all(init.x, plan)
    h = patchwork.extract_all(init.h, plan)
    state = JointState(x, h, init.t)
    frozen = rng.normal(y.shape) if cfg.frozen_path else None

    diagnostics = []
    k_start = sched.start_step
    for i, k in enumerate(range(k_start, 0, -1)):
        t = k / sched.steps
        z = frozen if frozen is not None else rng.normal(y.shape)
        y_hat = patchwork.extract_all(y + sched.std(t) * z, plan)
        info = {"step": i, "t": t}
        _, info["residual_sq_norm"] = dc_residual(y_hat, state.x, state.h, cfg)
        state = joint_step(JointState(state.x, state.h, t), y_hat, tissue, haze, cfg, rng, info=info)
        patchwork.interleave(state.x, plan, pairs)
        patchwork.interleave(state.h, plan, pairs)
        diagnostics.append(info)
        if observer is not None:
            observer(i, state.x, state.h, plan)

    x0 = patchwork.stitch(state.x, plan)
    h0 = patchwork.stitch(state.h, plan)
    if cfg.mu is not None:
        x_rf = decode(np.clip(x0, -1, 1), cfg.mu)
        h_rf = decode(np.clip(h0, -1, 1), cfg.mu)
    else:
        x_rf, h_rf = x0, h0
    x_rf = x_rf * scale[:, None, None]
    h_rf = cfg.gamma * h_rf * scale[:, None, None]
    if single:
        x_rf, h_rf = x_rf[0], h_rf[0]
    return DehazeResult(x_rf, h_rf, diagnostics, scale)


class JointDehazer(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` trains the two priors, ``transform`` dehazes.

    ``tissue_model`` and ``haze_model`` may be analytic score models (used
    as-is) or :class:`~hazesep.score.ScoreNet` instances (cloned and trained
    on the patches passed to ``fit``).
    """

    def __init__(self, tissue_model=None, haze_model=None, lambda_=0.5, kappa=0.5, gamma=1.0,
                 mu=DEFAULT_MU, sigma=25.0, steps=200, tau=0.8, patch_shape=(128, 64),
                 overlap_fraction=0.10, normalize=True, independent_init=False, frozen_path=False, iterate_clip=None,
                 seed=0):
        self.tissue_model = tissue_model
        self.haze_model = haze_model
        self.lambda_ = lambda_
        self.kappa = kappa
        self.gamma = gamma
        self.mu = mu
        self.sigma = sigma
        self.steps = steps
        self.tau = tau
        self.patch_shape = patch_shape
        self.overlap_fraction = overlap_fraction
        self.normalize = normalize
        self.independent_init = independent_init
        self.frozen_path = frozen_path
        self.iterate_clip = iterate_clip
        self.seed = seed

    @property
    def config(self) -> DehazeConfig:
        return DehazeConfig(
            lambda_=self.lambda_, kappa=self.kappa, gamma=self.gamma, mu=self.mu,
            schedule=VESchedule(self.sigma, self.steps, self.tau),
            patch=PatchLayout(*self.patch_shape, overlap_fraction=self.overlap_fraction),
            seed=self.seed, normalize=self.normalize,
            independent_init=self.independent_init, frozen_path=self.frozen_path,
            iterate_clip=self.iterate_clip,
        )

    def fit(self, X=None, H=None):
        """Train the tissue prior on ``X`` and the haze prior on ``H`` (companded patches)."""
        self.tissue_ = self._fit_one(self.tissue_model, X, "tissue")
        self.haze_ = self._fit_one(self.haze_model, H, "haze")
        return self

    @staticmethod
    def _fit_one(model, data, name):
        if model is None:
            raise ValueError(f"no {name} model given")
        if hasattr(model, "fit"):
            if data is None:
                if hasattr(model, "params_"):
                    return model
                raise ValueError(f"{name} model needs training patches")
            return clone(model).fit(data)
        return model

    def separate(self, Y, **overrides) -> DehazeResult:
        if not hasattr(self, "tissue_"):
            raise NotFittedError("JointDehazer is not fitted yet; call fit first")
        cfg = replace(self.config, **overrides) if overrides else self.config
        return dehaze(Y, self.tissue_, self.haze_, cfg)

    def transform(self, Y):
        return self.separate(Y).x_rf
