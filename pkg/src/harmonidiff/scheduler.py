"""Deterministic DDIM sampling and inversion.

Positions along the inference grid are *depths*: depth 0 is the clean latent
(cumulative alpha of 1) and depth ``N`` is the noisiest grid point. A
schedule with ``N`` inference steps therefore has ``N + 1`` depths.

Noise predictors are callables ``predictor(z, depth, conditioning)``
returning a noise estimate shaped like ``z``. The ones shipped here are
analytic; anything with the same call signature (a wrapped network, say) can
be dropped in.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

from .errors import ContractError
from .latent import as_latent

DEFAULT_TRAIN_STEPS = 1000
DEFAULT_INFERENCE_STEPS = 20
DEFAULT_BETA_START = 8.5e-4
DEFAULT_BETA_END = 1.2e-2
DEFAULT_CFG_SCALE = 3.5


class NoisePredictor(Protocol):
    def __call__(self, z: np.ndarray, depth: int, conditioning: Optional[bytes] = None) -> np.ndarray: ...


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative alphas on a subsampled grid of training timesteps.

    ``alpha_bar[i]`` and ``timestep_index[i]`` describe depth ``i + 1``.
    """

    train_steps: int
    inference_steps: int
    alpha_bar: np.ndarray
    timestep_index: np.ndarray

    @property
    def max_depth(self) -> int:
        return self.inference_steps

    def alpha_at(self, depth: int) -> float:
        if not 0 <= depth <= self.inference_steps:
            raise ContractError(f"depth {depth} outside 0..{self.inference_steps}")
        return 1.0 if depth == 0 else float(self.alpha_bar[depth - 1])

    def timestep_at(self, depth: int) -> int:
        """Training timestep for ``depth``; -1 stands for the clean latent."""
        if not 0 <= depth <= self.inference_steps:
            raise ContractError(f"depth {depth} outside 0..{self.inference_steps}")
        return -1 if depth == 0 else int(self.timestep_index[depth - 1])


def build_schedule(
    train_steps: int = DEFAULT_TRAIN_STEPS,
    inference_steps: int = DEFAULT_INFERENCE_STEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Scaled-linear betas, evenly strided inference grid ending at the last training step."""
    if not (isinstance(train_steps, (int, np.integer)) and isinstance(inference_steps, (int, np.integer))):
        raise ContractError("step counts must be integers")
    if not 1 <= inference_steps <= train_steps:
        raise ContractError(f"need 1 <= inference_steps <= train_steps, got {inference_steps}, {train_steps}")
    if not 0 < beta_start <= beta_end < 1:
        raise ContractError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    if train_steps == 1:
        betas = np.array([beta_start])
    else:
        i = np.arange(train_steps) / (train_steps - 1)
        betas = (np.sqrt(beta_start) + i * (np.sqrt(beta_end) - np.sqrt(beta_start))) ** 2
    cumulative = np.cumprod(1.0 - betas)
    # trailing spacing: stride T/N, last grid point is timestep T - 1
    timesteps = np.round(np.arange(1, inference_steps + 1) * (train_steps / inference_steps)).astype(int) - 1
    alpha_bar = cumulative[timesteps]
    alpha_bar.setflags(write=False)
    timesteps.setflags(write=False)
    return NoiseSchedule(int(train_steps), int(inference_steps), alpha_bar, timesteps)


def _same_shape(a, b, what):
    if a.shape != b.shape:
        raise ContractError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def predict_x0(z_t, eps, depth: int, sched: NoiseSchedule) -> np.ndarray:
    """Clean-latent estimate ``(z_t - sqrt(1 - a) * eps) / sqrt(a)``."""
    z_t = np.asarray(z_t, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(z_t, eps, "predict_x0")
    a = sched.alpha_at(depth)
    return (z_t - np.sqrt(1.0 - a) * eps) / np.sqrt(a)


def _transfer(z_t, eps, a_from, a_to):
    x0 = (z_t - np.sqrt(1.0 - a_from) * eps) / np.sqrt(a_from)
    return np.sqrt(a_to) * x0 + np.sqrt(1.0 - a_to) * eps


def cfg_eps(eps_cond, eps_uncond, scale: float) -> np.ndarray:
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    _same_shape(eps_cond, eps_uncond, "cfg_eps")
    return eps_uncond + scale * (eps_cond - eps_uncond)


@dataclass(frozen=True)
class Guidance:
    """Classifier-free guidance settings for sampling."""

    scale: float = DEFAULT_CFG_SCALE
    conditioning: Optional[bytes] = None


def _eps(predictor, z, depth, conditioning, guidance):
    if guidance is None:
        eps = predictor(z, depth, conditioning)
    else:
        cond = guidance.conditioning if guidance.conditioning is not None else conditioning
        eps_c = predictor(z, depth, cond)
        if guidance.scale == 1.0:
            eps = eps_c
        else:
            eps = cfg_eps(eps_c, predictor(z, depth, None), guidance.scale)
    eps = np.asarray(eps, dtype=np.float64)
    _same_shape(z, eps, "predictor output")
    return eps


def ddim_step(z_t, depth: int, predictor: NoisePredictor, sched: NoiseSchedule,
              guidance: Optional[Guidance] = None, conditioning: Optional[bytes] = None) -> np.ndarray:
    """One sampling step from ``depth`` to ``depth - 1``."""
    if not 0 < depth <= sched.max_depth:
        raise ContractError(f"ddim_step needs 0 < depth <= {sched.max_depth}, got {depth}")
    z_t = as_latent(z_t)
    eps = _eps(predictor, z_t, depth, conditioning, guidance)
    return _transfer(z_t, eps, sched.alpha_at(depth), sched.alpha_at(depth - 1))


def ddim_invert_step(z_t, depth: int, predictor: NoisePredictor, sched: NoiseSchedule,
                     conditioning: Optional[bytes] = None) -> np.ndarray:
    """One inversion step from ``depth`` to ``depth + 1``; never guided."""
    if not 0 <= depth < sched.max_depth:
        raise ContractError(f"ddim_invert_step needs 0 <= depth < {sched.max_depth}, got {depth}")
    z_t = as_latent(z_t)
    eps = _eps(predictor, z_t, depth, conditioning, None)
    return _transfer(z_t, eps, sched.alpha_at(depth), sched.alpha_at(depth + 1))


def sample(z, start_depth: int, stop_depth: int, predictor, sched, guidance=None, conditioning=None):
    """Run sampling steps from ``start_depth`` down to ``stop_depth``."""
    if not 0 <= stop_depth <= start_depth <= sched.max_depth:
        raise ContractError(f"need 0 <= stop <= start <= {sched.max_depth}, got {start_depth} -> {stop_depth}")
    for d in range(start_depth, stop_depth, -1):
        z = ddim_step(z, d, predictor, sched, guidance, conditioning)
    return z


@dataclass
class LatentTrajectory:
    """Inversion trajectory ``latents[d]`` for depths ``0..len - 1``.

    :meth:`extend` grows the cache; asking for a depth already computed is free.
    """

    schedule: NoiseSchedule
    predictor: Callable
    conditioning: Optional[bytes] = None
    latents: list = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.latents) - 1

    def extend(self, depth: int) -> "LatentTrajectory":
        if not 0 <= depth <= self.schedule.max_depth:
            raise ContractError(f"depth {depth} outside 0..{self.schedule.max_depth}")
        while self.depth < depth:
            d = self.depth
            self.latents.append(ddim_invert_step(self.latents[d], d, self.predictor, self.schedule, self.conditioning))
        return self

    def __getitem__(self, depth: int) -> np.ndarray:
        if depth < 0:
            raise IndexError(depth)
        self.extend(depth)
        return self.latents[depth]

    def __len__(self) -> int:
        return len(self.latents)


def invert_trajectory(z0, depth: int, predictor: NoisePredictor, sched: NoiseSchedule,
                      conditioning: Optional[bytes] = None) -> LatentTrajectory:
    if not 0 <= depth <= sched.max_depth:
        raise ContractError(f"inversion depth {depth} outside 0..{sched.max_depth}")
    traj = LatentTrajectory(sched, predictor, conditioning, [as_latent(z0).copy()])
    return traj.extend(depth)


# --- reference predictors -------------------------------------------------


class ZeroPredictor:
    def __call__(self, z, depth, conditioning=None):
        return np.zeros_like(z)


class ConstantPredictor:
    def __init__(self, value):
        self.value = value

    def __call__(self, z, depth, conditioning=None):
        return np.broadcast_to(np.asarray(self.value, dtype=np.float64), np.shape(z)).copy()


class GaussianPredictor:
    """Exact posterior noise for data drawn from ``Normal(mean, variance * I)``.

    ``eps(z) = sqrt(1 - a) * (z - sqrt(a) * mean) / (a * variance + 1 - a)``

    When ``uncond_mean``/``uncond_variance`` are given, calls without
    conditioning use that second (typically broader) prior instead, so
    classifier-free guidance has something to extrapolate.
    """

    def __init__(self, mean, variance, schedule: NoiseSchedule, uncond_mean=None, uncond_variance=None):
        self.mean, self.variance = self._check(mean, variance)
        self.schedule = schedule
        if uncond_mean is None and uncond_variance is None:
            self.uncond_mean, self.uncond_variance = self.mean, self.variance
        else:
            self.uncond_mean, self.uncond_variance = self._check(
                self.mean if uncond_mean is None else uncond_mean,
                self.variance if uncond_variance is None else uncond_variance)

    @staticmethod
    def _check(mean, variance):
        variance = np.asarray(variance, dtype=np.float64)
        if not np.all(variance > 0):
            raise ContractError(f"variance must be positive, got {variance}")
        return np.asarray(mean, dtype=np.float64), variance

    def __call__(self, z, depth, conditioning=None):
        a = self.schedule.alpha_at(depth)
        if conditioning is None:
            mean, var = self.uncond_mean, self.uncond_variance
        else:
            mean, var = self.mean, self.variance
        return np.sqrt(1.0 - a) * (z - np.sqrt(a) * mean) / (a * var + 1.0 - a)


def analytic_gaussian_predictor(mean, variance: float, schedule: NoiseSchedule) -> GaussianPredictor:
    return GaussianPredictor(mean, variance, schedule)
