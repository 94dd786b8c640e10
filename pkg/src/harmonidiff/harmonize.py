"""Latent mean shift, edge-aware latent fusion and candidate generation.

The pipeline for one task:

1. rescale the source by GSD and paste it into a target-shaped canvas;
2. encode target and canvas, invert both once to the deepest harmonious depth;
3. for every harmonious depth, mean-shift the source footprint onto the
   target latent, sample down to the preservation depth, then keep sampling
   while re-anchoring everything outside the edge ring to the mean-shifted
   inversion trajectories;
4. decode each result and score it; the best-scoring one is selected.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import scheduler as sch
from .errors import ContractError
from .imagecore import dilate, erode, round_half_up
from .latent import LatentCodec, as_latent, downscale_mask, make_codec
from .tasks import CompositionTask, place_source

logger = logging.getLogger(__name__)

DEFAULT_HARMONIOUS_DEPTHS = tuple(range(7, 16))
DEFAULT_PRESERVATION_DEPTH = 5
DEFAULT_PREDICTOR = {
    "kind": "gaussian",
    "mean": "target",
    "variance": "target",
    "uncond_mean": 0.5,
    "uncond_variance": 1.0,
}


def channel_means(z) -> np.ndarray:
    z = as_latent(z)
    return z.mean(axis=(1, 2))


def latent_mean_shift(src_t, tar_t, omega, target_region=None) -> np.ndarray:
    """Paste ``src_t`` into ``tar_t`` over ``omega`` with its channel means moved onto the target's.

    Both latents share one frame. The source mean is taken over ``omega``;
    the target mean over ``target_region`` (default: the whole latent).
    """
    src_t = as_latent(src_t)
    tar_t = as_latent(tar_t)
    if src_t.shape != tar_t.shape:
        raise ContractError(f"source latent {src_t.shape} and target latent {tar_t.shape} differ")
    omega = np.asarray(omega, dtype=bool)
    if omega.shape != tar_t.shape[1:]:
        raise ContractError(f"mask {omega.shape} does not match latent resolution {tar_t.shape[1:]}")
    out = tar_t.copy()
    if not omega.any():
        return out
    if target_region is None:
        mu_tar = tar_t.mean(axis=(1, 2))
    else:
        target_region = np.asarray(target_region, dtype=bool)
        if not target_region.any():
            raise ContractError("target statistics region is empty")
        mu_tar = tar_t[:, target_region].mean(axis=1)
    pasted = src_t[:, omega]
    delta = mu_tar - pasted.mean(axis=1)
    out[:, omega] = pasted + delta[:, None]
    return out


def edge_width(src_w: int, src_h: int, tar_w: Optional[int] = None, fraction: float = 0.1) -> int:
    """Edge-ring half width: a tenth of the source's short side, at least 1.

    ``tar_w`` is accepted so callers can pass the full frame geometry; it
    does not enter the result.
    """
    if src_w < 1 or src_h < 1:
        raise ContractError(f"source dims must be >= 1, got {src_w}x{src_h}")
    return max(1, round_half_up(fraction * min(src_w, src_h)))


def edge_mask(omega, w: int) -> np.ndarray:
    return dilate(omega, w) & ~erode(omega, w)


def fuse_step(z_edge, z_p, m_edge) -> np.ndarray:
    z_edge = as_latent(z_edge)
    z_p = as_latent(z_p)
    if z_edge.shape != z_p.shape:
        raise ContractError(f"latent shapes differ: {z_edge.shape} vs {z_p.shape}")
    m_edge = np.asarray(m_edge, dtype=bool)
    if m_edge.shape != z_edge.shape[1:]:
        raise ContractError(f"mask {m_edge.shape} does not match latent resolution {z_edge.shape[1:]}")
    return np.where(m_edge[None], z_edge, z_p)


@dataclass
class HarmonizeConfig:
    harmonious_depths: tuple = DEFAULT_HARMONIOUS_DEPTHS
    preservation_depth: int = DEFAULT_PRESERVATION_DEPTH
    edge_width_fraction: float = 0.1
    cfg_scale: float = sch.DEFAULT_CFG_SCALE
    fusion: bool = True
    invert_with_conditioning: bool = True
    target_stats: str = "scene"
    codec: dict = field(default_factory=lambda: {"kind": "patch_average", "factor": 8})
    predictor: dict = field(default_factory=lambda: dict(DEFAULT_PREDICTOR))
    schedule: dict = field(default_factory=lambda: {
        "train_steps": sch.DEFAULT_TRAIN_STEPS,
        "inference_steps": sch.DEFAULT_INFERENCE_STEPS,
        "beta_start": sch.DEFAULT_BETA_START,
        "beta_end": sch.DEFAULT_BETA_END,
    })
    workers: int = 1

    def __post_init__(self):
        self.harmonious_depths = tuple(sorted(int(d) for d in self.harmonious_depths))

    def validate(self, n_steps: Optional[int] = None) -> None:
        n_steps = n_steps or int(self.schedule.get("inference_steps", sch.DEFAULT_INFERENCE_STEPS))
        depths = self.harmonious_depths
        if not depths:
            raise ContractError("harmonious_depths is empty")
        if len(set(depths)) != len(depths):
            raise ContractError("harmonious_depths contains duplicates")
        if not 0 <= self.preservation_depth < depths[0]:
            raise ContractError(
                f"need 0 <= preservation_depth < min(harmonious_depths), got {self.preservation_depth}, {depths[0]}")
        if depths[-1] > n_steps:
            raise ContractError(f"harmonious depth {depths[-1]} exceeds inference steps {n_steps}")
        if not 0 < self.edge_width_fraction < 1:
            raise ContractError(f"edge_width_fraction must be in (0, 1), got {self.edge_width_fraction}")
        if self.target_stats not in ("scene", "footprint"):
            raise ContractError(f"target_stats must be 'scene' or 'footprint', got {self.target_stats!r}")

    def build_schedule(self) -> sch.NoiseSchedule:
        return sch.build_schedule(**self.schedule)

    def build_codec(self) -> LatentCodec:
        return make_codec(**self.codec)


def _prior_value(value, stat):
    if isinstance(value, str):
        if value == "target":
            return stat
        if value == "zero":
            return 0.0
        raise ContractError(f"unknown prior setting {value!r}")
    return float(value)


def make_predictor(section: dict, schedule: sch.NoiseSchedule, target_latent: np.ndarray):
    """Instantiate a reference predictor from its config section.

    For ``kind: gaussian``, ``mean``/``variance`` describe the conditional
    prior and may be numbers or ``"target"`` (per-channel statistics of the
    target latent). ``uncond_mean``/``uncond_variance``, when present, give
    the prior used for unconditional calls.
    """
    kind = section.get("kind", "gaussian")
    if kind == "zero":
        return sch.ZeroPredictor()
    if kind == "constant":
        return sch.ConstantPredictor(float(section.get("value", 0.0)))
    if kind == "gaussian":
        means = channel_means(target_latent)[:, None, None]
        variances = np.maximum(target_latent.var(axis=(1, 2)), 1e-6)[:, None, None]
        mean = _prior_value(section.get("mean", "target"), means)
        variance = _prior_value(section.get("variance", 1.0), variances)
        um, uv = section.get("uncond_mean"), section.get("uncond_variance")
        return sch.GaussianPredictor(
            mean, variance, schedule,
            uncond_mean=None if um is None else _prior_value(um, means),
            uncond_variance=None if uv is None else _prior_value(uv, variances))
    raise ContractError(f"unknown predictor kind {kind!r}")


@dataclass
class Candidate:
    depth: int
    image: np.ndarray
    score: float
    latent: Optional[np.ndarray] = None


@dataclass
class CandidateSet:
    entries: list
    omega: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def depths(self):
        return [c.depth for c in self.entries]

    @property
    def scores(self):
        return [c.score for c in self.entries]


def select_best(cands) -> tuple[int, np.ndarray]:
    """Highest score wins; ties go to the shallowest depth."""
    entries = list(cands)
    if not entries:
        raise ContractError("cannot select from an empty candidate set")
    best = min(entries, key=lambda c: (-c.score, c.depth))
    return best.depth, best.image


def conditioning_for(task: CompositionTask) -> bytes:
    """Conditioning payload handed to the predictor.

    Target-scene conditioning is always present, so an unlabeled task still
    gets the (empty) conditional branch rather than the unconditional one.
    """
    return task.conditioning if task.conditioning is not None else b""


@dataclass
class _Prepared:
    omega_px: np.ndarray
    omega: np.ndarray
    m_edge: np.ndarray
    target_region: Optional[np.ndarray]
    src_traj: sch.LatentTrajectory
    tar_traj: sch.LatentTrajectory
    schedule: sch.NoiseSchedule
    predictor: object
    guidance: Optional[sch.Guidance]
    codec: LatentCodec
    size: tuple


def _prepare(task: CompositionTask, cfg: HarmonizeConfig) -> _Prepared:
    schedule = cfg.build_schedule()
    cfg.validate(schedule.inference_steps)
    codec = cfg.build_codec()
    placed = place_source(task)
    f = codec.downsample_factor

    tar0 = codec.encode(task.target)
    src0 = codec.encode(placed.composite)
    omega = downscale_mask(placed.omega, f)
    lat_h, lat_w = codec.latent_shape(*placed.source.shape[:2])
    w = edge_width(lat_w, lat_h, tar0.shape[2], cfg.edge_width_fraction)
    m_edge = edge_mask(omega, w)
    logger.debug("latent %s, omega %d cells, edge width %d, ring %d cells",
                 tar0.shape, omega.sum(), w, m_edge.sum())

    predictor = make_predictor(cfg.predictor, schedule, tar0)
    cond = conditioning_for(task)
    guidance = sch.Guidance(cfg.cfg_scale, cond) if cfg.cfg_scale is not None else None
    inv_cond = cond if cfg.invert_with_conditioning else None
    deepest = cfg.harmonious_depths[-1]
    src_traj = sch.invert_trajectory(src0, deepest, predictor, schedule, inv_cond)
    tar_traj = sch.invert_trajectory(tar0, deepest, predictor, schedule, inv_cond)
    return _Prepared(
        omega_px=placed.omega, omega=omega, m_edge=m_edge,
        target_region=omega if cfg.target_stats == "footprint" else None,
        src_traj=src_traj, tar_traj=tar_traj, schedule=schedule, predictor=predictor,
        guidance=guidance, codec=codec, size=task.target.shape[:2])


def _run_depth(p: _Prepared, ht: int, cfg: HarmonizeConfig, conditioning) -> np.ndarray:
    def anchored(d):
        return latent_mean_shift(p.src_traj.latents[d], p.tar_traj.latents[d], p.omega, p.target_region)

    z = anchored(ht)
    stop = cfg.preservation_depth if cfg.fusion else 0
    z = sch.sample(z, ht, stop, p.predictor, p.schedule, p.guidance, conditioning)
    if cfg.fusion:
        for d in range(stop, 0, -1):
            z_edge = sch.ddim_step(z, d, p.predictor, p.schedule, p.guidance, conditioning)
            z = fuse_step(z_edge, anchored(d - 1), p.m_edge)
    return z


def generate_candidates(task: CompositionTask, cfg: HarmonizeConfig):
    """Unscored ``(depth, image, latent)`` triples plus the pixel-frame paste mask."""
    p = _prepare(task, cfg)

    def one(ht):
        z0 = _run_depth(p, ht, cfg, conditioning_for(task))
        return ht, p.codec.decode(z0, p.size), z0

    # trajectories are fully built in _prepare; the per-depth phase only reads them
    if cfg.workers > 1 and len(cfg.harmonious_depths) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, cfg.harmonious_depths))
    else:
        results = [one(ht) for ht in cfg.harmonious_depths]
    return results, p.omega_px


def compose(task: CompositionTask, cfg: Optional[HarmonizeConfig] = None, scorer=None) -> CandidateSet:
    """Generate and score one candidate per harmonious depth.

    ``scorer`` defaults to the package's built-in harmony scorer.
    """
    from .metrics import default_scorer, harmony_score

    cfg = cfg or HarmonizeConfig()
    scorer = scorer if scorer is not None else default_scorer()
    results, omega_px = generate_candidates(task, cfg)
    entries = [Candidate(ht, img, harmony_score(scorer, img, omega_px), z0) for ht, img, z0 in results]
    return CandidateSet(entries, omega_px)


def harmonize(task: CompositionTask, cfg: Optional[HarmonizeConfig] = None, scorer=None):
    """Run :func:`compose` and return ``(selected_depth, image, candidates)``."""
    cands = compose(task, cfg, scorer)
    depth, image = select_best(cands)
    return depth, image, cands
