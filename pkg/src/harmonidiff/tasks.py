"""Composition tasks and source placement shared by every method."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ContractError, PlacementError
from .imagecore import as_image, as_mask, rescale_by_gsd, rescale_mask_by_gsd

PROMPT_TEMPLATE = "A satellite image of a {source_label} in {target_country}"


def prompt_for(source_label: Optional[str], target_country: Optional[str]) -> Optional[str]:
    if not source_label or not target_country:
        return None
    return PROMPT_TEMPLATE.format(source_label=source_label, target_country=target_country)


@dataclass
class CompositionTask:
    """A source patch to be pasted into a target scene.

    ``paste_origin`` is ``(x, y)`` of the patch's top-left corner in the
    target frame, after GSD rescaling. ``conditioning`` is passed through to
    the noise predictor untouched.
    """

    source: np.ndarray
    target: np.ndarray
    paste_origin: tuple[int, int] = (0, 0)
    source_mask: Optional[np.ndarray] = None
    src_gsd: float = 1.0
    tar_gsd: float = 1.0
    conditioning: Optional[bytes] = None

    def __post_init__(self):
        self.source = as_image(self.source)
        self.target = as_image(self.target)
        if self.source.shape[2] != self.target.shape[2]:
            raise ContractError(
                f"source has {self.source.shape[2]} channels, target has {self.target.shape[2]}")
        if self.source_mask is None:
            self.source_mask = np.ones(self.source.shape[:2], dtype=bool)
        else:
            self.source_mask = as_mask(self.source_mask, self.source.shape[:2])
        if not (self.src_gsd > 0 and self.tar_gsd > 0):
            raise ContractError(f"GSD values must be positive, got {self.src_gsd}, {self.tar_gsd}")
        x, y = self.paste_origin
        if int(x) != x or int(y) != y or x < 0 or y < 0:
            raise PlacementError(f"paste origin must be non-negative integers, got {self.paste_origin}")
        self.paste_origin = (int(x), int(y))


@dataclass
class Placement:
    """The rescaled source written into the target frame.

    ``composite`` is the plain copy-paste result, ``omega`` the pasted pixels,
    ``box`` the ``(y0, y1, x0, x1)`` extent of the rescaled patch.
    """

    source: np.ndarray
    mask: np.ndarray
    composite: np.ndarray
    omega: np.ndarray
    box: tuple[int, int, int, int]


def place_source(task: CompositionTask) -> Placement:
    src = rescale_by_gsd(task.source, task.src_gsd, task.tar_gsd)
    mask = rescale_mask_by_gsd(task.source_mask, task.src_gsd, task.tar_gsd)
    h, w = src.shape[:2]
    x, y = task.paste_origin
    th, tw = task.target.shape[:2]
    if y + h > th or x + w > tw:
        raise PlacementError(
            f"rescaled source {w}x{h} at ({x}, {y}) exceeds target {tw}x{th}")
    omega = np.zeros((th, tw), dtype=bool)
    omega[y:y + h, x:x + w] = mask
    composite = task.target.copy()
    composite[omega] = src[mask]
    return Placement(src, mask, composite, omega, (y, y + h, x, x + w))
