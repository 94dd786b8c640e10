"""Procedural satellite-like scenes and composition tasks.

Used for the default harmony scorer, the benchmark suite and tests. All
generators take an explicit ``numpy.random.Generator``.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .tasks import CompositionTask


def textured_scene(rng: np.random.Generator, height: int = 64, width: int = 64,
                   base=None, texture: float = 0.06, relief: float = 0.08, blocks: int = 6) -> np.ndarray:
    """RGB scene: base colour, smooth relief, a few flat 'roof' blocks and fine texture."""
    base = rng.uniform(0.25, 0.75, size=3) if base is None else np.asarray(base, dtype=np.float64)
    img = np.broadcast_to(base, (height, width, 3)).copy()
    smooth = ndimage.gaussian_filter(rng.normal(size=(height, width)), sigma=max(height, width) / 8, mode="wrap")
    smooth /= smooth.std() + 1e-12
    img += relief * smooth[:, :, None] * rng.uniform(0.5, 1.0, size=3)
    for _ in range(blocks):
        bh, bw = rng.integers(3, max(4, height // 6)), rng.integers(3, max(4, width // 6))
        y, x = rng.integers(0, height - bh), rng.integers(0, width - bw)
        img[y:y + bh, x:x + bw] += rng.uniform(-0.12, 0.12, size=3)
    fine = ndimage.gaussian_filter(rng.normal(size=(height, width, 3)), sigma=(0.7, 0.7, 0))
    fine /= fine.std() + 1e-12
    img += texture * fine
    return np.clip(img, 0.0, 1.0)


def random_mask_box(rng, height, width, min_size=12, max_size=28, margin=6):
    """Random rectangle ``(y, x, h, w)`` at least ``margin`` pixels from the border."""
    max_size = min(max_size, height - 2 * margin, width - 2 * margin)
    h = int(rng.integers(min_size, max_size + 1))
    w = int(rng.integers(min_size, max_size + 1))
    y = int(rng.integers(margin, height - margin - h + 1))
    x = int(rng.integers(margin, width - margin - w + 1))
    return y, x, h, w


def box_mask(shape, box) -> np.ndarray:
    y, x, h, w = box
    m = np.zeros(shape, dtype=bool)
    m[y:y + h, x:x + w] = True
    return m


def contrasting_source(rng, target: np.ndarray, height: int, width: int, offset: float = 0.25) -> np.ndarray:
    """A patch from a different scene whose colour sits well away from the target's."""
    mean = target.mean(axis=(0, 1))
    direction = np.where(mean > 0.5, -1.0, 1.0)
    base = np.clip(mean + direction * offset * rng.uniform(0.8, 1.2, size=3), 0.05, 0.95)
    # texture amplitude clearly off the target's (smoother or rougher), so the
    # patch stays recognisable after gradient-domain blending
    texture = rng.uniform(0.01, 0.025) if rng.random() < 0.5 else rng.uniform(0.11, 0.16)
    return textured_scene(rng, height, width, base=base, texture=texture, relief=0.04, blocks=2)


def random_task(rng: np.random.Generator, size: int = 64, min_patch: int = 16, max_patch: int = 28,
                margin: int = 8) -> CompositionTask:
    target = textured_scene(rng, size, size)
    y, x, h, w = random_mask_box(rng, size, size, min_patch, max_patch, margin)
    source = contrasting_source(rng, target, h, w)
    return CompositionTask(source=source, target=target, paste_origin=(x, y))


def benchmark_suite(seed: int = 0, n_tasks: int = 20, size: int = 64) -> list:
    rng = np.random.default_rng(seed)
    return [random_task(rng, size) for _ in range(n_tasks)]


def scorer_training_set(rng: np.random.Generator, n_per_class: int, size: int = 64):
    """Positives: untouched scenes with a random region. Negatives: copy-paste and Poisson composites.

    Negatives alternate between the two corruptions, so the set is 1:1
    positive/negative overall.
    """
    from .baselines import copy_paste, poisson_blend

    positives, negatives = [], []
    for i in range(n_per_class):
        scene = textured_scene(rng, size, size)
        positives.append((scene, box_mask(scene.shape[:2], random_mask_box(rng, size, size))))
        task = random_task(rng, size)
        omega = box_mask(task.target.shape[:2], (task.paste_origin[1], task.paste_origin[0],
                                                 task.source.shape[0], task.source.shape[1]))
        corrupted = copy_paste(task) if i % 2 == 0 else poisson_blend(task)
        negatives.append((corrupted, omega))
    return positives, negatives
