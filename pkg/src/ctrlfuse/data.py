"""Deterministic synthetic infrared/visible scene generator.

Each scene holds a warm elliptical "person-like" blob (bright in infrared),
a boxy "car-like" object (striped texture in visible, mid intensity in
infrared), a textured background, and disjoint per-class masks. Scenes
stand in for real registered pairs so the whole pipeline trains on CPU.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CLASS_BACKGROUND = 0
CLASS_PERSON = 1
CLASS_CAR = 2
NUM_CLASSES = 3

HOT_CONTRAST = 0.45  # ir brightness margin of the person blob over background


class ConfigError(ValueError):
    pass


@dataclass
class SynthScene:
    ir: np.ndarray          # 1xHxW in [0,1]
    vis: np.ndarray         # 3xHxW in [0,1]
    labels: np.ndarray      # HxW int class ids
    seed: int

    def class_mask(self, class_id: int) -> np.ndarray:
        return (self.labels == class_id).astype(np.float64)


def _ellipse_mask(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[0:h, 0:w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _make_scene(size, seed):
    rng = np.random.default_rng(seed)
    h = w = size
    labels = np.zeros((h, w), dtype=np.int64)

    bg_ir = rng.uniform(0.1, 0.3)
    bg_vis = rng.uniform(0.2, 0.5, size=3)
    ir = np.full((h, w), bg_ir)
    vis = np.broadcast_to(bg_vis[:, None, None], (3, h, w)).copy()
    ir += rng.normal(0, 0.02, size=(h, w))
    vis += rng.normal(0, 0.02, size=(3, h, w))

    # person-like hot blob, guaranteed brighter in ir than background
    ry = rng.integers(size // 8, size // 4)
    rx = rng.integers(size // 10, size // 5)
    cy = rng.integers(ry + 1, h - ry - 1)
    cx = rng.integers(rx + 1, w - rx - 1)
    person = _ellipse_mask(h, w, cy, cx, ry, rx)
    ir[person] = bg_ir + HOT_CONTRAST + rng.uniform(0.0, 1.0 - bg_ir - HOT_CONTRAST)
    for c in range(3):
        vis[c][person] = rng.uniform(0.3, 0.6)
    labels[person] = CLASS_PERSON

    # car-like striped box placed until it avoids the person region
    for _ in range(20):
        bh = int(rng.integers(size // 6, size // 3))
        bw = int(rng.integers(size // 4, size // 2))
        y0 = int(rng.integers(0, h - bh))
        x0 = int(rng.integers(0, w - bw))
        box = np.zeros((h, w), dtype=bool)
        box[y0:y0 + bh, x0:x0 + bw] = True
        if not (box & person).any():
            break
    else:
        box &= ~person
    stripes = (np.arange(w)[None, :] // 2) % 2 == 0
    base = rng.uniform(0.55, 0.9)
    for c in range(3):
        chan = vis[c]
        chan[box & stripes] = base
        chan[box & ~stripes] = base - rng.uniform(0.25, 0.4)
    ir[box] = rng.uniform(0.35, 0.5)  # mid intensity, below the hot blob
    labels[box] = CLASS_CAR

    ir = np.clip(ir, 0.0, 1.0)[None]
    vis = np.clip(vis, 0.0, 1.0)
    return SynthScene(ir=ir, vis=vis, labels=labels, seed=seed)


def synth_generate(n: int, size: int = 32, seed: int = 0) -> list[SynthScene]:
    """n scenes, deterministic in (n, size, seed)."""
    if size < 16:
        raise ConfigError("scene size must be at least 16")
    return [_make_scene(size, seed * 1_000_003 + i) for i in range(n)]


def sample_prompt(scene: SynthScene, rng: np.random.Generator):
    """Pick one present object class and return (class_id, binary HxW mask)."""
    present = [c for c in (CLASS_PERSON, CLASS_CAR)
               if (scene.labels == c).any()]
    class_id = int(present[rng.integers(0, len(present))])
    return class_id, scene.class_mask(class_id)
