"""Image preprocessing: random resized crops for training, center crops for eval.

All image inputs are converted to RGB floats in [0, 1] at a fixed square
resolution. Vector inputs bypass this module entirely.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

CROP_SCALE = (0.3, 1.0)
CROP_RATIO = (3.0 / 4.0, 4.0 / 3.0)
_CROP_ATTEMPTS = 10


def _to_pil(image: np.ndarray) -> Image.Image:
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        arr = np.clip(arr, 0, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    return Image.fromarray(arr).convert("RGB")


def _finish(img: Image.Image, resolution: int) -> np.ndarray:
    img = img.resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(img, dtype=np.float64) / 255.0


def center_square_crop(img: Image.Image) -> Image.Image:
    w, h = img.size
    side = min(w, h)
    left = (w - side) // 2
    top = (h - side) // 2
    return img.crop((left, top, left + side, top + side))


def random_resized_crop(
    img: Image.Image, rng: np.random.Generator
) -> Image.Image:
    w, h = img.size
    area = w * h
    for _ in range(_CROP_ATTEMPTS):
        target_area = area * rng.uniform(*CROP_SCALE)
        log_ratio = np.log(CROP_RATIO)
        ratio = float(np.exp(rng.uniform(log_ratio[0], log_ratio[1])))
        cw = int(round(np.sqrt(target_area * ratio)))
        ch = int(round(np.sqrt(target_area / ratio)))
        if 0 < cw <= w and 0 < ch <= h:
            left = int(rng.integers(0, w - cw + 1))
            top = int(rng.integers(0, h - ch + 1))
            return img.crop((left, top, left + cw, top + ch))
    return center_square_crop(img)


def preprocess(
    image: np.ndarray,
    mode: str,
    resolution: int,
    rng: np.random.Generator | None = None,
    *,
    random_crop: bool = True,
    horizontal_flip: bool = True,
) -> np.ndarray:
    """Return a resolution x resolution x 3 float array in [0, 1].

    Train mode applies a random resized crop and a 0.5-probability horizontal
    flip when the corresponding augmentation is enabled; with both disabled it
    degenerates to the deterministic eval path (central square crop + resize).
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown preprocessing mode {mode!r}")
    img = _to_pil(image)
    if mode == "train" and random_crop:
        if rng is None:
            raise ValueError("train-mode preprocessing with cropping needs an rng")
        img = random_resized_crop(img, rng)
    else:
        img = center_square_crop(img)
    if mode == "train" and horizontal_flip:
        if rng is None:
            raise ValueError("train-mode preprocessing with flipping needs an rng")
        if rng.random() < 0.5:
            img = img.transpose(Image.FLIP_LEFT_RIGHT)
    return _finish(img, resolution)
