"""PNG round trips between [0,1] float arrays and 8-bit images.

Wire format everywhere (CLI, HTTP, UI): 8-bit grayscale PNG for ir, fused
images, and masks; 8-bit RGB for visible. [0,1] maps to 0..255 with
round-half-up and back via /255.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64) / 255.0


def encode_gray_png(img: np.ndarray) -> bytes:
    """img: HxW or 1xHxW in [0,1]."""
    if img.ndim == 3:
        img = img[0]
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def encode_rgb_png(img: np.ndarray) -> bytes:
    """img: 3xHxW in [0,1]."""
    buf = io.BytesIO()
    Image.fromarray(to_uint8(img).transpose(1, 2, 0), mode="RGB").save(
        buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes):
    """Returns (array, kind): 1xHxW + "gray" or 3xHxW + "rgb", in [0,1]."""
    img = Image.open(io.BytesIO(data))
    if img.mode in ("L", "I;16", "P", "1"):
        arr = from_uint8(np.asarray(img.convert("L")))
        return arr[None], "gray"
    arr = from_uint8(np.asarray(img.convert("RGB")))
    return arr.transpose(2, 0, 1), "rgb"


def b64_png(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def png_from_b64(text: str) -> bytes:
    return base64.b64decode(text, validate=True)
