"""PNG boundary: internal [-1, 1] float images map linearly to 8-bit RGB."""

from __future__ import annotations

import io

import numpy as np
import torch
from PIL import Image as PILImage

from .spaces import Image

__all__ = ["image_to_png_bytes", "png_bytes_to_image", "save_image", "load_image"]


def image_to_png_bytes(image: Image) -> bytes:
    arr = image.pixels.detach().cpu().numpy()
    u8 = np.clip(np.rint((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(u8, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> Image:
    with PILImage.open(io.BytesIO(data)) as pil:
        arr = np.asarray(pil.convert("RGB"), dtype=np.float32)
    return Image(torch.from_numpy(arr / 127.5 - 1.0))


def save_image(image: Image, path) -> None:
    with open(path, "wb") as f:
        f.write(image_to_png_bytes(image))


def load_image(path) -> Image:
    with open(path, "rb") as f:
        return png_bytes_to_image(f.read())
