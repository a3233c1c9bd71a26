"""Single-step inference over the PNG file protocol."""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

from .data import from_unit, load_intensity, load_phase, to_unit
from .train import load_generator


class SizeMismatchError(ValueError):
    pass


def predict_array(generator, meta: dict, pixels: np.ndarray) -> np.ndarray:
    expected = meta["image_size"]
    if pixels.shape[0] != expected or pixels.shape[1] != expected:
        raise SizeMismatchError(
            f"image is {pixels.shape[:2]}, model expects {expected}x{expected}")
    x = torch.from_numpy(to_unit(pixels)[None])
    with torch.no_grad():
        y = generator(x)[0].numpy()
    return from_unit(y)


def predict_file(generator, meta: dict, in_path, out_path) -> None:
    if meta["direction"] == "forward":
        pixels = load_intensity(in_path)
    else:
        pixels = load_phase(in_path)
    out = predict_array(generator, meta, pixels)
    if out.ndim == 2:
        Image.fromarray(out, mode="L").save(out_path, format="PNG")
    else:
        Image.fromarray(out, mode="RGB").save(out_path, format="PNG")


def predict_paths(model_path, pairs) -> None:
    generator, meta = load_generator(model_path)
    for in_path, out_path in pairs:
        predict_file(generator, meta, in_path, out_path)
