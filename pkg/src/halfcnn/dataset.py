"""Turning manifest records into padded, masked samples, and maps back into results."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import network as nw
from .errors import InputError
from .groundtruth import Sample, prepare_sample
from .io import Record, read_image, read_map
from .tensor import crop, pad_zero


def record_to_sample(rec: Record, canvas_h: int, canvas_w: int, factor: int,
                     channels: int | None = None) -> Sample:
    image = read_image(rec.image_path)
    if channels is not None and image.shape[0] != channels:
        if channels == 1:
            image = image.mean(axis=0, keepdims=True)
        elif image.shape[0] == 1:
            image = np.repeat(image, channels, axis=0)
        else:
            raise InputError(f"{rec.image_path}: cannot convert {image.shape[0]} channels to {channels}")
    if rec.kind == "windows":
        return prepare_sample(image, rec.windows, None, canvas_h, canvas_w, factor, image_id=rec.image_id)
    if rec.kind == "map":
        target = read_map(rec.map_path)
        return prepare_sample(image, None, target, canvas_h, canvas_w, factor, image_id=rec.image_id)
    return prepare_sample(image, None, None, canvas_h, canvas_w, factor,
                          fixations=rec.fixations, image_id=rec.image_id)


def load_samples(records: Sequence[Record], canvas_h: int, canvas_w: int, factor: int,
                 channels: int | None = None) -> list[Sample]:
    return [record_to_sample(r, canvas_h, canvas_w, factor, channels) for r in records]


def predict_image(net: nw.Network, image) -> np.ndarray:
    """Predict a map for an arbitrary-size image.

    The image is zero-padded on the bottom/right up to the network's size
    divisor and the map is cropped back to ``ceil(size / factor)``.
    """
    _, h, w = image.shape
    d, f = net.spec.size_divisor, net.factor
    hp, wp = -(-h // d) * d, -(-w // d) * d
    out = nw.predict(net, pad_zero(image, 0, hp - h, 0, wp - w))
    return crop(out, 0, 0, math.ceil(h / f), math.ceil(w / f))
