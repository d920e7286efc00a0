"""Deterministic synthetic classification images.

Each class k has a fixed template pattern; an image is its class template
plus seeded Gaussian pixel noise.  Templates are mutually orthonormal
directions in pixel space (QR of a seeded Gaussian matrix, rescaled to
unit per-pixel RMS), so nearest-template classification is easy and a
planted linear head separates the classes with a wide margin — which is
what lets desk-scale accuracy comparisons between fp32 and int8 mean
anything.

Template construction is keyed by (n_classes, shape) only; dataset seeds
affect labels and noise.  Fixture generators rely on this to plant
classifier heads that agree with any dataset drawn here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container

_TEMPLATE_SEED = 77041  # fixed: templates are part of the data definition

N_CLASSES = 10
IMAGE_SHAPE = (3, 32, 32)


def class_templates(n_classes: int = N_CLASSES,
                    shape: tuple[int, int, int] = IMAGE_SHAPE) -> np.ndarray:
    """(n_classes, C, H, W) fp32 templates, orthogonal with unit pixel RMS."""
    d = int(np.prod(shape))
    rng = np.random.default_rng(_TEMPLATE_SEED)
    m = rng.standard_normal((d, n_classes))
    q, _ = np.linalg.qr(m)  # columns orthonormal
    t = q.T * np.sqrt(d)    # unit RMS per pixel
    return t.reshape((n_classes,) + shape).astype(np.float32)


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) fp32
    labels: np.ndarray  # (N,) int64
    n_calib: int        # images[:n_calib] form the calibration pool

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images/labels length mismatch")
        if not 0 <= self.n_calib <= len(self.images):
            raise ValueError("bad calibration split")

    @property
    def calib_images(self) -> np.ndarray:
        return self.images[: self.n_calib]

    @property
    def eval_images(self) -> np.ndarray:
        return self.images[self.n_calib:]

    @property
    def eval_labels(self) -> np.ndarray:
        return self.labels[self.n_calib:]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])


def make_dataset(n_calib: int = 300, n_eval: int = 200, seed: int = 0,
                 noise: float = 0.25, n_classes: int = N_CLASSES,
                 shape: tuple[int, int, int] = IMAGE_SHAPE) -> Dataset:
    rng = np.random.default_rng(seed)
    n = n_calib + n_eval
    templates = class_templates(n_classes, shape)
    labels = rng.integers(0, n_classes, size=n)
    images = templates[labels] + noise * rng.standard_normal((n,) + shape)
    return Dataset(images=images.astype(np.float32),
                   labels=labels.astype(np.int64), n_calib=n_calib)


def save_dataset(d: Dataset, path: str, meta: dict | None = None) -> None:
    header = {"format": "qds", "version": 1, "n_calib": d.n_calib}
    if meta:
        header["meta"] = meta
    write_container(path, header, [d.images, d.labels])


def load_dataset(path: str) -> Dataset:
    header, buffers = read_container(path)
    if header.get("format") != "qds":
        raise ValueError(f"{path}: not a dataset container")
    images, labels = buffers
    return Dataset(images=images, labels=labels, n_calib=int(header["n_calib"]))
