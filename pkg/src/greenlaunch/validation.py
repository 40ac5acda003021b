"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

from typing import Optional

import numpy as np

from .container import ShapeMismatchError


def check_observations(X, image_shape: Optional[tuple] = None, job_dim: Optional[int] = None,
                       dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Coerce ``X`` to a batched ``(images, jobs)`` pair.

    Accepts a single observation ``(image, jobs)`` or a batch, a
    :class:`~greenlaunch.dataset.Dataset`, or a :class:`~greenlaunch.dataset.Batch`.
    """
    if hasattr(X, "images") and hasattr(X, "jobs"):
        images, jobs = X.images, X.jobs
    else:
        try:
            images, jobs = X
        except (TypeError, ValueError):
            raise ValueError("observations must be an (images, jobs) pair") from None
    images = np.asarray(images, dtype=dtype)
    jobs = np.asarray(jobs, dtype=dtype)
    if images.ndim == 2:
        images = images[None]
    if jobs.ndim == 1:
        jobs = jobs[None]
    if images.ndim != 3 or jobs.ndim != 2:
        raise ValueError(f"bad observation ranks: images {images.shape}, jobs {jobs.shape}")
    if len(images) != len(jobs):
        raise ValueError(f"{len(images)} images but {len(jobs)} job arrays")
    if image_shape is not None and tuple(images.shape[1:]) != tuple(image_shape):
        raise ShapeMismatchError(f"image shape {images.shape[1:]} does not match model {tuple(image_shape)}")
    if job_dim is not None and jobs.shape[1] != job_dim:
        raise ShapeMismatchError(f"job array width {jobs.shape[1]} does not match model {job_dim}")
    if not (np.all(np.isfinite(images)) and np.all(np.isfinite(jobs))):
        raise ValueError("observations contain NaN or Inf")
    return images, jobs


def check_dataset(dataset, n_actions: Optional[int] = None):
    if dataset is None or len(dataset) == 0:
        raise ValueError("dataset is empty")
    acts = np.asarray(dataset.actions)
    if acts.min() < 0 or (n_actions is not None and acts.max() >= n_actions):
        raise ValueError(f"dataset actions outside [0, {n_actions})")
    if not np.all(np.isfinite(dataset.rewards)):
        raise ValueError("dataset rewards must be finite")
    return dataset
