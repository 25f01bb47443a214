"""Shared test helpers: synthetic digit-style IDX datasets."""

import numpy as np

from blockmc import idx
from blockmc.streams import stream

N_CLASSES = 10
GRID = 14  # signal layout lives on the 14x14 grid; images are 28x28
N_SIGNAL_CELLS = 30


def make_synthetic_digits(n_samples: int, seed: int, n_classes: int = N_CLASSES):
    """Digit-like 28x28 grayscale images with sparse informative structure.

    30 of the 196 downsampled cells carry a per-class on-probability of
    0.15 or 0.85; every other cell is weak background noise. Mean-pooling
    2x2 and thresholding at 127 recovers the cell states exactly, so the
    14x14 reduced problem has a small set of genuinely informative pixels.
    """
    layout_rng = stream(7_777)
    signal_cells = layout_rng.choice(GRID * GRID, size=N_SIGNAL_CELLS, replace=False)
    p_on = np.where(layout_rng.random((n_classes, N_SIGNAL_CELLS)) < 0.5, 0.15, 0.85)

    rng = stream(seed)
    labels = rng.integers(0, n_classes, size=n_samples).astype(np.uint8)
    cells = (rng.random((n_samples, GRID * GRID)) < 0.06).astype(np.uint8)
    for s, cell in enumerate(signal_cells):
        cells[:, cell] = (rng.random(n_samples) < p_on[labels, s]).astype(np.uint8)

    images = np.empty((n_samples, 28, 28), dtype=np.uint8)
    bright = rng.integers(160, 256, size=(n_samples, GRID, GRID, 2, 2))
    dark = rng.integers(0, 91, size=(n_samples, GRID, GRID, 2, 2))
    grid = cells.reshape(n_samples, GRID, GRID)[:, :, :, None, None]
    patches = np.where(grid == 1, bright, dark)
    images = patches.transpose(0, 1, 3, 2, 4).reshape(n_samples, 28, 28).astype(np.uint8)
    return images, labels


def write_synthetic_idx(dirpath, n_train: int, n_test: int, seed: int):
    """Write train/test IDX files; returns their four paths."""
    tr_img, tr_lab = make_synthetic_digits(n_train, seed=seed)
    te_img, te_lab = make_synthetic_digits(n_test, seed=seed + 1)
    paths = {
        "train_images": dirpath / "train-images.idx",
        "train_labels": dirpath / "train-labels.idx",
        "test_images": dirpath / "test-images.idx",
        "test_labels": dirpath / "test-labels.idx",
    }
    idx.write_idx_images(paths["train_images"], tr_img)
    idx.write_idx_labels(paths["train_labels"], tr_lab)
    idx.write_idx_images(paths["test_images"], te_img)
    idx.write_idx_labels(paths["test_labels"], te_lab)
    return {k: str(v) for k, v in paths.items()}
