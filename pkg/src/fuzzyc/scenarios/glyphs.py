"""Synthetic 8x8 glyphs for the digits 0, 1 and 2, with positional and intensity jitter."""
from __future__ import annotations

import numpy as np

_TEMPLATES = {
    0: [
        "..####..",
        ".#....#.",
        ".#....#.",
        ".#....#.",
        ".#....#.",
        ".#....#.",
        "..####..",
        "........",
    ],
    1: [
        "....#...",
        "...##...",
        "..#.#...",
        "....#...",
        "....#...",
        "....#...",
        "..#####.",
        "........",
    ],
    2: [
        "..####..",
        ".#....#.",
        "......#.",
        ".....#..",
        "...##...",
        "..#.....",
        ".######.",
        "........",
    ],
}

SIZE = 8


def template(digit: int) -> np.ndarray:
    return np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in _TEMPLATES[digit]])


def _shift(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[ys, xs] = img[yd, xd]
    return out


def make_glyphs(per_class: int = 1500, seed: int = 0, noise: float = 0.08):
    """Return ``(images [n, 8, 8], labels [n])`` with classes interleaved.

    Each glyph is its template shifted by at most one pixel (vertically by at
    most one downwards, since the templates leave the last row blank), scaled in
    intensity, blurred a little and perturbed with clipped Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    n = per_class * 3
    labels = np.tile(np.arange(3), per_class)
    images = np.empty((n, SIZE, SIZE))
    base = {d: template(d) for d in range(3)}
    for i, d in enumerate(labels):
        img = _shift(base[d], int(rng.integers(0, 2)), int(rng.integers(-1, 2)))
        img = img * rng.uniform(0.75, 1.0)
        # light horizontal smear
        smear = rng.uniform(0.0, 0.25)
        img = img + smear * (np.roll(img, 1, axis=1) + np.roll(img, -1, axis=1)) / 2
        img = img + rng.normal(0.0, noise, size=img.shape)
        images[i] = np.clip(img, 0.0, 1.0)
    return images, labels


def to_pgm(images, path, scale: int = 4, pad: int = 1):
    """Write a grid ``images[rows][cols]`` of [0,1] 2-d arrays as a binary PGM."""
    rows = len(images)
    cols = max(len(r) for r in images)
    h, w = np.asarray(images[0][0]).shape
    cell_h, cell_w = h * scale + pad, w * scale + pad
    canvas = np.full((rows * cell_h + pad, cols * cell_w + pad), 128, dtype=np.uint8)
    for r, row in enumerate(images):
        for c, img in enumerate(row):
            big = np.kron(np.clip(np.asarray(img), 0, 1), np.ones((scale, scale)))
            y, x = pad + r * cell_h, pad + c * cell_w
            canvas[y:y + h * scale, x:x + w * scale] = np.round(big * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode())
        fh.write(canvas.tobytes())
    return canvas


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)


def load_idx_digits(images_path, labels_path, keep=(0, 1, 2)):
    """Read the standard handwritten-digit IDX files, keeping only ``keep`` labels.

    Images are returned scaled to [0, 1] at their native resolution.
    """
    import gzip

    def _open(p):
        return gzip.open(p, "rb") if str(p).endswith(".gz") else open(p, "rb")

    with _open(images_path) as fh:
        raw = fh.read()
    magic, n, h, w = np.frombuffer(raw[:16], dtype=">i4")
    if magic != 2051:
        raise ValueError(f"{images_path}: bad image magic {magic}")
    images = np.frombuffer(raw[16:], dtype=np.uint8).reshape(n, h, w) / 255.0
    with _open(labels_path) as fh:
        raw = fh.read()
    magic, m = np.frombuffer(raw[:8], dtype=">i4")
    if magic != 2049 or m != n:
        raise ValueError(f"{labels_path}: bad label file")
    labels = np.frombuffer(raw[8:], dtype=np.uint8).astype(int)
    mask = np.isin(labels, keep)
    return images[mask], labels[mask]
