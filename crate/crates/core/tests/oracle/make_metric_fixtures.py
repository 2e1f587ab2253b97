"""Writes the metric fixture pairs and their reference scores.

Reference values come from scikit-image and plain numpy, independently of
the Rust implementation. Run from this directory:

    python3 make_metric_fixtures.py
"""

import json
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

OUT = Path(__file__).parent / "metric_fixtures"
PAD = 5


def checkerboard(h, w, cell):
    y, x = np.mgrid[0:h, 0:w]
    return (((x // cell) + (y // cell)) % 2 * 255).astype(np.uint8)


def blur(img, sigma):
    return np.clip(np.rint(gaussian_filter(img.astype(np.float64), sigma)), 0, 255).astype(np.uint8)


def noisy(img, rng, scale):
    return np.clip(img.astype(np.int64) + rng.integers(-scale, scale + 1, img.shape), 0, 255).astype(np.uint8)


def blob(h, w, rng):
    y, x = np.mgrid[0:h, 0:w]
    cy, cx = rng.uniform(0.3, 0.7) * h, rng.uniform(0.3, 0.7) * w
    ry, rx = rng.uniform(0.2, 0.4) * h, rng.uniform(0.2, 0.4) * w
    return ((y - cy) ** 2 / ry**2 + (x - cx) ** 2 / rx**2) <= 1.0


def pairs():
    rng = np.random.default_rng(20240607)
    cb = checkerboard(32, 32, 4)
    yield "checker_blur", cb, blur(cb, 1.0)
    cb2 = checkerboard(24, 40, 6)
    yield "checker_wide_blur", cb2, blur(cb2, 2.0)
    y, x = np.mgrid[0:30, 0:30]
    grad = ((x * 8 + y * 2) % 256).astype(np.uint8)
    yield "gradient_noise", grad, noisy(grad, rng, 12)
    rand = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    yield "random_pair", rand, rng.integers(0, 256, (16, 16), dtype=np.uint8)
    yield "minimum_size", rng.integers(0, 256, (11, 11), dtype=np.uint8), rng.integers(0, 256, (11, 11), dtype=np.uint8)
    yield "inverted", grad, (255 - grad).astype(np.uint8)
    rgb = rng.integers(0, 256, (20, 26, 3), dtype=np.uint8)
    yield "rgb_noise", rgb, noisy(rgb, rng, 30)
    rgb_cb = np.stack([checkerboard(28, 28, 7), checkerboard(28, 28, 4), checkerboard(28, 28, 2)], axis=-1)
    yield "rgb_checker_blur", rgb_cb, np.stack([blur(rgb_cb[..., c], 1.5) for c in range(3)], axis=-1)
    flat = np.full((18, 22), 120, np.uint8)
    yield "flat_offset", flat, (flat + 16).astype(np.uint8)
    smooth = np.clip(128 + 100 * np.sin(x / 4.0) * np.cos(y / 5.0), 0, 255).astype(np.uint8)
    yield "smooth_shift", smooth, np.roll(smooth, 1, axis=1)


def masked_psnr(a, b, mask):
    diff = a.astype(np.float64) - b.astype(np.float64)
    sel = diff[mask]
    mse = float(np.mean(sel**2))
    return None if mse == 0.0 else 10.0 * np.log10(255.0**2 / mse)


def ssim_pair(a, b, mask):
    multichannel = a.ndim == 3
    kwargs = dict(gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=255, full=True)
    if multichannel:
        kwargs["channel_axis"] = -1
    full, smap = structural_similarity(a, b, **kwargs)
    inner = smap[PAD:-PAD, PAD:-PAD]
    centers = mask[PAD:-PAD, PAD:-PAD]
    if multichannel:
        masked = float(np.mean([inner[..., c][centers].mean() for c in range(a.shape[2])]))
    else:
        masked = float(inner[centers].mean())
    return float(full), masked


def main():
    OUT.mkdir(exist_ok=True)
    rng = np.random.default_rng(7)
    expected = {}
    for name, a, b in pairs():
        mask = blob(a.shape[0], a.shape[1], rng)
        Image.fromarray(a).save(OUT / f"{name}_a.png")
        Image.fromarray(b).save(OUT / f"{name}_b.png")
        Image.fromarray((mask * 255).astype(np.uint8)).save(OUT / f"{name}_mask.png")
        psnr_full = None if np.array_equal(a, b) else float(peak_signal_noise_ratio(a, b, data_range=255))
        ssim_full, ssim_masked = ssim_pair(a, b, mask)
        expected[name] = {
            "psnr_full": psnr_full,
            "psnr_masked": masked_psnr(a, b, mask),
            "ssim_full": ssim_full,
            "ssim_masked": ssim_masked,
        }
    (OUT / "expected.json").write_text(json.dumps(expected, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
