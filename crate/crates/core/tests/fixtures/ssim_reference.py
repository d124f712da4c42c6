"""Regenerates ssim_reference.json with scikit-image.

Image pairs come from a splitmix64 stream that the Rust test reproduces
bit for bit: pair k has width 16 + r % 24 and height 16 + r % 24 (two
draws), RGB bytes a = r >> 56 per channel, noise n = r >> 56, and
b = ((9 - k) * a + k * n) // 9.  Values are byte / 255 as float32; SSIM
runs on luma 0.299 R + 0.587 G + 0.114 B in float64.
"""

import json
import pathlib

import numpy as np
import skimage
from skimage.metrics import structural_similarity

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)


def pair(rng, k):
    w = 16 + rng.next() % 24
    h = 16 + rng.next() % 24
    a = np.zeros((h, w, 3), dtype=np.int64)
    b = np.zeros((h, w, 3), dtype=np.int64)
    for y in range(h):
        for x in range(w):
            for c in range(3):
                av = rng.next() >> 56
                nv = rng.next() >> 56
                a[y, x, c] = av
                b[y, x, c] = ((9 - k) * av + k * nv) // 9
    return w, h, a, b


def luma(img):
    f = (img.astype(np.float32) / np.float32(255.0)).astype(np.float64)
    return 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]


def main():
    rng = SplitMix64(20240611)
    out = []
    for k in range(10):
        w, h, a, b = pair(rng, k)
        s = structural_similarity(
            luma(a),
            luma(b),
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            data_range=1.0,
        )
        out.append({"width": int(w), "height": int(h), "ssim": float(s)})
    doc = {"seed": 20240611, "generator": f"scikit-image {skimage.__version__}", "pairs": out}
    path = pathlib.Path(__file__).with_name("ssim_reference.json")
    path.write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
