"""Look at the FFT and LBP planes of a synthetic real/fake pair.

Run: python3 demos/feature_channels.py [outdir]
Writes PGM files you can open in most image viewers.
"""

import sys
from pathlib import Path

import numpy as np

from bnnfake.data import encode_pnm, high_band_energy, synth_image
from bnnfake.features import build_stack, to_grayscale

out = Path(sys.argv[1] if len(sys.argv) > 1 else "feature_demo")
out.mkdir(exist_ok=True)

for name, fake in (("real", False), ("fake", True)):
    # same seed, so both share the smooth background; only the artifacts differ
    img = synth_image(64, fake, np.random.default_rng([3, 0, 0]))
    stack = build_stack(img, ("fft", "lbp", "sobel"))
    (out / f"{name}_rgb.ppm").write_bytes(encode_pnm(img))
    for k, plane in enumerate(stack.active, start=3):
        (out / f"{name}_{plane}.pgm").write_bytes(encode_pnm(stack.channels[k][None]))
    print(f"{name}: high-band energy {float(high_band_energy(to_grayscale(img))):.5f}")

print("wrote", sorted(p.name for p in out.iterdir()))
