"""
Inside the adaptive decoder
===========================

The decoder predicts a coarse map, then a k x k kernel for every output pixel
and blends the coarse neighborhood with it. Here the pieces are pulled apart
on a tiny random input, and the four decoders are timed at full scale.
"""

import numpy as np

from affordmap import (
    DecoderConfig,
    FeatureMap,
    akg_forward,
    cap_forward,
    convex_upsample,
    init_params,
    time_inference,
)

rng = np.random.default_rng(0)
p = init_params(0, DecoderConfig("ahd", channels=8, c_m=4, k=3, s=4))
f = FeatureMap(rng.standard_normal((8, 4, 4)))

coarse = cap_forward(f, p)
kernels = akg_forward(f, p)
fine = convex_upsample(coarse, kernels, p.s)

print("coarse map", coarse.shape, "kernel field", kernels.weights.shape, "output", fine.shape)
print("kernel for output pixel (5, 6):")
print(np.round(kernels.at(5, 6), 3))

# Every output pixel is a convex combination, so it never leaves the range of
# its neighborhood: the decoder cannot invent a value above the coarse peak.
print(f"coarse range [{coarse.values.min():.3f}, {coarse.values.max():.3f}], "
      f"output range [{fine.values.min():.3f}, {fine.values.max():.3f}]")

# Full-scale shapes: 256 channels, 16x16 cells, upsampled 14x to 224x224.
for kind in ("ahd", "bilinear", "deconv", "pixelshuffle"):
    q = init_params(0, DecoderConfig(kind))
    stats = time_inference(q, (16, 16), 14, repeats=10)
    print(f"{kind:12s} {q.num_parameters():>9,} params  median {stats.median_us / 1e3:6.2f} ms")
