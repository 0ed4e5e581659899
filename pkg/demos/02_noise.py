"""
Noise kernels and reproducible draws

Every draw is addressed by (seed, stream, counter), so any single value can
be regenerated without replaying the ones before it.
"""

import numpy as np

from randtangency.noise import NoiseKernel, RngState, sample, sample_values

uniform = NoiseKernel.uniform(0.06, 0.01)
v = sample_values(uniform, 100_000, seed=7, stream=3)
print("uniform mean", v.mean(), "range", v.min(), v.max())
print("draw 12345 alone:", sample(uniform, RngState(7, 3, 12345)), "==", v[12345])

# a tent-shaped density, given as one polynomial per piece in s = (t - t0) / eps
tent = NoiseKernel.from_shape(0.06, 0.01, (-1.0, 0.0, 1.0), [[0.0, 1.0], [1.0, -1.0]])
w = sample_values(tent, 100_000, seed=7)
hist, edges = np.histogram(w, bins=10, range=tent.support, density=True)
mid = 0.5 * (edges[1:] + edges[:-1])
for m, h in zip(mid, hist):
    print(f"{m:.4f} {h:7.1f} {float(tent.density(m)):7.1f}")
print("rejection budget", tent.rejection_budget)
