"""
A ball of reachable points after three returns

For a regular point the endpoints of many random orbits cover a ball
around the unperturbed image whose radius scales with epsilon.
"""

from randtangency import ModelParams
from randtangency.noise import NoiseKernel
from randtangency.geometry import verify_ball

model = ModelParams()
kernel = NoiseKernel.uniform(0.06, 0.01)
x = (0.0652, 1.0048, 0.958)

for eps in (0.005, 0.01):
    r = verify_ball(model, kernel.with_epsilon(eps), x, n_sequences=10_000, seed=0)
    print(f"eps {eps}: returns {r.returns}, radius {r.radius:.2e}, K {r.K_empirical:.4f}, "
          f"linearized {r.linearized_radius:.2e}, sigma_min {r.sigma_min:.4f}")
    for s, rad in zip(r.spacings_tried, r.radii):
        print(f"   spacing {s:.2e} -> certified radius {rad:.2e}")
