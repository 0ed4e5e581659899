"""
Return cone and return disk

Tangent vectors near the vertical at Q come back close to (0, B) after one
loop; the disk of points reached by varying the first and last parameter
has derivatives in the matching cones.
"""

from randtangency import ModelParams
from randtangency.noise import NoiseKernel
from randtangency.geometry import perturbation_curve, return_disk, verify_return_cone

model = ModelParams()
kernel = NoiseKernel.uniform(0.06, 0.01)

rep = verify_return_cone(model, kernel, n_samples=1000, seed=0)
print({k: v for k, v in rep.to_dict().items() if k != "failures"})

y = (1.0, 0.03, 0.005)
curve = perturbation_curve(model, y, kernel)
print("curve: min slope", curve.min_slope, "error vs exact", curve.max_error)

for eps in (0.005, 0.01, 0.02):
    d = return_disk(model, y, kernel.with_epsilon(eps))
    print(f"eps {eps}: return time {d.return_time}, passed {d.passed}, diameter/eps {d.diameter / eps:.2f}")
