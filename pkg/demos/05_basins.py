"""
Basin partition of noise sequences

Each sequence is assigned to the component its time averages approach;
the weights are compared with a mixture fit of the long-orbit histogram.
"""

from randtangency import ModelParams
from randtangency.noise import NoiseKernel
from randtangency.measures import basin_partition, cesaro_measure, components_for, mixture_fit

model = ModelParams()
kernel = NoiseKernel.uniform(0.06, 0.01)
ms = components_for(model, kernel, 64, seed=0)

for x in [(0.0652, 1.0048, 0.958), (0.0, 0.0, 0.0)]:
    bp = basin_partition(model, kernel, x, ms, 1000, 10_000, seed=0)
    print(x, bp.to_dict())

h = cesaro_measure(model, kernel, (0.0652, 1.0048, 0.958), 10_000, 1000, ms.grid, seed=0)
print("mixture weights", mixture_fit(h, ms))
