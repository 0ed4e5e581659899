"""
Stationary measures from the Ulam operator

Builds the Monte Carlo transfer matrix at two resolutions, extracts the
closed classes and their stationary densities, and runs the stationarity
and absolute continuity diagnostics.
"""

import time

from randtangency import ModelParams
from randtangency.noise import NoiseKernel
from randtangency.measures import (abs_continuity_diagnostic, cesaro_measure, components_for,
                                   stationarity_residual, total_variation)

model = ModelParams()
kernel = NoiseKernel.uniform(0.06, 0.01)

hists = []
for res in (64, 128):
    t0 = time.perf_counter()
    ms = components_for(model, kernel, res, samples_per_cell=64, seed=0)
    comp = ms.physical[0]
    h = comp.histogram(ms.grid)
    hists.append(h)
    r = stationarity_residual(h, model, kernel)
    print(f"{res}^3: {len(ms.components)} closed classes, count_l = {ms.count_l}, "
          f"{comp.size} cells, |piP - pi| = {comp.residual:.1e}, residual {r.value:.2e}, "
          f"{time.perf_counter() - t0:.1f}s")

print(abs_continuity_diagnostic(hists).to_dict())

# the long-orbit histogram on the same grid, for comparison
ces = cesaro_measure(model, kernel, (0.0652, 1.0048, 0.958), 10_000, 200, hists[0].grid, seed=1)
print("TV(Cesaro, Ulam) at 64^3:", total_variation(ces.masses, hists[0].masses))
