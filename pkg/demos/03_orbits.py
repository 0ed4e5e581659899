"""
Random orbits and returns to Q

Follows one orbit, reads its return times off the region labels and then
checks, over many noise sequences, that the returns do not depend on the
sequence.
"""

from randtangency import ModelParams
from randtangency.noise import NoiseKernel
from randtangency.orbits import (birkhoff_average, bookkeeping_violations, classify_recurrence, get_observable,
                                 random_orbit, return_times)

model = ModelParams()
kernel = NoiseKernel.uniform(0.06, 0.01)
x0 = (0.0652, 1.0048, 0.958)

rec = random_orbit(model, kernel, x0, 2000, seed=1)
print("first labels:", rec.label_names()[:11])
rt = return_times(rec)
print("return times:", rt.times[:10], "... total", len(rt.times))
print("entries into Q not preceded by R:", bookkeeping_violations(rec.labels))
print("time average of z:", birkhoff_average(rec, get_observable("z", model)).value)

rep = classify_recurrence(model, kernel, x0, 500, horizon=20_000, burn_in=1000, seed=1)
print(rep)
