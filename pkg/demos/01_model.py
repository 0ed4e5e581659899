"""
The piecewise model near the tangency

Checks the default parameters, steps a few points through the linear
region and the fold, and looks at how the derivative acts on cone vectors.
"""

import numpy as np

from randtangency import ModelParams, classify, jacobian, step, validate_params
from randtangency.model import slope

model = ModelParams()
print(validate_params(model))

# the fold sends r = (1, 0, 0) onto the tangency q = (0, 1, 1) at t = 0
for x in [(1.0, 0.0, 0.0), (0.05, 1.0, 1.0), (0.3, 0.2, 0.1), (2.5, 0.0, 0.0)]:
    y = step(model, x, 0.06)
    print(f"{x} [{classify(model, x).tag}] -> {y}")

# vectors with slope >= 1 are stretched by sigma and steepened by 1/|lambda1|
J = jacobian(model, (0.3, 0.2, 0.1), 0.06)
v = np.array([1.0, 0.5, -0.3])
print("slope before", slope(v), "after", slope(J @ v), "rate", model.cone_rate)

# a flat fold is rejected
print([c.name for c in validate_params(model.replace(a=0.0)).failures])
