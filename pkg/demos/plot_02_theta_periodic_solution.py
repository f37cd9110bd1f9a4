"""
A solution that is periodic along the Wiener shift
==================================================

For the cosine-modulated drift the solution is not periodic in time, but
translating it by one period while shifting the noise reproduces it.
Ordinary translation does not.
"""

import math

import numpy as np

from fracap.almost_periodic import plain_ap_deviation, theta_ap_deviation
from fracap.sde import drift_spec, integrate_two_sided

dt = 2 * math.pi / 64
paths = integrate_two_sided(drift_spec("example4"), hurst=0.7, T=30 * dt * 8, dt=dt,
                            replicates=2000, seed=3)
probes = [k * dt for k in range(0, 64, 8)]
tau = 2 * math.pi

print("theta-deviation at tau = 2 pi:", theta_ap_deviation(paths, tau, probes))
print("plain deviation at tau = 2 pi:", plain_ap_deviation(paths, tau, probes))
var = paths.x[:, paths.grid.index_of(0.0)].var()
print("sqrt(2 Var X):                 ", math.sqrt(2 * var))

# an off-period lag breaks the identity
print("theta-deviation at tau = 1:    ", theta_ap_deviation(paths, 16 * dt, probes))
