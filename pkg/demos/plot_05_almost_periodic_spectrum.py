"""
Spectrum and almost periods of a quasi-periodic signal
======================================================

cos t + cos(sqrt 2 t) has four Bohr frequencies and no exact period, yet
its 0.2-almost periods form a relatively dense set.
"""

import math

import numpy as np

from fracap.almost_periodic import SampledSignal, epsilon_almost_periods, spectrum_scan
from fracap.fbm import TimeGrid

grid = TimeGrid(0.0, 0.01, 60_001)
f = SampledSignal.from_function(lambda t: np.cos(t) + np.cos(math.sqrt(2) * t), grid)

spec = spectrum_scan(f, np.arange(-3.0, 3.0, 0.002), horizon=500.0)
for lam, c in zip(spec.frequencies, spec.coefficients):
    print(f"lambda = {lam:+.5f}   |c| = {abs(c):.4f}")
print("Parseval defect:", round(spec.parseval_defect, 5))

rep = epsilon_almost_periods(f, 0.2, np.arange(0, 15_001) * 0.01)
print("number of 0.2-almost periods in [0, 150]:", len(rep.candidate_periods))
print("every window of length", round(rep.relatively_dense_at_l, 2), "contains one")
