"""Simulation and inference toolkit for semilinear SDEs driven by fractional Brownian motion.

Modules:
    fbm: two-sided fBm generation, Wiener shift, path I/O.
    wiener: Wiener integrals of deterministic integrands and their second moments.
    sde: model catalog, exponential-Euler integration, translation of solutions.
    almost_periodic: Bohr means, spectra, epsilon-almost periods, process diagnostics.
    skorokhod: Malliavin kernel of the solution and Skorokhod integrals.
    estimator: drift-parameter estimator, consistency series, ergodic averages.
    harness: configuration, experiment runs, manifests and acceptance suites.
"""

__version__ = "0.1.0"

from .errors import FracapError  # noqa: F401
from .fbm import FbmEnsemble, TimeGrid, sample_ensemble, wiener_shift_path  # noqa: F401
from .sde import DriftSpec, PathEnsemble, drift_spec, integrate, integrate_two_sided, translate_solution  # noqa: F401
