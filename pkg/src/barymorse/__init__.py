"""Numerical toolkit for the resonant mean field equation on the flat torus and the round sphere.

Submodules: ``surface`` (geometry, spectra, Green's functions),
``reduced_energy`` (the finite-dimensional interaction energy),
``critical_search``, ``topology``, ``morse_report``, ``bubbles``
(approximate solutions and expansion checks), ``mf_solver`` and ``cli``.
"""

from .surface import build_surface
from .reduced_energy import KFunction, reduced_energy, trig_preset

__version__ = "0.1.0"
__all__ = ["build_surface", "KFunction", "reduced_energy", "trig_preset", "__version__"]
