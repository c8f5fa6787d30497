"""Simulation and verification toolkit for descendants in preferential attachment graphs."""

import os

# Skip numba's TBB probe: the layer is optional and warns loudly when the
# installed TBB is too old.  OpenMP is chosen instead unless the user set one.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

__version__ = "0.1.0"
