"""Hyperspectral super-resolution rectification toolkit.

Plug-and-play spectral rectifier (grouped trilateral attention + low-rank
manifold correction), classical rectifier baselines, degradation models for
test-time mismatch studies, and the spectral/spatial metric suite.
"""

__version__ = "0.1.0"

from .cube import HsiCube, read_cube, write_cube
from .degrade import DegradationSpec
from .metrics import MetricReport

__all__ = ["HsiCube", "read_cube", "write_cube", "DegradationSpec", "MetricReport", "__version__"]
