"""Offline figure families for saoi-sim experiment outputs.

Consumes only the files the experiment runner writes (per-episode CSVs,
summary.csv, manifest.json). Nothing here recomputes physics: plotted
series are read verbatim from disk.
"""

from .families import KINDS, build_figure, plot_family
from .io import PlotDataError

__version__ = "0.1.0"

__all__ = ["KINDS", "build_figure", "plot_family", "PlotDataError",
           "__version__"]
