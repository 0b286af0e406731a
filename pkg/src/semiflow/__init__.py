"""semiflow: pseudospectral workbench for semiclassical Schrodinger systems.

Subpackages build on each other roughly in this order: `spectral` (fields,
norms, smoothings), `systems` (the coupled NLS system and its linearizations),
`normalform` (symbol splitting and operator conjugation), `evolution` (free
flow, linearized and nonlinear solvers), `nashmoser` (abstract iteration
engine), `decomposition` (profile + correction formulation), `estimates`
(inequality calibration lab), `experiments`/`cli` (sweeps and artifacts).
"""

from . import (  # noqa: F401
    spectral,
    systems,
    normalform,
    evolution,
    nashmoser,
    decomposition,
    estimates,
    experiments,
)

__version__ = "0.1.0"
