"""Trajectory-level entropy production for a continuously measured qubit.

Modules
-------
model          coefficients of the reduced and 3-D Bloch SDEs, stationary density
sde            Euler-Maruyama trajectories and seeded ensembles
fokker_planck  finite-volume solver for p(rz, t)
entropy        environmental, system and total entropy; boundary term; KL oracle
protocol       measurement connect (M) and disconnect (Mbar) runs
analysis       histograms, fluctuation-theorem fit, summaries, plot data
cli            ``qsd-entropy`` command
"""

__version__ = "0.1.0"

from .errors import QSDError  # noqa: E402
from .model import BlochState, BlochVector, ModelParams  # noqa: E402

__all__ = ["BlochState", "BlochVector", "ModelParams", "QSDError", "__version__"]
