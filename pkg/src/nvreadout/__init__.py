"""Charge-state and spin-readout modelling for NV centers in diamond.

Submodules
----------
charge      two-state charge dynamics, steady states, NIR-only equilibrium
photon      photon-count statistics and threshold charge readout
scc         six-level spin-to-charge conversion transfer matrices
metrics     SNR, fidelity and spin-readout noise
protocol    count-rate model, integration time and SCC speedup
estimation  fitting routines with a scikit-learn style interface
montecarlo  seeded stochastic simulation
io          profiles, experiment files and CSV tables
"""

__version__ = "0.1.0"

from ._validation import DegeneracyError, DegenerateWarning, DomainError, NumericalError

__all__ = ["DomainError", "DegeneracyError", "NumericalError", "DegenerateWarning", "__version__"]
