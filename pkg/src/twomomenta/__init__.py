"""Two-momenta emergent velocity fields for n-slit Gaussian systems.

Slit modes and their superposition live in :mod:`wavefield`, the
three-channel decomposition and emergent velocity in :mod:`channels`,
trajectories in :mod:`dynamics`, identities and residuals in
:mod:`diagnostics`, an independent grid solver in :mod:`oracle`, and the
scenario runner in :mod:`cli`.
"""

__version__ = "0.1.0"
