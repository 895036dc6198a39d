"""Deep active-inference simulation of the rubber-hand illusion.

Subpackages and modules:

- ``autodiff``: reverse-mode differentiation over float64 arrays
- ``kinematics`` / ``env``: 2-DOF arm, top-down renderer, stimulation
- ``models``: visual decoder / VAE training and the served g_v(mu)
- ``causal``: visuo-tactile common-cause belief gamma
- ``agent``: perception and action updates, trial loop
- ``harness``: protocol runner, metrics, plots
"""

__version__ = "0.1.0"
