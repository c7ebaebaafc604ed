"""Learn Hamiltonian dynamics from trajectory data and assimilate
measurements online with an unscented Kalman filter built on the learned
one-step map."""

__version__ = "0.1.0"
