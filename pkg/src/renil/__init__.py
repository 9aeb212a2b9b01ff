"""Pedestrian inertial localization: orientation filter, any-scale displacement
network and a Bayesian chain over positioning demand points."""

__version__ = "0.1.0"
