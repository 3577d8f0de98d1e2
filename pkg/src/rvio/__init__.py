"""Robocentric visual-inertial EKF with a photometric gradient harness."""

__version__ = "0.1.0"
