"""Desk-scale dynamic manipulation benchmark: moving-target trajectories, a
planar kinematic world, scripted experts, metrics, dense optical flow and a
small predictive policy trained by behavioural cloning."""

__version__ = "0.1.0"
