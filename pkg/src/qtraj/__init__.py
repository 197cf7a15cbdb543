"""Quantum trajectories and continuous-measurement POVMs for a damped mode."""
