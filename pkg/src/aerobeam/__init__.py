"""Secure collaborative beamforming with a UAV swarm.

A simulator and learning stack: spherical-wave array physics, free-space
wiretap links, Gauss-Markov ground movers, an episodic swarm-control
environment, a from-scratch float64 network engine, a diffusion-policy
actor, and TD3-family training with a reproducible experiment harness.
"""

__version__ = "0.1.0"
