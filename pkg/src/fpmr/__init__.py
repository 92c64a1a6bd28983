"""Fokker-Planck simulations of magnetic resonance experiments.

Spatial dynamics (rotor phases, RF phases, coordinates) become extra
Kronecker factors of the state space, which makes the evolution generator
time-independent for spinning, diffusion, flow and phase-modulated pulses.
"""

__version__ = "0.1.0"
