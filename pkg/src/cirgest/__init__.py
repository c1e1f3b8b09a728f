"""Acoustic gesture sensing toolkit.

Ultrasonic sounding waveforms, simulated multipath channels driven by hand
trajectories, least-squares channel impulse response estimation, differential
CIR imaging, retrieval-augmented classification and evaluation.
"""

__version__ = "0.1.0"
