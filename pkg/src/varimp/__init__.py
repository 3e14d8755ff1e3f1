"""Variable-impedance skill commissioning toolkit.

Fit pose-and-force movement primitives from a demonstration, execute them
through a discrete-time admittance controller against simulated contact,
and train a soft actor-critic policy that adapts the controller stiffness
online to balance position against force tracking.
"""

__version__ = "0.1.0"
