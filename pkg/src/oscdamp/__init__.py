"""Inter-area oscillation damping toolkit: swing-model simulation, data-driven
modal analysis, PSS / wide-area switching control, and DDPG training."""

__version__ = "0.1.0"
