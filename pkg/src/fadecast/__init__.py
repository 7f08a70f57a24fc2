"""Deep-learning channel prediction for time-varying Rayleigh fading links."""

__version__ = "0.1.0"
