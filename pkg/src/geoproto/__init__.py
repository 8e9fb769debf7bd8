"""Mixed-type k-prototypes clustering and A/E mortality deviation analysis."""

__version__ = "1.0.0"
