"""Weight-hardening lab: saturated activation functions on weights, bit-exact
fault injection over FP32/FP16/Q2.5 storage, and Monte Carlo evaluation."""

__version__ = "0.1.0"
