"""Craig-Wayne-Bourgain Newton scheme for time-periodic solutions of the
fractional nonlinear wave equation on the d-torus, with numerical audits of
its operator bounds, arithmetic conditions and coupling estimates."""

__version__ = "0.1.0"
