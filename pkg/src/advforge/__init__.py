"""advforge: adversarial robustness sandbox built on a from-scratch autodiff engine."""

__version__ = "0.1.0"
