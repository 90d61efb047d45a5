"""Classical simulator of a hybrid Chebyshev/noisy-estimator Kohn-Sham SCF iteration."""

__version__ = "0.1.0"
