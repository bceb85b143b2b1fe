"""Friction estimation for hydraulic cylinders.

A LuGre physics baseline and a hybrid LSTM/random-forest estimator trained on
inverse-dynamics labels, with a cylinder simulator to generate test data.
"""

__version__ = "0.1.0"
