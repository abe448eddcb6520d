"""Weekly epidemic case forecasting with ensembles of small recurrent nets."""

__version__ = "0.1.0"
