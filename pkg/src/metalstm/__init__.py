"""Few-shot metro passenger-flow forecasting with a meta-learned LSTM initialization."""

__version__ = "0.1.0"
