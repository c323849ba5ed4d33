"""Multi-label job-title prediction from job descriptions (Bi-GRU-LSTM-CNN, numpy only)."""

__version__ = "0.1.0"
