"""Pretraining and augmentation search for sparse, irregularly sampled time series."""
