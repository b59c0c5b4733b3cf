"""Subject-independent EEG emotion recognition with from-scratch CNNs."""

__version__ = "0.1.0"
