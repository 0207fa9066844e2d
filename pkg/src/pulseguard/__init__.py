"""pulseguard: cardiac-anomaly detection in PPG waveforms.

An LSTM sequence autoencoder learns clean pulsatile morphology; regions where
windowed Pearson correlation between a signal and its reconstruction drops
below threshold are flagged as cardiac anomalies. A synthetic-data generator
and a minute-aligned evaluation harness close the loop end to end.
"""

__version__ = "0.1.0"
