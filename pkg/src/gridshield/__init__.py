"""Cross-layer attack detection for power-grid measurement streams.

Submodules
----------
gridmodel   DC network model, bundled test cases, daily measurement streams
sestimator  WLS state estimation, innovation index, chi-squared bad data test
netsim      per-link M/M/1 traffic channels and attack traffic generators
attackgen   labelled attack datasets (MFDI, C-MFDI, MDoS, MFDI-MDoS, MITM)
detector    per-bus adaptive Mahalanobis ensemble and global baseline
eval        metrics, sliding cross-validation, method comparison, beta sweep
cli         ``gridshield`` command line
"""

__version__ = "0.1.0"
