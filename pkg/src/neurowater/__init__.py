"""Predictive, event-driven telemetry for water-meter networks.

Modules
-------
series     time series container, synthetic demand, gaps and outliers
forecast   delay-embedding polynomial regression with a ridge readout
inference  precision-weighted errors, adaptive thresholds, free energy
anomaly    rolling mean plus k-sigma detection and anomaly injection
netsim     lock-step edge/fog/cloud network simulator
scenario   YAML scenarios and run reports
cli        ``neurowater`` command line entry point
"""

__version__ = "0.1.0"
