"""Predict micropillar compression force from acoustic emission.

Fine-scale forests predict force increments over short windows from AE
amplitude moments or wavelet band moments; coarse-scale forests predict the
force itself from long windows. The two are combined into a force-time curve.
"""

__version__ = "0.1.0"
