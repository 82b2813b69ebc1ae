"""Catecholamine-initiation prediction from ICU mean arterial pressure windows.

Subpackages and modules, in pipeline order: ``ingest`` (event tables and MAP
fusion), ``cohort`` (windows, labels, splits), ``features`` (the 37-slot
matrix), ``learn`` (boosted trees, isotonic calibration, last-MAP baseline),
``explain`` (TreeSHAP), ``metrics`` (evaluation suite), ``synth`` (synthetic
cohorts) and ``cli``.
"""

__version__ = "0.1.0"
