"""Test package for the extreme-value pricing calculators.

Unit tests cover the GEV margins, the Schlather dependence model, composite
likelihood fitting, contract pricing, station data handling, the simulation
study and the command line.  Long-running checks are marked ``slow`` and
deselected by default; run them with ``pytest -m slow``.
"""
