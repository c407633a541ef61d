# calculators/__init__.py
# Nothing is re-exported here; import submodules directly (e.g. calculators.pricing).
