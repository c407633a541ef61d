"""Configuration loading and report writing for the command line."""

from .config import RunConfig, load_run_config, load_study_config
from .reports import read_json, write_csv, write_json

__all__ = [
    "RunConfig",
    "load_run_config",
    "load_study_config",
    "read_json",
    "write_csv",
    "write_json",
]
