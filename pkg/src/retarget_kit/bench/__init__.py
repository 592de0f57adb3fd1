"""Shift×Lag benchmark harness: trials, sweeps and reports."""

from .trial import TrialRecord, TrialSpec, run_trial

__all__ = ["TrialRecord", "TrialSpec", "run_trial"]
