"""
monitoring modules for experiment tracking, report comparison and acceptance checks.
"""

from .model_monitor import ModelMonitor, compare_reports, acceptance_checks

__all__ = [
    'ModelMonitor',
    'compare_reports',
    'acceptance_checks',
]
