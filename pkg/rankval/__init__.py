"""Empirical-Bayes ranking with r-values, baseline rankers and a Monte-Carlo bench."""

from rankval.config import settings

__version__ = settings.VERSION
