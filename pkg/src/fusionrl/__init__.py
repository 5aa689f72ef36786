"""Offline RL for personalized multi-task score fusion in session recommenders."""

__version__ = "0.1.0"
