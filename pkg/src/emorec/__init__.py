"""Emotion-aware recommendation: Emotional Scores, emotion-regularized MF, evaluation."""

__version__ = "0.1.0"
