"""Adjusted plus-minus ratings for soccer players from goals, expected goals and expected points."""

__version__ = "0.1.0"

from .errors import SoccerPMError  # noqa: E402

__all__ = ["SoccerPMError", "__version__"]
