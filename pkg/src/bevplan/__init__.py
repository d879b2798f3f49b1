"""BEV motion planning: camera lifting, semantic-grid forecasts, cost-map planning and closed-loop evaluation."""

__version__ = "0.1.0"
