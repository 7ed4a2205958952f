"""Experience-based multi-modal contact planning for a quadruped on rebar grids."""

__version__ = "0.1.0"
