"""Beam synthesis for lookup-table constrained RIS and near-field position error bounds."""

__version__ = "0.1.0"
