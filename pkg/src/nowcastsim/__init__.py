"""Nowcasting microsimulation of a labour-market shock and its
income-support response on household microdata."""

__version__ = "0.1.0"
