"""Gray-box structure poisoning of attribute-incomplete graphs."""

__version__ = "0.1.0"
