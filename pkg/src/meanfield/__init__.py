"""Mean-field laboratory for bosonic many-body dynamics on finite mode spaces."""

__version__ = "0.1.0"
