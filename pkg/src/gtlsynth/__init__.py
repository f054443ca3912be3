"""Policy synthesis for factored MDPs under graph temporal logic specifications."""

__version__ = "0.1.0"
