"""HIFQL: Hierarchical Implicit Flow Q-Learning on a desk-scale maze lab."""

from importlib.metadata import version

__version__ = version("hifql")
