"""Cross-problem QAOA parameter transfer from MaxCut donors to MIS acceptors."""

__version__ = "0.1.0"
