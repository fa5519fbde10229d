"""Reasoning-chain policies for tabletop manipulation.

Pose trajectories, with or without recorded actions, are labeled with short
textual reasoning chains.  A small autoregressive transformer is co-trained
on mixtures of action-labeled and action-free chain data, then rolled out in
a synthetic pick-and-place world with grammar-constrained decoding.
"""

__version__ = "0.1.0"
