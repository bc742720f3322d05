"""Planar human-assisted grasping lab.

A 3-finger planar hand whose wrist is driven externally (scripted
trajectories or a live human stream) while a learned policy closes the
fingers.  The finger controller is a two-stage composition: a
score-matching gradient field proposing a primitive joint action, and a
residual policy (trained with PPO) that rescales and corrects it.
"""

__version__ = "0.1.0"
