"""mimicforge: train joint-space imitation policies against reference motion clips.

The package is organized as a numpy library: ``geom`` (rotation math),
``skeleton`` (morphology, link maps, motion clips), ``sim`` (articulated
rigid-body simulator), ``control`` (action integration and observations),
``reward`` (imitation reward terms), ``nn`` (from-scratch networks),
``trainer`` (PPO training loop), and ``cli`` (command-line entry point).
"""

__version__ = "0.1.0"
