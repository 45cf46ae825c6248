"""Goal selection for deterministic grid planning tasks.

The package bundles a rocks-and-diamonds style grid environment, a
forward-search planner over a typed STRIPS fragment with negative
preconditions and conditional effects, a small numpy neural-network
engine, and offline Q-learning over planner subgoals.
"""

__version__ = "0.1.0"
