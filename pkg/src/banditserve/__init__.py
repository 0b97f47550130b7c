"""banditserve: a contextual multi-armed bandit decision service.

A policy is split into two bounded-cost steps: a streaming *summary* step
that folds each observed (context, action, reward) interaction into a
fixed-size state, and an on-demand *decision* step that maps (context,
state) to the next action. The package ships a catalog of built-in
policies behind a small REST protocol, persistent keyed state with
write-ahead logging, per-experiment interaction logs, an admin CLI, and
a simulation harness for measuring cumulative reward.
"""

__version__ = "0.1.0"
