"""Interactive visual grounding on a synthetic shape world.

One encoder-decoder model plays all three dialog roles (questioner, oracle,
guesser) over procedurally generated scenes, is trained on a unified
multi-task corpus, and is evaluated by self-play with IoU scoring.
"""

__version__ = "0.1.0"
