"""Engine, data pipeline, and server for a generative character-life
simulation: world-model orchestration with bounded meters, distillation
dataset collection, pairwise judge evaluation, regional attention-fusion
reference math, and an HTTP game API.
"""

__version__ = "0.1.0"
