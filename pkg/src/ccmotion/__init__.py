"""ccmotion: causal convolutional motion engine.

Autoregressive next-pose prediction over a heading-levelled motion
representation, with skeleton / direction / motion-type conditioning,
plus the surrounding tooling: BVH ingestion, a procedural gait corpus,
training, interactive synthesis and a WebSocket service.
"""

__version__ = "0.1.0"
