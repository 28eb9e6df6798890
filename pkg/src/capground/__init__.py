"""Open-vocabulary weakly supervised object localization from image-caption
pairs: grounding model, activation maps, edge-gradient objectness, MIL
classification, and a detection evaluation kit."""

__version__ = "0.1.0"
