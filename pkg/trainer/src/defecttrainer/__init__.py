"""Reference trainer for mixed supervised defect streams: a ResNet18 binary
classifier trained on the toolkit's stream containers, validated and scored
against MVTec-style folder splits. Metrics always come from the toolkit's
evaluate command; this package only produces checkpoints and score CSVs."""

__version__ = "0.1.0"
