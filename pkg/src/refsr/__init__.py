"""Reference-conditioned super-resolution engine.

Matches texture patches between a low-resolution input and an arbitrary
reference image in feature space, swaps and similarity-weights the matched
texture, and fuses it into an upscaling network trained with a combined
reconstruction / perceptual / adversarial / texture objective.
"""

__version__ = "0.1.0"
