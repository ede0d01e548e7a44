"""Self-supervised co-part segmentation toolkit.

Trains a fully convolutional part segmentation network on an image
collection of a single object category, without part annotations, using
geometric concentration, equivariance, saliency-masked semantic
consistency, and an orthonormal basis penalty. Ships with a
factorization baseline and the landmark-regression / foreground-IoU
evaluation protocols.
"""

__version__ = "0.1.0"
