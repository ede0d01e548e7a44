from .geometry import (
    EMPTY_MASS_EPS,
    PartCenter,
    axis_coords,
    channel_centers,
    coordinate_grid,
    part_center,
)
from .transforms import (
    ColorJitter,
    CompositeTransform,
    JitterRanges,
    SimilarityTransform,
    SpatialTransform,
    TpsTransform,
    TransformError,
    TransformRanges,
    apply_transform_to_map,
    apply_transform_to_points,
    sample_transform,
)

__all__ = [
    "EMPTY_MASS_EPS",
    "PartCenter",
    "axis_coords",
    "channel_centers",
    "coordinate_grid",
    "part_center",
    "ColorJitter",
    "CompositeTransform",
    "JitterRanges",
    "SimilarityTransform",
    "SpatialTransform",
    "TpsTransform",
    "TransformError",
    "TransformRanges",
    "apply_transform_to_map",
    "apply_transform_to_points",
    "sample_transform",
]
