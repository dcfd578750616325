"""Learning from label proportions over satellite-style image chips.

Thin python surface over the C++ engine: synthetic worlds, chip packs,
the downconv/qkm tiny models, LLP training and the orbit budget arithmetic.
"""

from ._core import (
    Dataset,
    EngineError,
    FormatError,
    Model,
    NumericError,
    ShapeError,
    __version__,
    evaluate,
    footprint,
    map_esaworldcover,
    map_humanpop,
    mae_chip,
    param_count,
    splitmix64_next,
    synth_dataset,
    throughput,
    train,
    uplink_decode,
    uplink_encode,
    volumetry,
)

__all__ = [
    "Dataset",
    "EngineError",
    "FormatError",
    "Model",
    "NumericError",
    "ShapeError",
    "__version__",
    "evaluate",
    "footprint",
    "map_esaworldcover",
    "map_humanpop",
    "mae_chip",
    "param_count",
    "splitmix64_next",
    "synth_dataset",
    "throughput",
    "train",
    "uplink_decode",
    "uplink_encode",
    "volumetry",
]
