"""Python surface for the bnfk binary-network deepfake detector.

Everything heavy lives in the compiled extension; this package just
re-exports it with a stable import path.
"""

from ._core import (
    DataError,
    ModelFormatError,
    accuracy,
    auc,
    build_stack,
    count_ops,
    evaluate,
    fft_magnitude_channel,
    generate_synthetic,
    init_model,
    lbp_channel,
    predict,
    sign_quantize,
    sobel_channel,
    synthetic_image,
    to_grayscale,
)

__all__ = [
    "DataError",
    "ModelFormatError",
    "accuracy",
    "auc",
    "build_stack",
    "count_ops",
    "evaluate",
    "fft_magnitude_channel",
    "generate_synthetic",
    "init_model",
    "lbp_channel",
    "predict",
    "sign_quantize",
    "sobel_channel",
    "synthetic_image",
    "to_grayscale",
]
