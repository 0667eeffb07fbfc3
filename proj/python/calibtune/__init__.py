"""Calibration metrics and margin/moment-regularized prompt tuning."""

from ._core import (
    PromptModel,
    SyntheticTask,
    __version__,
    build_task,
    compute_report,
    cosine_logits,
    cross_entropy,
    evaluate,
    fit_temperature,
    gradient_check,
    l1_align_loss,
    make_prompt_model,
    margin_ecdf,
    margin_loss,
    margins,
    mbls_loss,
    moment_loss,
    moment_summary,
    pearson,
    sample_images,
    softmax,
    train,
)

__all__ = [
    "PromptModel",
    "SyntheticTask",
    "__version__",
    "build_task",
    "compute_report",
    "cosine_logits",
    "cross_entropy",
    "evaluate",
    "fit_temperature",
    "gradient_check",
    "l1_align_loss",
    "make_prompt_model",
    "margin_ecdf",
    "margin_loss",
    "margins",
    "mbls_loss",
    "moment_loss",
    "moment_summary",
    "pearson",
    "sample_images",
    "softmax",
    "train",
]
