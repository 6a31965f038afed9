"""Rotary position embeddings with a side-information axis for multi-reference, multi-shot attention."""

__version__ = "0.1.0"

from .errors import ConfigError, LayoutError, NumericError, PromptParseError  # noqa: E402
from .rope_core import (Axis, PlaneSchedule, Realloc, RelativeOffset, RotaryConfig, apply_rotation,  # noqa: E402
                        build_plane_schedule, plane_frequency, relative_score_oracle, rotation_block)
from .sideinfo import SideInfoVec, ref_phase, side_angles, side_distance  # noqa: E402
from .layout import (SequenceLayout, ShotSpec, TokenCoord, assign_coords, build_layout,  # noqa: E402
                     parse_shot_prompt)
from .attention import (AttentionMask, apply_positional, attention_scores, hierarchical_mask,  # noqa: E402
                        masked_cross_attention, self_attention, softmax_rows)
from .diagnostics import ShotRefMatrix, confusion_argmax, shot_to_ref_scores  # noqa: E402

__all__ = [
    "ConfigError", "LayoutError", "NumericError", "PromptParseError",
    "Axis", "PlaneSchedule", "Realloc", "RelativeOffset", "RotaryConfig", "apply_rotation",
    "build_plane_schedule", "plane_frequency", "relative_score_oracle", "rotation_block",
    "SideInfoVec", "ref_phase", "side_angles", "side_distance",
    "SequenceLayout", "ShotSpec", "TokenCoord", "assign_coords", "build_layout", "parse_shot_prompt",
    "AttentionMask", "apply_positional", "attention_scores", "hierarchical_mask", "masked_cross_attention",
    "self_attention", "softmax_rows",
    "ShotRefMatrix", "confusion_argmax", "shot_to_ref_scores",
]
