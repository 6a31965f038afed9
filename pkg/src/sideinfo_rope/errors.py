"""Exception types raised across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """A configuration violates its invariants (odd head dim, bad channel split, ...)."""


class LayoutError(ValueError):
    """Sequence layout ranges overlap, are unordered, or have the wrong size."""


class PromptParseError(ValueError):
    """A shot prompt mentions a reference outside ``1..K``."""

    def __init__(self, mentions: list[str], num_refs: int):
        self.mentions = mentions
        self.num_refs = num_refs
        super().__init__(
            f"reference mention(s) out of range 1..{num_refs}: {', '.join(mentions)}"
        )


class NumericError(FloatingPointError):
    """A non-finite value showed up in an intermediate result."""

    def __init__(self, location: str):
        self.location = location
        super().__init__(f"non-finite values in {location}")


class StaleCacheError(RuntimeError):
    """Backward pass called with a cache whose parameters no longer match the layer."""


class TrainingDivergedError(RuntimeError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss!r}) at step {step}")
