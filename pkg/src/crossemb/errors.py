"""Exception types shared across the pipeline."""


class CrossembError(Exception):
    """Base class for all library errors."""


class DegenerateRotation6D(CrossembError):
    """6D rotation code has a near-zero or near-parallel column pair."""


class InvalidComponent(CrossembError):
    """A state component is non-finite or fails rotation decoding."""


class EmptyDataset(CrossembError):
    """Statistics requested over zero frames."""


class InsufficientFrames(CrossembError):
    """An embodiment tag has too few frames for per-embodiment statistics."""

    def __init__(self, tag: str, count: int):
        super().__init__(f"embodiment tag {tag!r} has only {count} frame(s); need >= 2")
        self.tag = tag
        self.count = count


class UnknownEmbodimentTag(CrossembError):
    """Tag not resolvable under the normalization statistics mode."""


class DegenerateTrajectory(CrossembError):
    """Trajectory has fewer than two frames or non-increasing timestamps."""


class EmptyStream(CrossembError):
    """Stream synchronization received an empty input stream."""


class DimensionMismatch(CrossembError):
    """Array argument has the wrong length or shape."""


class NonFiniteTarget(CrossembError):
    """IK target pose contains NaN or Inf."""


class RetargetFailure(CrossembError):
    """Retargeting received non-finite inputs."""


class ParseError(CrossembError):
    """A raw capture line failed to parse."""

    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class FrameSyncExhausted(CrossembError):
    """Timestamp synchronization left fewer than two usable frames."""


class BodyMotionRejected(CrossembError):
    """Episode rejected: head excursion exceeds the body-motion threshold."""

    def __init__(self, excursion_m: float, threshold_m: float):
        super().__init__(
            f"head excursion {excursion_m:.3f} m exceeds threshold {threshold_m:.3f} m"
        )
        self.excursion_m = excursion_m
        self.threshold_m = threshold_m


class ChecksumMismatch(CrossembError):
    """Stored episode bytes do not match the manifest checksum."""


class VersionUnsupported(CrossembError):
    """Dataset or checkpoint format version is not supported."""


class EpisodeTooShort(CrossembError):
    """Episode has too few frames to extract a training pair."""


class EmptySource(CrossembError):
    """Mixed sampler was given a tag with no pairs."""

    def __init__(self, tag: str):
        super().__init__(f"pair source for tag {tag!r} is empty")
        self.tag = tag


class NonFiniteLoss(CrossembError):
    """Training loss became NaN or Inf."""
