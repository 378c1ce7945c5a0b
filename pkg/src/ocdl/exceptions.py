"""Exception hierarchy shared by all ocdl modules."""


class OcdlError(Exception):
    """Base class for all errors raised by ocdl."""


class DimensionMismatch(OcdlError):
    """Two objects that must share a shape do not."""

    def __init__(self, what, shape_a, shape_b):
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        super().__init__("%s: %s vs %s" % (what, self.shape_a, self.shape_b))


class InvalidMask(OcdlError):
    """A sensing mask contains an entry outside {0, 1}."""


class KernelNormViolation(OcdlError):
    """A dictionary kernel exceeds the unit l2 ball."""

    def __init__(self, modality, kernel, norm):
        self.modality = modality
        self.kernel = kernel
        self.norm = float(norm)
        super().__init__(
            "kernel (l=%d, k=%d) has l2 norm %.6g > 1" % (modality, kernel, norm)
        )


class EmptyBatch(OcdlError):
    """A memory update was requested with no samples."""


class EmptyMemory(OcdlError):
    """A dictionary update or gradient was requested before any sample."""


class NonFiniteCost(OcdlError):
    """The solver produced a non-finite cost; carries the last valid result."""

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


class NoConvergence(OcdlError):
    """An iterative estimator exhausted its iteration budget."""

    def __init__(self, message, estimate=None):
        self.estimate = estimate
        super().__init__(message)


class AllMasked(OcdlError):
    """A mask leaves no observed pixel to work with."""


class NoMissingPixels(OcdlError):
    """A missing-pixel metric was requested on a fully observed mask."""


class PatchTooLarge(OcdlError):
    """A requested patch does not fit inside the frame."""


class EmptySource(OcdlError):
    """A training stream yielded no samples."""


class ConfigError(OcdlError):
    """A configuration file is malformed; carries the offending line."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = "line %d: %s" % (line_no, message)
        super().__init__(message)


class TensorIOError(OcdlError):
    """A tensor container file is unreadable; carries file and offset."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        if path is not None:
            message = "%s (file %s, offset %s)" % (message, path, offset)
        super().__init__(message)
