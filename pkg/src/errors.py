"""
Errors for the quasi-homography stitcher.
Every failure the library can report is a StitchError carrying a category
the command line turns into an exit code.
"""

INPUT_MISSING = "input-missing"
INPUT_INVALID = "input-invalid"
DEGENERATE_GEOMETRY = "degenerate-geometry"
ESTIMATION_FAILED = "estimation-failed"
COMPOSITING_FAILED = "compositing-failed"
INTERNAL = "internal"

EXIT_CODES = {
    INPUT_MISSING: 2,
    INPUT_INVALID: 2,
    DEGENERATE_GEOMETRY: 3,
    ESTIMATION_FAILED: 3,
    COMPOSITING_FAILED: 3,
    INTERNAL: 4,
}


class StitchError(Exception):
    """Base exception for stitching errors."""

    category = INTERNAL

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context
        # stage / pair indices are attached when a chain or sequence fails
        self.stage = context.get("stage")
        self.pair = context.get("pair")

    def with_index(self, kind, index):
        """Return a copy of this error tagged with a stage or pair index."""
        err = type(self)(f"{kind} {index}: {self}", **{**self.context, kind: index})
        err.__cause__ = self
        return err

    def as_dict(self):
        out = {"error": self.category, "type": type(self).__name__, "message": str(self)}
        if self.stage is not None:
            out["stage"] = self.stage
        if self.pair is not None:
            out["pair"] = self.pair
        return out


# ── Input ─────────────────────────────────────────────────────────────────

class InputMissing(StitchError):
    category = INPUT_MISSING


class ConfigError(StitchError):
    category = INPUT_INVALID


class InputInvalid(StitchError):
    category = INPUT_INVALID


# ── Geometry ──────────────────────────────────────────────────────────────

class DegeneratePoint(StitchError):
    """The point lies on the vanishing line of the homography."""
    category = DEGENERATE_GEOMETRY


class SingularHomography(StitchError):
    category = DEGENERATE_GEOMETRY


class AffineDegenerate(StitchError):
    """Every horizontal line stays horizontal: there is no unique horizon row."""
    category = DEGENERATE_GEOMETRY


class NonMonotoneScale(StitchError):
    category = DEGENERATE_GEOMETRY


class ParallelConstraintLines(StitchError):
    category = DEGENERATE_GEOMETRY


class NoAdmissibleRoot(StitchError):
    category = DEGENERATE_GEOMETRY


class OutsideImage(StitchError):
    category = DEGENERATE_GEOMETRY


# ── Estimation ────────────────────────────────────────────────────────────

class DegenerateConfiguration(StitchError):
    category = ESTIMATION_FAILED


class IllConditioned(StitchError):
    category = ESTIMATION_FAILED


class NoConsensus(StitchError):
    category = ESTIMATION_FAILED


class ConstraintInfeasible(StitchError):
    category = ESTIMATION_FAILED


class EmptySeam(StitchError):
    category = ESTIMATION_FAILED


class TooFewFeatures(StitchError):
    category = ESTIMATION_FAILED


# ── Compositing / pipeline ────────────────────────────────────────────────

class UnboundedWarp(StitchError):
    category = COMPOSITING_FAILED


class NoOverlap(StitchError):
    category = COMPOSITING_FAILED


class LabelGap(StitchError):
    category = COMPOSITING_FAILED


class PartitionInsideOverlap(StitchError):
    category = COMPOSITING_FAILED


class ChainBreak(StitchError):
    category = ESTIMATION_FAILED


def exit_code_for(exc):
    """Map any exception to the CLI exit code."""
    if isinstance(exc, StitchError):
        return EXIT_CODES.get(exc.category, 4)
    return EXIT_CODES[INTERNAL]
