"""Exception types shared across the toolkit."""


class ResplatError(Exception):
    """Base class for all toolkit errors."""


class InvalidPrimitiveError(ResplatError):
    """A Gaussian primitive violates its invariants (e.g. degenerate quaternion)."""


class ShapeMismatchError(ResplatError, ValueError):
    """Array shapes do not satisfy an operation's contract."""


class RenderError(ResplatError):
    """Rendering cannot proceed (e.g. non-finite splat parameters)."""


class DegenerateGeometryError(ResplatError):
    """Geometric fit is underdetermined (e.g. collinear camera centers)."""


class SceneInitError(ResplatError):
    """Scene initialization failed (e.g. empty filtered point cloud)."""


class RestorerError(ResplatError):
    """A restoration backend failed or produced an invalid response."""


class PipelineRoundError(ResplatError):
    """An iterative-reconstruction round aborted; the scene was rolled back.

    Attributes:
        round_index: 1-based index of the aborted round.
        scene: The scene state after rollback (identical to the pre-round snapshot).
    """

    def __init__(self, message, round_index, scene):
        super().__init__(message)
        self.round_index = round_index
        self.scene = scene
