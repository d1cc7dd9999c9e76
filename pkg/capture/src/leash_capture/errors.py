class CaptureError(Exception):
    """Base class for capture-side failures."""


class UnsupportedModelError(CaptureError):
    """The requested model cannot expose per-step logits."""
