from __future__ import annotations


class ResourceCapError(RuntimeError):
    """A configured size limit (atoms, grid points, search depth) was exceeded."""


class SearchTimeout(RuntimeError):
    """A c.e. search did not finish within its budget; ``state`` allows resuming."""

    def __init__(self, message: str, state: object = None) -> None:
        super().__init__(message)
        self.state = state
