"""Session-level failures raised on the client side (no key material here)."""

from __future__ import annotations


class SessionFailed(RuntimeError):
    """The server answered with an Error message."""

    def __init__(self, code: int, detail: str):
        self.code = code
        super().__init__(f"server error {code}: {detail}")


class SessionAborted(RuntimeError):
    """Transport loss; ``checkpoint`` resumes from the last episode boundary."""

    def __init__(self, reason: str, checkpoint=None):
        self.checkpoint = checkpoint
        super().__init__(reason)
