"""Client-server encrypted synthesis sessions.

Server-side names import eagerly. Client-side names (which pull in secret-key
code) load on first attribute access, so ``import encsynth.service.server``
never brings key material into a server process.
"""

from .messages import (ABS, FACTOR_ID, Ack, Error, FinalTable, Message, ProtocolError,
                       RefreshRequest, RefreshResponse, SessionInit, TableRequest, Transition,
                       deserialize_message, frame, serialize_message, unframe)
from .errors import SessionAborted, SessionFailed
from .server import ServerError, SynthServer, deserialize_table, serialize_table
from .transport import (InProcessTransport, SocketServer, SocketTransport, Transcript,
                        Transport, TransportError)

_CLIENT_NAMES = {"Checkpoint", "SessionConfig", "SessionResult", "SynthClient", "clamp_desirability",
                 "extract_policy_at_client", "predict_refreshes", "run_session", "session_transitions", "session_value",
                 "DEFAULT_TABLE_SCALE", "POSITIVITY_FLOOR"}


def __getattr__(name):
    if name in _CLIENT_NAMES:
        from . import client

        return getattr(client, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = sorted(_CLIENT_NAMES | {
    "ABS", "FACTOR_ID", "Ack", "Error", "FinalTable", "Message", "ProtocolError",
    "RefreshRequest", "RefreshResponse", "SessionInit", "TableRequest", "Transition",
    "deserialize_message", "frame", "serialize_message", "unframe", "ServerError",
    "SynthServer", "SessionAborted", "SessionFailed", "deserialize_table", "serialize_table", "InProcessTransport",
    "SocketServer", "SocketTransport", "Transcript", "Transport", "TransportError"})
