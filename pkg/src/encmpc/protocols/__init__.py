"""Party state machines for the client-server and two-server protocols."""
from .channel import ChannelError, Endpoint, Tag, make_pair, queue_pair, run_parties, socket_pair
from .client_server import (CsResult, client_project, protocol1_run, server_gradient_step)
from .replay import SessionRecord, SessionSpec, record_transcript, replay, run_session
from .session import BlindSource, KeySizeError, PartyState, SessionConfig, TwoServerKeys
from .transcript import (BlindLog, Divergence, Transcript, bit_length_profile, first_divergence,
                         reused_blinds, thin_blinds)
from .two_server import SsResult, protocol2_run

__all__ = [
    "BlindLog", "BlindSource", "ChannelError", "CsResult", "Divergence", "Endpoint",
    "KeySizeError", "PartyState", "SessionConfig", "SessionRecord", "SessionSpec", "SsResult",
    "Tag", "Transcript", "TwoServerKeys", "bit_length_profile", "client_project",
    "first_divergence", "make_pair", "protocol1_run", "protocol2_run", "queue_pair",
    "record_transcript", "replay", "reused_blinds", "run_parties", "run_session",
    "server_gradient_step", "socket_pair", "thin_blinds",
]
