"""Reference LM synthesizer backend for the tabsynth wire protocol."""

__version__ = "0.1.0"

from .model import GenerationSettings, load_pretrained, pretrain
from .server import AdapterSession, ServerSettings, serve_socket, serve_stdio

__all__ = [
    "GenerationSettings",
    "load_pretrained",
    "pretrain",
    "AdapterSession",
    "ServerSettings",
    "serve_socket",
    "serve_stdio",
]
