"""Exception hierarchy shared by all tabsynth modules."""


class TabsynthError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(TabsynthError):
    """Invalid schema declaration or schema/data mismatch."""


class DataError(TabsynthError):
    """Cell-level or file-level data validation failure."""


class MappingError(TabsynthError):
    """Invalid label mapping: broken bijection, missing coverage, pool problems."""


class ConnectError(TabsynthError):
    """Cross-table connection failure: bad partition, missing pools, bad cut."""


class CodecError(TabsynthError):
    """Row/sentence encoding problems (not per-sentence rejections)."""


class ProtocolError(TabsynthError):
    """Wire-protocol violation talking to an external synthesizer backend."""


class BackendError(TabsynthError):
    """External backend unreachable or misbehaving at the transport level."""


class EvaluationError(TabsynthError):
    """Fidelity evaluation failure: empty distribution, pair-set mismatch."""


class ConfigError(TabsynthError):
    """Pipeline configuration invalid or incomplete."""


class LockError(TabsynthError):
    """Run directory already locked by another in-flight run."""
