"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ConfigError -> 1, InvariantError -> 2.
"""


class PimschedError(Exception):
    """Base class for all package errors."""


class GraphError(PimschedError):
    """Malformed model graph (bad ids, cycles, disconnected layers, bad values)."""


class TopologyError(PimschedError):
    """Malformed system topology (unknown nodes, disconnected fabric, bad geometry)."""


class ConfigError(PimschedError):
    """Invalid or inconsistent configuration input."""


class FormatError(ConfigError):
    """Unparseable or schema-violating input file.

    Carries optional file/line context so CLI messages can point at the
    offending spot.
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
            if line is not None:
                prefix += f"{line}:"
            prefix += " "
        super().__init__(prefix + message)


class InvariantError(PimschedError):
    """A runtime invariant of the simulator or trainer was violated."""
