"""pimsched: discrete-event simulation and learned scheduling for
heterogeneous processing-in-memory chiplet systems."""

__version__ = "0.1.0"
