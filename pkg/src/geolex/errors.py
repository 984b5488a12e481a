"""Exception types shared across the pipeline modules."""


class DatasetError(Exception):
    """A dataset file is malformed or internally inconsistent."""


class TransportError(Exception):
    """Network-level failure: timeouts, refused connections, HTTP 429/5xx.

    Transport errors are the retryable class of remote failure.
    """


class ProtocolError(Exception):
    """The remote service answered, but with something unusable.

    Covers non-retryable HTTP statuses and malformed response bodies.
    """


class ReplayCacheMiss(Exception):
    """A replay-mode request had no recorded response on disk."""
