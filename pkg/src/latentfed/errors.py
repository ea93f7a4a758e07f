"""Exception types shared across the simulator."""


class LatentFedError(Exception):
    """Base class for all simulator errors."""


class ShapeError(LatentFedError):
    """Dimension mismatch in a matrix/layer operation."""


class DomainError(LatentFedError):
    """Value outside its legal domain (e.g. label out of range)."""


class ContractError(LatentFedError):
    """API contract violated (e.g. backward with a stale cache)."""


class ModalityError(LatentFedError):
    """Batch supplied the wrong modality set for a client."""


class ProtocolError(LatentFedError):
    """Round/sender bookkeeping violated during an exchange."""


class ConfigError(LatentFedError):
    """Invalid experiment or component configuration."""


class IngestionError(LatentFedError):
    """Malformed external data file."""


class NumericBlowupError(LatentFedError):
    """Non-finite value appeared mid-training; aborts the run."""

    def __init__(self, round_index: int, client_id: int):
        self.round_index = round_index
        self.client_id = client_id
        super().__init__(
            f"non-finite training value at round {round_index}, client {client_id}"
        )
