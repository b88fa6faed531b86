"""Exception hierarchy shared by the simulator modules."""


class FedPipeError(Exception):
    """Base class for all simulator errors."""


class ShapeError(FedPipeError, ValueError):
    """Operand shapes do not agree."""


class ContractViolation(FedPipeError, ValueError):
    """A documented precondition of an operation was violated."""


class UnknownLeafError(FedPipeError, KeyError):
    """A gradient was requested for a node that is not a leaf of the tape."""


class ParameterError(FedPipeError, ValueError):
    """A numeric hyperparameter is outside its admissible range."""


class ConfigurationError(FedPipeError, ValueError):
    """Model or adapter configuration is inconsistent."""


class QuantizationInputError(FedPipeError, ValueError):
    """Tensor handed to the quantizer contains non-finite values."""


class CorruptionError(FedPipeError, ValueError):
    """Quantized payload refers to codes that do not exist."""


class InfeasibleMemoryError(FedPipeError):
    """Backbone does not fit in the memory budget even at the lowest bit width."""

    def __init__(self, client_id, required, budget):
        self.client_id = client_id
        self.required = required
        self.budget = budget
        super().__init__(
            f"client {client_id}: needs {required:.0f} bytes at 4 bits, budget is {budget:.0f}"
        )


class ConfigError(FedPipeError, ValueError):
    """Campaign configuration failed validation.

    ``field`` names the offending key (dotted path for nested keys).
    """

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
