"""Exception types raised across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain an operation is defined on."""


class NumericError(RuntimeError):
    """A numerical routine failed; the message carries diagnostics."""


class ConfigError(ValueError):
    """An experiment configuration is invalid.

    ``problems`` holds every violation found, not just the first one.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class ReplicaError(RuntimeError):
    """A single replica failed; ``seed`` is its ``(master_seed, replica)`` key."""

    def __init__(self, seed, cause):
        self.seed = tuple(seed)
        super().__init__(f"replica with seed {self.seed} failed: {cause}")
