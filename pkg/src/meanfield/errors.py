class BudgetExceeded(RuntimeError):
    """A dense computation would exceed the configured size budget."""


class ConfigError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
