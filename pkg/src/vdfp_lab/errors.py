"""Exception hierarchy shared across the lab."""

from __future__ import annotations


class VDFPError(RuntimeError):
    pass


class ConfigError(VDFPError):
    """Raised when an experiment configuration cannot be loaded or validated."""


class UsageError(VDFPError):
    pass


class DivergenceError(VDFPError):
    """A training loop produced non-finite or runaway values and was aborted."""

    def __init__(self, message: str, *, step: int | None = None, **diagnostics: float) -> None:
        self.step = step
        self.diagnostics = diagnostics
        details = ", ".join(f"{key}={value:.6g}" for key, value in diagnostics.items())
        where = f" at step {step}" if step is not None else ""
        super().__init__(f"{message}{where}" + (f" ({details})" if details else ""))


class CheckpointError(VDFPError):
    pass
