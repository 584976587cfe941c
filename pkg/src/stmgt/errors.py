"""Exception hierarchy shared by every module.

Each class carries the process exit code and a short machine-readable code
that the command line prints on failure.
"""

from __future__ import annotations


class StmgtError(Exception):
    exit_code = 1
    code = "error"


class ConfigError(StmgtError, ValueError):
    exit_code = 2
    code = "config_error"


class DimensionError(StmgtError, ValueError):
    exit_code = 2
    code = "dimension_error"


class ContractError(StmgtError, ValueError):
    exit_code = 2
    code = "contract_error"


class IngestionError(StmgtError, ValueError):
    exit_code = 3
    code = "ingestion_error"


class CheckpointError(IngestionError):
    code = "checkpoint_error"


class NumericError(StmgtError, ArithmeticError):
    exit_code = 4
    code = "numeric_error"
