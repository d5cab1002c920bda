"""Exception hierarchy shared by all nvsk modules.

ValidationError marks bad inputs (CLI exit code 1), ComputationError marks
failures of an otherwise well-posed computation (CLI exit code 2).
"""


class NvskError(Exception):
    pass


class ValidationError(NvskError):
    pass


class ComputationError(NvskError):
    pass
