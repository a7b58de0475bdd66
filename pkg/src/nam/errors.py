"""Exception hierarchy.

Every error carries a short machine-parseable ``code`` and the process exit
status the CLI uses when it escapes a command.
"""


class NamError(Exception):
    code = "error"
    exit_status = 1


class ValidationFailure(NamError):
    code = "validation"
    exit_status = 2


class GrammarSyntaxError(ValidationFailure):
    code = "grammar-syntax"


class DataError(NamError):
    code = "data"
    exit_status = 3


class MalformedTree(DataError):
    code = "malformed-tree"


class MalformedStream(DataError):
    code = "malformed-stream"


class InconsistentStream(DataError):
    code = "inconsistent-stream"


class EvaluationError(DataError):
    code = "evaluation"


class UnknownConstraint(DataError):
    code = "unknown-constraint"


class UnknownNonterminal(DataError):
    code = "unknown-nonterminal"


class TooManyVariables(DataError):
    code = "too-many-variables"


class IllegalTruth(DataError):
    code = "illegal-truth"


class SpecInfeasible(DataError):
    code = "spec-infeasible"


class CorpusGrammarMismatch(DataError):
    code = "corpus-grammar-mismatch"


class EmptyBatch(DataError):
    code = "empty-batch"


class ShapeMismatch(DataError):
    code = "shape-mismatch"


class CheckpointError(DataError):
    code = "checkpoint"


class NumericFailure(NamError):
    code = "numeric"
    exit_status = 4


class NonFiniteGradient(NumericFailure):
    code = "non-finite-gradient"
