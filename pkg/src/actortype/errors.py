"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ActortypeError(Exception):
    """Base class for every domain error raised by this package."""


class ProfileError(ActortypeError):
    pass


class ProfileSyntaxError(ProfileError):
    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class DuplicateIdError(ProfileError):
    pass


class CardinalityError(ProfileError):
    pass


class UnknownReferenceError(ProfileError):
    """A profile element refers to a vocabulary, property or type that does not exist."""


class UnknownTermError(ActortypeError, LookupError):
    def __init__(self, vocabulary: str, term: str, context: str = "") -> None:
        msg = f"unknown term {vocabulary}:{term}"
        super().__init__(f"{context}: {msg}" if context else msg)
        self.vocabulary = vocabulary
        self.term = term


class UnorderedVocabularyError(ActortypeError):
    pass


class ExpressionError(ActortypeError):
    """Raised while parsing a class expression; carries the 1-based source position."""

    def __init__(self, message: str, line: int = 0, column: int = 0) -> None:
        where = f" at {line}:{column}" if line else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


class ExpressionSyntaxError(ExpressionError):
    pass


class KnowledgeBaseError(ActortypeError):
    pass


class UnknownActorError(KnowledgeBaseError, LookupError):
    pass


class UnknownActivityError(KnowledgeBaseError, LookupError):
    pass


class UnknownPredicateError(KnowledgeBaseError):
    pass


class StoreVersionError(KnowledgeBaseError):
    pass


class StoreCorruptError(KnowledgeBaseError):
    pass


class QueryError(ActortypeError):
    def __init__(self, message: str, position: int | None = None) -> None:
        super().__init__(message if position is None else f"{message} (column {position + 1})")
        self.position = position


class StixError(ActortypeError):
    pass
