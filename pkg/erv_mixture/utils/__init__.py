from .errors import ValidationError, ParseError, DomainError, FitError

__all__ = ["ValidationError", "ParseError", "DomainError", "FitError"]
