class GkcError(Exception):
	"""Base of every error raised by the gkc library."""


class ShapeError(GkcError, ValueError):
	pass


class DomainError(GkcError, ValueError):
	pass


class ConfigError(GkcError, ValueError):
	pass


class EmptyRegionError(DomainError):
	pass


class EmptyBatchError(DomainError):
	pass


class CapacityError(DomainError):
	pass


class DivergenceError(GkcError, ArithmeticError):
	pass


class FormatError(GkcError, ValueError):
	"""Bad magic bytes or a truncated binary file."""


class CategoryLookupError(GkcError, KeyError):
	pass
