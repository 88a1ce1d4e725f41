"""Исключения движка aclab"""


class AclabError(Exception):
    """Базовая ошибка"""


class InvalidPotentialError(AclabError, ValueError):
    pass


class PotentialDomainError(AclabError, ValueError):
    """Запрос вне диапазона табличного потенциала"""


class GridTooShortError(AclabError, ValueError):
    pass


class DegenerateDomainError(AclabError, ValueError):
    pass


class ResolutionError(AclabError, ValueError):
    pass


class GeometryError(AclabError, ValueError):
    """Шар или цилиндр выходит за пределы сетки"""


class EnergyRegionError(AclabError, ValueError):
    pass


class BoundaryDataError(AclabError, ValueError):
    pass


class StepUnderflowError(AclabError, RuntimeError):
    pass


class EigenConvergenceError(AclabError, RuntimeError):
    pass


class ComparisonOverflowError(AclabError, ArithmeticError):
    pass


class InsufficientSamplesError(AclabError, ValueError):
    pass


class ConfigError(AclabError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")

    def __reduce__(self):
        return type(self), (self.key, str(self).split(": ", 1)[-1])
