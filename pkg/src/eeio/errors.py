"""Exception hierarchy shared by all stages."""


class EeioError(Exception):
    """Base class for every error raised by the package."""


class BalanceError(EeioError):
    pass


class EmptyBalance(BalanceError):
    pass


class DuplicateCell(BalanceError):
    pass


class MalformedRow(BalanceError):
    pass


class UnknownUnit(BalanceError):
    pass


class MissingFlowClass(BalanceError):
    pass


class UnknownProduct(BalanceError):
    pass


class AllocationError(EeioError):
    pass


class ZeroSplittingKey(AllocationError):
    def __init__(self, flow):
        super().__init__(f"flow {flow!r}: every linked sector has zero weight")
        self.flow = flow


class AxisMismatch(AllocationError):
    pass


class UnmappedProduct(AllocationError):
    pass


class StageError(AllocationError):
    pass


class FootprintError(EeioError):
    pass


class ConfigError(EeioError):
    pass
