"""Exception hierarchy. ``exit_code`` is what the CLI returns for each."""


class LostSimError(Exception):
    exit_code = 1


class MissingInputError(LostSimError, FileNotFoundError):
    exit_code = 2


class RasterFormatError(LostSimError, ValueError):
    pass


class RasterTruncationError(RasterFormatError):
    pass


class RasterMisalignedError(LostSimError, ValueError):
    exit_code = 3


class EmptyInputError(LostSimError, ValueError):
    exit_code = 4


class CategoryMismatchError(LostSimError, ValueError):
    exit_code = 5


class NetworkFormatError(LostSimError, ValueError):
    pass


class OutOfBoundsError(LostSimError, IndexError):
    pass


class StartModelError(LostSimError, RuntimeError):
    pass


class TrainingError(LostSimError, RuntimeError):
    pass


class NodataError(LostSimError, ValueError):
    pass
