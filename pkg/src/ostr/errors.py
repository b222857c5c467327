class InvalidArgument(ValueError):
    pass


class WidthOverflowError(ValueError):
    """Resized image is wider than the canonical width."""


class DatasetWriteError(OSError):
    def __init__(self, path, reason):
        super().__init__(f"cannot write dataset file {path}: {reason}")
        self.path = path


class TrainingDivergence(RuntimeError):
    pass
