"""
Some WxBS-specific exceptions to cover matching-specific problems
"""


class WxbsException(Exception):
    pass


class ImageError(WxbsException, ValueError):
    pass


class ImageTooSmall(ImageError):
    pass


class ImageReadError(ImageError):
    pass


class DegenerateConfiguration(WxbsException, ValueError):
    pass


class InsufficientData(WxbsException, ValueError):
    pass


class NoModelFound(WxbsException):
    pass


class CheiralityError(WxbsException):
    pass


class ModelKindError(WxbsException, ValueError):
    pass


class ConfigError(WxbsException, ValueError):
    pass


class FormatError(WxbsException, ValueError):
    pass
