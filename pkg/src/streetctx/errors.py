class StreetCtxError(Exception):
    """Base class for domain errors raised by this package."""


class ParseError(StreetCtxError, ValueError):
    pass


class ShapeError(StreetCtxError, ValueError):
    """Tensor or raster dimensions do not agree."""


class ProviderError(StreetCtxError):
    """An imagery provider answered with something other than an image."""

    def __init__(self, message, status=None, request=None):
        super().__init__(message)
        self.status = status
        self.request = request


class AuthError(ProviderError):
    pass


class RetryableError(ProviderError):
    """Quota or rate-limit rejection; the same request may succeed later."""


class NoCoverageError(ProviderError):
    pass
