"""Street-context classification from street-view imagery.

Label street segments with the San Francisco street-context scheme, sample
paired left/right views along them, train a small GAP-terminated CNN, and
inspect it with class activation maps and a t-SNE embedding.
"""

from streetctx.errors import StreetCtxError

__version__ = "0.1.0"

__all__ = ["StreetCtxError", "__version__"]
