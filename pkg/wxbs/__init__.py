"""
wxbs matches pairs of images taken from very different viewpoints by
synthesizing affine views of both on demand.

Basic usage:

    from wxbs.formats import load_image

    result = wxbs.match(load_image("a.png"), load_image("b.png"))
    if result.success:
        print(result.model.kind, result.model.M)
        for (x1, y1), (x2, y2) in zip(*result.points()):
            print(f"({x1:.1f}, {y1:.1f}) -> ({x2:.1f}, {y2:.1f})")
"""

from multiprocessing.context import BaseContext
from typing import Union

from wxbs.core import FeatureSet, Image, LocalAffineFrame
from wxbs.estimator import TwoViewModel
from wxbs.mods import MatchResult, ModsConfig, run_mods

try:
    from wxbs._version import __version__
except ImportError:  # not installed, no VCS metadata
    __version__ = "0.0.0+unknown"

__all__ = [
    "FeatureSet",
    "Image",
    "LocalAffineFrame",
    "MatchResult",
    "ModsConfig",
    "TwoViewModel",
    "match",
    "__version__",
]


def match(
    img1: Image,
    img2: Image,
    config: Union[ModsConfig, None] = None,
    *,
    max_workers: Union[int, None] = 1,
    mp_context: Union[BaseContext, None] = None,
) -> MatchResult:
    """Match two images.

    Args:
        img1: First image.
        img2: Second image.
        config: Matcher configuration (defaults if None).
        max_workers: Number of worker processes extracting features
                     from synthesized views (if 1, no workers are spawned)
        mp_context: Multiprocessing context to use for worker
                    processes, see [Contexts and Start
                    Methods](https://docs.python.org/3/library/multiprocessing.html#contexts-and-start-methods)
                    for more information.
    """
    return run_mods(img1, img2, config or ModsConfig(), max_workers, mp_context)
