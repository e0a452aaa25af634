"""Worker subprocess related functions and data."""

from typing import Sequence, Tuple, Union, TYPE_CHECKING

if TYPE_CHECKING:
    from wxbs.core import Image

# Type signature of an image reference (index into the matched pair)
ImageRef = int

# The images being matched, as seen from a worker process
__images: Union[Tuple["Image", ...], None] = None


def in_worker() -> bool:
    """Are we currently in a worker process?"""
    return __images is not None


def _init_worker(images: Sequence["Image"]) -> None:
    global __images
    __images = tuple(images)


def _get_images() -> Union[Tuple["Image", ...], None]:
    global __images
    return __images


def _deref_image(ref: ImageRef) -> "Image":
    if __images is None:
        raise RuntimeError("No images in this process (not a worker?)")
    if not 0 <= ref < len(__images):
        raise RuntimeError(f"Unknown image with index {ref}!")
    return __images[ref]
