"""
Attempt to scale view synthesis over worker processes.
"""

import time
from pathlib import Path
from typing import Union

import numpy as np
from scipy import ndimage

import wxbs
from wxbs.core import Image
from wxbs.formats import load_image
from wxbs.mods import ModsConfig

# Every step, whether or not the pair is matched early
CONFIG = ModsConfig(theta_m=10**6)


def texture(size: int, seed: int) -> Image:
    rng = np.random.default_rng(seed)
    data = ndimage.gaussian_filter(rng.random((size, size)), 2.0, mode="wrap")
    data -= data.min()
    return Image(data / data.max())


def benchmark(img1: Image, img2: Image, ncpu: Union[int, None]) -> int:
    result = wxbs.match(img1, img2, CONFIG, max_workers=ncpu)
    return len(result.features1) + len(result.features2)


if __name__ == "__main__":
    import argparse

    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("-n", "--ncpu", type=int, default=4)
    parser.add_argument("-s", "--size", type=int, default=256)
    parser.add_argument("images", type=Path, nargs="*")
    args = parser.parse_args()
    if len(args.images) == 2:
        img1, img2 = (load_image(p) for p in args.images)
    elif args.images:
        parser.error("Give two images or none")
    else:
        img1, img2 = texture(args.size, 1), texture(args.size, 2)

    start = time.time()
    nfeat = benchmark(img1, img2, args.ncpu)
    multi_time = time.time() - start
    print("wxbs (%d CPUs) took %.2fs, %d features" % (args.ncpu, multi_time, nfeat))

    start = time.time()
    nfeat = benchmark(img1, img2, 1)
    single_time = time.time() - start
    print("wxbs (single) took %.2fs, %d features" % (single_time, nfeat))
