"""
Text file formats and image loading.

All formats are line-oriented, whitespace-separated and print floats
with 9 significant digits, which is exact for single-precision values.
Blank lines and lines starting with '#' are ignored by every parser,
except that the model file uses a leading "# H" or "# F" to say what
it holds.
"""

import logging
from os import PathLike
from typing import Iterable, Iterator, List, NamedTuple, Sequence, TextIO, Tuple, Union

import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from wxbs.core import FeatureSet, Image, to_grayscale
from wxbs.estimator import TwoViewModel
from wxbs.exceptions import FormatError, ImageReadError
from wxbs.matcher import Correspondence
from wxbs.utils import choplist

log = logging.getLogger(__name__)

FEATURES_MAGIC = "WXBS-FEAT"
FEATURES_VERSION = "v1"
MODEL_TAGS = {"H": "homography", "F": "fundamental"}


def fmt(x: float) -> str:
    return f"{float(x):.9g}"


def _lines(fp: TextIO) -> Iterator[Tuple[int, List[str]]]:
    """Non-empty, non-comment lines as (line number, fields)."""
    for lineno, line in enumerate(fp, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line.split()


def _floats(fields: Sequence[str], lineno: int) -> List[float]:
    try:
        return [float(f) for f in fields]
    except ValueError as e:
        raise FormatError(f"line {lineno}: {e}") from None


def load_image(path: Union[PathLike, str]) -> Image:
    """Read a PNG, JPEG or PGM file as a grayscale `Image`.

    Color images are converted by channel averaging; alpha is dropped.
    """
    try:
        with PILImage.open(path) as pim:
            pim.load()
            mode = pim.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                data = np.asarray(pim, dtype=np.float64) / 65535.0
                return Image(np.clip(data, 0.0, 1.0))
            if mode in ("1", "L", "LA"):
                data = np.asarray(pim.convert("L"), dtype=np.float64) / 255.0
                return Image(data)
            rgb = np.asarray(pim.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError, SyntaxError) as e:
        raise ImageReadError(f"Cannot read image {path}: {e}") from e
    return to_grayscale(rgb)


def write_features(fp: TextIO, feats: FeatureSet, kind: str) -> None:
    """One header line, then "x y a11 a12 a21 a22 response view_id d1 ... dD"."""
    dim = feats.dim if len(feats) else 0
    fp.write(f"{FEATURES_MAGIC} {FEATURES_VERSION} ")
    fp.write(f"count={len(feats)} desc={kind} dim={dim}\n")
    for c, A, r, vid, d in zip(
        feats.centers, feats.A, feats.response, feats.view_id, feats.descriptors
    ):
        fields = [fmt(c[0]), fmt(c[1])]
        fields.extend(fmt(a) for a in A.ravel())
        fields.append(fmt(r))
        fields.append(str(int(vid)))
        fields.extend(fmt(x) for x in d)
        fp.write(" ".join(fields))
        fp.write("\n")


def _parse_header(fields: Sequence[str], lineno: int) -> Tuple[int, str, int]:
    if len(fields) != 5 or fields[0] != FEATURES_MAGIC:
        raise FormatError(f"line {lineno}: not a features file header")
    if fields[1] != FEATURES_VERSION:
        raise FormatError(f"line {lineno}: unsupported version {fields[1]!r}")
    attrs = {}
    for item in fields[2:]:
        key, eq, value = item.partition("=")
        if not eq:
            raise FormatError(f"line {lineno}: expected key=value, got {item!r}")
        attrs[key] = value
    if set(attrs) != {"count", "desc", "dim"}:
        raise FormatError(f"line {lineno}: header needs count, desc and dim")
    try:
        count, dim = int(attrs["count"]), int(attrs["dim"])
    except ValueError:
        raise FormatError(f"line {lineno}: count and dim must be integers") from None
    if count < 0 or dim < 0:
        raise FormatError(f"line {lineno}: negative count or dim")
    return count, attrs["desc"], dim


def read_features(fp: TextIO) -> Tuple[FeatureSet, str]:
    """Parse a features file.

    Returns:
      the features (pooled under the descriptor kind) and that kind.
    """
    lines = _lines(fp)
    try:
        lineno, header = next(lines)
    except StopIteration:
        raise FormatError("Empty features file") from None
    count, kind, dim = _parse_header(header, lineno)
    width = 8 + dim
    rows = []
    view_ids = []
    for lineno, fields in lines:
        if len(fields) != width:
            raise FormatError(
                f"line {lineno}: expected {width} fields, got {len(fields)}"
            )
        try:
            view_ids.append(int(fields[7]))
        except ValueError:
            raise FormatError(f"line {lineno}: view id must be an integer") from None
        rows.append(_floats(fields[:7] + fields[8:], lineno))
    if len(rows) != count:
        raise FormatError(f"Header announces {count} features, found {len(rows)}")
    data = np.array(rows, dtype=float).reshape(count, 7 + dim)
    feats = FeatureSet(
        data[:, 0:2],
        data[:, 2:6].reshape(count, 2, 2),
        data[:, 6],
        np.array(view_ids, dtype=np.int64),
        np.array([kind] * count, dtype=object),
        data[:, 7:].reshape(count, dim),
    )
    return feats, kind


class Matches(NamedTuple):
    """Contents of a matches file, original-image coordinates."""

    u: np.ndarray
    v: np.ndarray
    ratio: np.ndarray
    distance: np.ndarray


def write_matches(
    fp: TextIO,
    corrs: Iterable[Correspondence],
    centers1: np.ndarray,
    centers2: np.ndarray,
) -> None:
    """Lines "x1 y1 x2 y2 ratio distance"."""
    for c in corrs:
        p, q = centers1[c.idx_a], centers2[c.idx_b]
        fp.write(
            " ".join(fmt(x) for x in (p[0], p[1], q[0], q[1], c.ratio, c.distance))
        )
        fp.write("\n")


def read_matches(fp: TextIO) -> Matches:
    rows = []
    for lineno, fields in _lines(fp):
        if len(fields) != 6:
            raise FormatError(f"line {lineno}: expected 6 fields, got {len(fields)}")
        rows.append(_floats(fields, lineno))
    data = np.array(rows, dtype=float).reshape(-1, 6)
    return Matches(data[:, 0:2], data[:, 2:4], data[:, 4], data[:, 5])


def write_model(fp: TextIO, model: TwoViewModel) -> None:
    """A "# H" or "# F" line, then the matrix row by row."""
    tag = "H" if model.kind == "homography" else "F"
    fp.write(f"# {tag}\n")
    for row in model.M:
        fp.write(" ".join(fmt(x) for x in row))
        fp.write("\n")


def read_model(fp: TextIO, default_kind: str = "homography") -> TwoViewModel:
    """Parse a model file.

    Files without a "# H"/"# F" line (such as the homographies shipped
    with the Oxford affine dataset) are read as `default_kind`.
    """
    kind = None
    values: List[float] = []
    for lineno, line in enumerate(fp, 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            tag = line[1:].strip()
            if kind is None and not values and tag in MODEL_TAGS:
                kind = MODEL_TAGS[tag]
            continue
        fields = line.split()
        if len(fields) != 3:
            raise FormatError(f"line {lineno}: expected 3 fields, got {len(fields)}")
        values.extend(_floats(fields, lineno))
    if len(values) != 9:
        raise FormatError(f"Model file must hold 3 rows of 3 values, got {len(values)}")
    return TwoViewModel(kind or default_kind, np.array(list(choplist(3, values))))


def write_gt_correspondences(fp: TextIO, u: np.ndarray, v: np.ndarray) -> None:
    """Lines "x1 y1 x2 y2"."""
    for p, q in zip(np.asarray(u).reshape(-1, 2), np.asarray(v).reshape(-1, 2)):
        fp.write(" ".join(fmt(x) for x in (p[0], p[1], q[0], q[1])))
        fp.write("\n")


def read_gt_correspondences(fp: TextIO) -> Tuple[np.ndarray, np.ndarray]:
    rows = []
    for lineno, fields in _lines(fp):
        if len(fields) != 4:
            raise FormatError(f"line {lineno}: expected 4 fields, got {len(fields)}")
        rows.append(_floats(fields, lineno))
    if not rows:
        raise FormatError("No ground-truth correspondences")
    data = np.array(rows, dtype=float)
    return data[:, 0:2], data[:, 2:4]


def write_trajectory(
    fp: TextIO, trajectory: np.ndarray, losses: Sequence[float]
) -> None:
    """One line per iterate: "step loss coords..." (coordinates flattened)."""
    for step, (pts, value) in enumerate(zip(trajectory, losses)):
        coords = " ".join(fmt(x) for x in np.asarray(pts).ravel())
        fp.write(f"{step} {fmt(value)} {coords}\n")


def read_trajectory(fp: TextIO) -> Tuple[np.ndarray, np.ndarray]:
    """Iterates as an (S, K) array of flattened coordinates, and the losses."""
    coords = []
    losses = []
    for lineno, fields in _lines(fp):
        if len(fields) < 2:
            raise FormatError(f"line {lineno}: expected step and loss")
        if fields[0] != str(len(coords)):
            raise FormatError(f"line {lineno}: expected step {len(coords)}")
        values = _floats(fields[1:], lineno)
        losses.append(values[0])
        coords.append(values[1:])
    if len({len(c) for c in coords}) > 1:
        raise FormatError("Iterates differ in size")
    return np.array(coords, dtype=float), np.array(losses, dtype=float)
