"""Input parsing and the core data model.

Tabular inputs are CSV:

* ``ratings.csv`` with header ``participant_id,image_id,trial_index,rating``,
  one row per rating event, ratings on the 0-100 scale;
* ``categories.csv`` with header ``image_id,criterion,category``, long form
  over the fixed 12-criterion taxonomy;
* ``features.csv`` with header ``image_id,f0,...,f{D-1}`` and one embedding
  row per image.

Dense grids use two bit-exact binary formats: heatmaps are grayscale PFM
(``Pf``, little-endian, scale header ``-1.0``, rows stored bottom-to-top and
converted to top-down order in memory) and masks are binary PGM (``P5``,
maxval 255, gray >= 128 counts as inside the mask).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError

__all__ = [
    "CRITERIA",
    "RatingRecord",
    "RatingsTable",
    "CategoryTable",
    "FeatureTable",
    "FloatGrid",
    "BinaryMask",
    "load_ratings",
    "write_ratings",
    "first_trial_filter",
    "load_categories",
    "load_features",
    "write_features",
    "load_float_grid",
    "write_float_grid",
    "load_mask",
    "write_mask",
]

#: The fixed annotation criteria, in canonical order.
CRITERIA = (
    "spider in picture",
    "cobweb in picture",
    "number of spiders",
    "subjective distance",
    "environment",
    "texture",
    "eyes",
    "eating prey",
    "subjective size",
    "perspective",
    "color of picture",
    "prominent legs",
)

RATINGS_HEADER = ["participant_id", "image_id", "trial_index", "rating"]


@dataclass(frozen=True)
class RatingRecord:
    """One rating event: a participant rated an image at a session trial."""

    participant_id: str
    image_id: str
    trial_index: int
    rating: float


@dataclass(frozen=True)
class RatingsTable:
    """A set of rating records with derived participant/image indexes."""

    records: tuple[RatingRecord, ...]
    participant_index: frozenset[str] = field(init=False)
    image_index: frozenset[str] = field(init=False)

    def __post_init__(self):
        object.__setattr__(
            self, "participant_index", frozenset(r.participant_id for r in self.records)
        )
        object.__setattr__(self, "image_index", frozenset(r.image_id for r in self.records))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def n_participants(self) -> int:
        return len(self.participant_index)

    @property
    def n_images(self) -> int:
        return len(self.image_index)

    def by_participant(self) -> dict[str, list[RatingRecord]]:
        out: dict[str, list[RatingRecord]] = {}
        for rec in self.records:
            out.setdefault(rec.participant_id, []).append(rec)
        return out

    def by_image(self) -> dict[str, list[RatingRecord]]:
        out: dict[str, list[RatingRecord]] = {}
        for rec in self.records:
            out.setdefault(rec.image_id, []).append(rec)
        return out

    def without_participants(self, excluded: set[str]) -> "RatingsTable":
        return RatingsTable(
            tuple(r for r in self.records if r.participant_id not in excluded)
        )


@dataclass(frozen=True)
class CategoryTable:
    """Image -> category label for each annotation criterion present."""

    entries: dict[tuple[str, str], str]

    def criteria(self) -> list[str]:
        present = {crit for (_, crit) in self.entries}
        return [c for c in CRITERIA if c in present]

    def images(self) -> list[str]:
        return sorted({img for (img, _) in self.entries})

    def label(self, image_id: str, criterion: str) -> str:
        try:
            return self.entries[(image_id, criterion)]
        except KeyError:
            raise InputError(
                f"no category label for image {image_id!r}, criterion {criterion!r}"
            ) from None


@dataclass(frozen=True)
class FeatureTable:
    """Per-image embedding vectors, all of the same dimension D >= 1."""

    vectors: dict[str, np.ndarray]

    @property
    def dim(self) -> int:
        first = next(iter(self.vectors.values()))
        return int(first.shape[0])

    def matrix(self, image_ids: list[str]) -> np.ndarray:
        """Stack feature rows for the given images, in the given order."""
        missing = [i for i in image_ids if i not in self.vectors]
        if missing:
            raise InputError(f"missing feature vectors for images: {missing[:5]}")
        return np.stack([self.vectors[i] for i in image_ids])


@dataclass(frozen=True)
class FloatGrid:
    """Dense 2-D float map in row-major, top-down order."""

    width: int
    height: int
    values: np.ndarray  # shape (height, width), float64 carrying float32 values

    def __post_init__(self):
        if self.values.shape != (self.height, self.width):
            raise InputError(
                f"grid shape {self.values.shape} does not match "
                f"{self.height}x{self.width}"
            )
        if not np.all(np.isfinite(self.values)):
            raise InputError("grid contains non-finite values")


@dataclass(frozen=True)
class BinaryMask:
    """Dense 2-D boolean mask; True marks the annotated (spider) pixels."""

    width: int
    height: int
    bits: np.ndarray  # shape (height, width), bool

    def __post_init__(self):
        if self.bits.shape != (self.height, self.width):
            raise InputError(
                f"mask shape {self.bits.shape} does not match "
                f"{self.height}x{self.width}"
            )

    @property
    def true_fraction(self) -> float:
        return float(np.count_nonzero(self.bits)) / self.bits.size


def load_ratings(path: str | Path) -> RatingsTable:
    """Parse a ratings CSV, validating every row.

    Any malformed row raises :class:`InputError` with its line number, so
    nothing is ever dropped silently.
    """
    path = Path(path)
    records: list[RatingRecord] = []
    seen: set[tuple[str, str, int]] = set()
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputError(f"{path}: empty file, expected header {RATINGS_HEADER}")
        if header != RATINGS_HEADER:
            raise InputError(f"{path}: bad header {header}, expected {RATINGS_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise InputError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            participant, image, trial_raw, rating_raw = row
            if not participant or not image:
                raise InputError(f"{path}:{lineno}: empty participant or image id")
            try:
                trial = int(trial_raw)
            except ValueError:
                raise InputError(f"{path}:{lineno}: bad trial_index {trial_raw!r}") from None
            if trial < 1:
                raise InputError(f"{path}:{lineno}: trial_index must be >= 1, got {trial}")
            try:
                rating = float(rating_raw)
            except ValueError:
                raise InputError(f"{path}:{lineno}: bad rating {rating_raw!r}") from None
            if not math.isfinite(rating) or not 0.0 <= rating <= 100.0:
                raise InputError(
                    f"{path}:{lineno}: rating {rating_raw} outside [0, 100]"
                )
            key = (participant, image, trial)
            if key in seen:
                raise InputError(
                    f"{path}:{lineno}: duplicate (participant, image, trial) {key}"
                )
            seen.add(key)
            records.append(RatingRecord(participant, image, trial, rating))
    return RatingsTable(tuple(records))


def write_ratings(table: RatingsTable, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RATINGS_HEADER)
        for rec in table.records:
            writer.writerow(
                [rec.participant_id, rec.image_id, rec.trial_index, f"{rec.rating:.9g}"]
            )


def first_trial_filter(table: RatingsTable) -> RatingsTable:
    """Keep only the earliest-trial record per (participant, image) pair."""
    best: dict[tuple[str, str], RatingRecord] = {}
    for rec in table.records:
        key = (rec.participant_id, rec.image_id)
        cur = best.get(key)
        if cur is None or rec.trial_index < cur.trial_index:
            best[key] = rec
    kept = [r for r in table.records if best[(r.participant_id, r.image_id)] is r]
    return RatingsTable(tuple(kept))


def load_categories(path: str | Path) -> CategoryTable:
    """Parse the long-form image/criterion/category CSV."""
    path = Path(path)
    entries: dict[tuple[str, str], str] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["image_id", "criterion", "category"]:
            raise InputError(
                f"{path}: bad header {header}, expected image_id,criterion,category"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise InputError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            image, criterion, category = row
            if criterion not in CRITERIA:
                raise InputError(f"{path}:{lineno}: unknown criterion {criterion!r}")
            if not category:
                raise InputError(f"{path}:{lineno}: empty category label")
            key = (image, criterion)
            if key in entries:
                raise InputError(f"{path}:{lineno}: duplicate entry for {key}")
            entries[key] = category
    table = CategoryTable(entries)
    # Every image must carry a label for every criterion present in the file.
    images = table.images()
    for crit in table.criteria():
        missing = [img for img in images if (img, crit) not in entries]
        if missing:
            raise InputError(
                f"{path}: criterion {crit!r} missing labels for {len(missing)} "
                f"images (e.g. {missing[:3]})"
            )
    return table


def load_features(path: str | Path) -> FeatureTable:
    """Parse the per-image embedding CSV (header ``image_id,f0..f{D-1}``)."""
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "image_id" or len(header) < 2:
            raise InputError(f"{path}: bad header, expected image_id,f0,...")
        expected = [f"f{i}" for i in range(len(header) - 1)]
        if header[1:] != expected:
            raise InputError(f"{path}: feature columns must be f0..f{len(header) - 2}")
        dim = len(header) - 1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise InputError(
                    f"{path}:{lineno}: expected {dim + 1} fields, got {len(row)}"
                )
            image = row[0]
            if image in vectors:
                raise InputError(f"{path}:{lineno}: duplicate image {image!r}")
            try:
                vec = np.array([float(v) for v in row[1:]], dtype=np.float64)
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric feature value") from None
            if not np.all(np.isfinite(vec)):
                raise InputError(f"{path}:{lineno}: non-finite feature value")
            vectors[image] = vec
    if not vectors:
        raise InputError(f"{path}: no feature rows")
    return FeatureTable(vectors)


def write_features(features: FeatureTable, path: str | Path) -> None:
    path = Path(path)
    dim = features.dim
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["image_id"] + [f"f{i}" for i in range(dim)])
        for image in sorted(features.vectors):
            writer.writerow([image] + [f"{v:.9g}" for v in features.vectors[image]])


# -- PFM (grayscale float grids) --------------------------------------------


def load_float_grid(path: str | Path) -> FloatGrid:
    """Decode a grayscale PFM file into top-down row-major order."""
    path = Path(path)
    raw = path.read_bytes()
    try:
        magic, rest = raw.split(b"\n", 1)
        dims, rest = rest.split(b"\n", 1)
        scale_raw, data = rest.split(b"\n", 1)
    except ValueError:
        raise InputError(f"{path}: truncated PFM header") from None
    if magic == b"PF":
        raise InputError(f"{path}: color PFM not supported, expected grayscale 'Pf'")
    if magic != b"Pf":
        raise InputError(f"{path}: bad magic {magic!r}, expected 'Pf'")
    parts = dims.split()
    if len(parts) != 2:
        raise InputError(f"{path}: malformed PFM dimension line {dims!r}")
    try:
        width, height = int(parts[0]), int(parts[1])
        scale = float(scale_raw)
    except ValueError:
        raise InputError(f"{path}: malformed PFM header") from None
    if width <= 0 or height <= 0:
        raise InputError(f"{path}: non-positive dimensions {width}x{height}")
    if scale == 0.0:
        raise InputError(f"{path}: zero scale in PFM header")
    endian = "<" if scale < 0 else ">"
    count = width * height
    if len(data) != 4 * count:
        raise InputError(
            f"{path}: payload holds {len(data) // 4} floats, header declares {count}"
        )
    values = np.frombuffer(data, dtype=f"{endian}f4").astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise InputError(f"{path}: non-finite float values")
    # PFM stores rows bottom-to-top; flip to top-down.
    grid = values.reshape(height, width)[::-1].copy()
    return FloatGrid(width=width, height=height, values=grid)


def write_float_grid(grid: FloatGrid, path: str | Path) -> None:
    """Encode in canonical form: 'Pf', little-endian, scale -1.0."""
    path = Path(path)
    rows = np.ascontiguousarray(grid.values[::-1], dtype="<f4")
    with path.open("wb") as fh:
        fh.write(f"Pf\n{grid.width} {grid.height}\n-1.0\n".encode("ascii"))
        fh.write(rows.tobytes())


# -- PGM (binary masks) ------------------------------------------------------


def _read_pgm_tokens(raw: bytes, path: Path) -> tuple[list[int], int]:
    """Read magic-less header tokens (width, height, maxval), skipping
    comments, and return them with the offset where pixel data starts."""
    tokens: list[int] = []
    i = 0
    while len(tokens) < 3:
        if i >= len(raw):
            raise InputError(f"{path}: truncated PGM header")
        ch = raw[i : i + 1]
        if ch == b"#":
            nl = raw.find(b"\n", i)
            if nl == -1:
                raise InputError(f"{path}: unterminated PGM comment")
            i = nl + 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(raw) and not raw[j : j + 1].isspace():
                j += 1
            tok = raw[i:j]
            try:
                tokens.append(int(tok))
            except ValueError:
                raise InputError(f"{path}: bad PGM header token {tok!r}") from None
            i = j
    # Exactly one whitespace byte separates maxval from the pixel data.
    if i >= len(raw) or not raw[i : i + 1].isspace():
        raise InputError(f"{path}: missing separator before PGM pixel data")
    return tokens, i + 1


def load_mask(path: str | Path) -> BinaryMask:
    """Decode a binary (P5, maxval 255) PGM; gray >= 128 maps to True."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:2] != b"P5":
        raise InputError(f"{path}: bad magic {raw[:2]!r}, expected 'P5'")
    (width, height, maxval), offset = _read_pgm_tokens(raw[2:], path)
    offset += 2
    if width <= 0 or height <= 0:
        raise InputError(f"{path}: non-positive dimensions {width}x{height}")
    if maxval != 255:
        raise InputError(f"{path}: maxval must be 255, got {maxval}")
    data = raw[offset:]
    count = width * height
    if len(data) != count:
        raise InputError(
            f"{path}: payload holds {len(data)} pixels, header declares {count}"
        )
    gray = np.frombuffer(data, dtype=np.uint8).reshape(height, width)
    return BinaryMask(width=width, height=height, bits=gray >= 128)


def write_mask(mask: BinaryMask, path: str | Path) -> None:
    """Encode in canonical form: 'P5', maxval 255, True -> 255, False -> 0."""
    path = Path(path)
    gray = np.where(mask.bits, 255, 0).astype(np.uint8)
    with path.open("wb") as fh:
        fh.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())
