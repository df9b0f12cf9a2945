"""MetaImage (.mhd header + .raw payload) reader and writer.

Only uncompressed, little-endian, 3D, axis-aligned images are supported.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .volume import Grid, LabelVolume, Volume


class MhdError(Exception):
    pass


class MhdFileNotFoundError(MhdError, FileNotFoundError):
    pass


class MhdHeaderError(MhdError):
    pass


class MhdSizeMismatchError(MhdError):
    pass


class MhdUnsupportedTypeError(MhdError):
    pass


class MhdCompressedError(MhdError):
    pass


class MhdOverflowError(MhdError):
    pass


class MhdWriteError(MhdError):
    pass


ELEMENT_TYPES = {
    "uint8": ("MET_UCHAR", np.dtype("<u1")),
    "int16": ("MET_SHORT", np.dtype("<i2")),
    "uint16": ("MET_USHORT", np.dtype("<u2")),
    "float32": ("MET_FLOAT", np.dtype("<f4")),
}
_MET_TO_NAME = {met: name for name, (met, _) in ELEMENT_TYPES.items()}

HEADER_KEYS = (
    "ObjectType",
    "NDims",
    "DimSize",
    "ElementType",
    "ElementSpacing",
    "Offset",
    "ElementDataFile",
)


@dataclass(frozen=True)
class MhdHeader:
    object_type: str
    n_dims: int
    dim_size: tuple[int, int, int]
    element_type: str
    element_spacing: tuple[float, float, float]
    offset: tuple[float, float, float]
    element_data_file: str

    def __post_init__(self):
        if self.n_dims != 3:
            raise MhdHeaderError(f"NDims must be 3, got {self.n_dims}")
        if len(self.dim_size) != 3 or min(self.dim_size) < 1:
            raise MhdHeaderError(f"bad DimSize {self.dim_size}")
        if len(self.element_spacing) != 3 or min(self.element_spacing) <= 0:
            raise MhdHeaderError(f"bad ElementSpacing {self.element_spacing}")
        if len(self.offset) != 3:
            raise MhdHeaderError(f"bad Offset {self.offset}")
        if self.element_type not in ELEMENT_TYPES:
            raise MhdUnsupportedTypeError(f"unsupported element type {self.element_type}")

    @property
    def grid(self) -> Grid:
        return Grid(self.dim_size, self.element_spacing, self.offset)


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def _parse_header(path: Path) -> MhdHeader:
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if "=" not in line:
            raise MhdHeaderError(f"{path}:{lineno}: malformed header line {raw!r}")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()

    if fields.get("CompressedData", "False").lower() == "true":
        raise MhdCompressedError(f"{path}: compressed MetaImage data is not supported")
    if fields.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise MhdHeaderError(f"{path}: big-endian payloads are not supported")
    for key in ("NDims", "DimSize", "ElementType", "ElementDataFile"):
        if key not in fields:
            raise MhdHeaderError(f"{path}: missing header key {key}")

    met = fields["ElementType"]
    if met not in _MET_TO_NAME:
        raise MhdUnsupportedTypeError(f"{path}: unknown ElementType {met}")

    try:
        n_dims = int(fields["NDims"])
        dim_size = tuple(int(v) for v in fields["DimSize"].split())
        spacing = tuple(
            float(v) for v in fields.get("ElementSpacing", "1 1 1").split()
        )
        offset = tuple(float(v) for v in fields.get("Offset", "0 0 0").split())
    except ValueError as exc:
        raise MhdHeaderError(f"{path}: malformed numeric field ({exc})") from None

    return MhdHeader(
        object_type=fields.get("ObjectType", "Image"),
        n_dims=n_dims,
        dim_size=dim_size,
        element_type=_MET_TO_NAME[met],
        element_spacing=spacing,
        offset=offset,
        element_data_file=fields["ElementDataFile"],
    )


def read_header(path) -> MhdHeader:
    path = Path(path)
    if not path.is_file():
        raise MhdFileNotFoundError(f"header file not found: {path}")
    return _parse_header(path)


def read_raw_array(path) -> tuple[MhdHeader, np.ndarray]:
    """Header plus payload as an array of shape ``dim_size`` in the stored dtype."""
    path = Path(path)
    header = read_header(path)
    raw_path = path.parent / header.element_data_file
    if not raw_path.is_file():
        raise MhdFileNotFoundError(f"raw data file not found: {raw_path}")
    dtype = ELEMENT_TYPES[header.element_type][1]
    payload = raw_path.read_bytes()
    expected = int(np.prod(header.dim_size)) * dtype.itemsize
    if len(payload) != expected:
        raise MhdSizeMismatchError(
            f"{raw_path}: payload has {len(payload)} bytes, header implies {expected}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(header.dim_size, order="F")
    return header, arr


def read_mhd(path, as_label: bool = False) -> Volume | LabelVolume:
    header, arr = read_raw_array(path)
    if as_label:
        if header.element_type != "uint8":
            raise MhdUnsupportedTypeError(
                f"{path}: labels must be stored as MET_UCHAR, got {header.element_type}"
            )
        if arr.size and arr.max() > 1:
            raise MhdHeaderError(f"{path}: label payload has values outside {{0, 1}}")
        return LabelVolume(header.grid, arr)
    return Volume(header.grid, arr.astype(np.float64))


def header_text(grid: Grid, element_type: str, data_file: str) -> str:
    met = ELEMENT_TYPES[element_type][0]
    values = (
        "Image",
        "3",
        " ".join(str(d) for d in grid.dims),
        met,
        " ".join(_fmt(s) for s in grid.spacing),
        " ".join(_fmt(o) for o in grid.origin),
        data_file,
    )
    return "".join(f"{k} = {v}\n" for k, v in zip(HEADER_KEYS, values))


def write_mhd(vol: Volume | LabelVolume, path, element_type: str | None = None) -> Path:
    """Write ``path`` (.mhd) and its sibling .raw; returns the header path.

    Labels default to uint8, scalar volumes to float32.
    """
    if element_type is None:
        element_type = "uint8" if isinstance(vol, LabelVolume) else "float32"
    if element_type not in ELEMENT_TYPES:
        raise MhdUnsupportedTypeError(f"unsupported element type {element_type}")
    dtype = ELEMENT_TYPES[element_type][1]

    data = np.asarray(vol.data)
    if dtype.kind in "iu":
        info = np.iinfo(dtype)
        if data.size and (data.min() < info.min or data.max() > info.max):
            raise MhdOverflowError(
                f"values in [{data.min()}, {data.max()}] do not fit {element_type}"
            )
        if np.any(data != np.round(data)):
            raise MhdOverflowError(f"non-integer values cannot be stored as {element_type}")
        data = np.round(data)
    elif data.size and np.abs(data).max() > np.finfo(np.float32).max:
        raise MhdOverflowError("values exceed the float32 range")

    path = Path(path)
    if path.suffix != ".mhd":
        path = path.with_suffix(".mhd")
    raw_path = path.with_suffix(".raw")
    payload = data.astype(dtype).ravel(order="F").tobytes()
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        raw_path.write_bytes(payload)
        path.write_text(header_text(vol.grid, element_type, raw_path.name))
    except OSError as exc:
        raise MhdWriteError(f"cannot write {path}: {exc.strerror or exc}") from None
    return path

