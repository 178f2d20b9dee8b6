"""Heterogeneous parameter fields: GRF samples, image mapping, elemental modulus, noise."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Mesh

GRF_JITTER = 1e-10
GRF_MAX_JITTER = 1e-6


class DegenerateInputError(ValueError):
    """Input field has zero range, so min-max normalisation is undefined."""


class ImageFormatError(ValueError):
    pass


@dataclass
class IntensityField:
    values: np.ndarray  # per node, in [0, 1]
    source: str
    seed: int | None = None


def rbf_kernel(a: np.ndarray, b: np.ndarray, length_scale: float) -> np.ndarray:
    d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * length_scale**2))


def _normalise(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        raise DegenerateInputError("field is constant; min-max normalisation undefined")
    return np.clip((v - lo) / (hi - lo), 0.0, 1.0)


def grf_raw_sample(points: np.ndarray, length_scale: float, seed: int) -> np.ndarray:
    """Un-normalised zero-mean GP draw at ``points`` via Cholesky of the RBF covariance.

    The draw is made on the distinct coordinates in lexicographic order, so the
    value at a point does not depend on the order the points are supplied in
    and coincident points get identical values.
    """
    if not length_scale > 0:
        raise ValueError(f"length_scale must be positive, got {length_scale}")
    points = np.asarray(points, dtype=float)
    pts, inverse = np.unique(points, axis=0, return_inverse=True)
    K = rbf_kernel(pts, pts, length_scale)
    jitter = GRF_JITTER
    while True:
        try:
            L = np.linalg.cholesky(K + jitter * np.eye(len(pts)))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > GRF_MAX_JITTER * (1 + 1e-9):
                raise np.linalg.LinAlgError(
                    f"covariance factorisation failed with jitter up to {GRF_MAX_JITTER:g}"
                ) from None
    z = np.random.default_rng(seed).standard_normal(len(pts))
    return (L @ z)[inverse.ravel()]


def sample_grf(mesh: Mesh, length_scale: float = 0.1, seed: int = 0) -> IntensityField:
    """Normalised GRF intensity at every mesh node."""
    raw = grf_raw_sample(mesh.nodes, length_scale, seed)
    return IntensityField(values=_normalise(raw), source="grf", seed=seed)


def _read_pgm(data: bytes) -> np.ndarray:
    tokens: list[bytes] = []
    pos = 0
    # header: magic, width, height, maxval, with '#' comments
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ImageFormatError("truncated PGM header")
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic = tokens[0]
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("malformed PGM header") from None
    if not 0 < maxval < 256:
        raise ImageFormatError(f"only 8-bit PGM supported (maxval={maxval})")
    if magic == b"P5":
        body = data[pos + 1 : pos + 1 + w * h]
        if len(body) < w * h:
            raise ImageFormatError("truncated P5 pixel data")
        pix = np.frombuffer(body, dtype=np.uint8).astype(float)
    else:
        try:
            pix = np.array([int(t) for t in data[pos:].split()], dtype=float)
        except ValueError:
            raise ImageFormatError("non-integer P2 pixel data") from None
        if pix.size < w * h:
            raise ImageFormatError("truncated P2 pixel data")
        pix = pix[: w * h]
    raster = pix.reshape(h, w)
    if maxval != 255:
        raster = raster * (255.0 / maxval)
    return raster


def load_image(path: str | Path) -> np.ndarray:
    """Grayscale raster (rows = image rows, top row first) with values in [0, 255]."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P2", b"P5"):
        raster = _read_pgm(data)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        from PIL import Image

        try:
            with Image.open(path) as img:
                if img.mode not in ("L", "P", "1", "LA"):
                    raise ImageFormatError(f"PNG must be grayscale, got mode {img.mode}")
                raster = np.asarray(img.convert("L"), dtype=float)
        except (OSError, SyntaxError) as exc:
            raise ImageFormatError(f"unreadable PNG: {exc}") from exc
    else:
        raise ImageFormatError(f"{path}: unsupported format (need PGM P2/P5 or grayscale PNG)")
    if raster.shape[0] < 2 or raster.shape[1] < 2:
        raise ImageFormatError(f"image must be at least 2x2, got {raster.shape[1]}x{raster.shape[0]}")
    return raster


def catmull_rom_weights(t: np.ndarray) -> np.ndarray:
    """Weights of the 4 neighbours (offsets -1, 0, 1, 2) for fractional offset t."""
    t2, t3 = t * t, t * t * t
    return np.stack(
        [
            0.5 * (-t3 + 2 * t2 - t),
            0.5 * (3 * t3 - 5 * t2 + 2),
            0.5 * (-3 * t3 + 4 * t2 + t),
            0.5 * (t3 - t2),
        ],
        axis=-1,
    )


def bicubic_sample(raster: np.ndarray, col: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Catmull-Rom bicubic interpolation at fractional pixel coordinates, edge-clamped."""
    h, w = raster.shape
    c0 = np.floor(col).astype(int)
    r0 = np.floor(row).astype(int)
    c0 = np.clip(c0, 0, w - 2)
    r0 = np.clip(r0, 0, h - 2)
    wc = catmull_rom_weights(col - c0)
    wr = catmull_rom_weights(row - r0)
    out = np.zeros(np.shape(col))
    for a in range(4):
        rr = np.clip(r0 + a - 1, 0, h - 1)
        for b in range(4):
            cc = np.clip(c0 + b - 1, 0, w - 1)
            out += wr[..., a] * wc[..., b] * raster[rr, cc]
    return out


def map_image_to_nodes(raster: np.ndarray, mesh: Mesh) -> IntensityField:
    """Normalise the raster and interpolate it onto the nodes.

    Pixel centres span the unit square edge to edge: column 0 sits at x=0 and
    column W-1 at x=1; the top image row is mapped to y=1.
    """
    raster = np.asarray(raster, dtype=float)
    norm = _normalise(raster)
    h, w = norm.shape
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    col = x * (w - 1)
    row = (1.0 - y) * (h - 1)
    vals = np.clip(bicubic_sample(norm, col, row), 0.0, 1.0)
    return IntensityField(values=vals, source="image")


def elemental_modulus(field: IntensityField | np.ndarray, mesh: Mesh) -> np.ndarray:
    """E_e = f(n1) + f(n2) + f(n3) + 1 for each element."""
    f = field.values if isinstance(field, IntensityField) else np.asarray(field, dtype=float)
    if f.shape[0] != mesh.n_nodes:
        raise ValueError(f"field has {f.shape[0]} values, mesh has {mesh.n_nodes} nodes")
    return f[mesh.elements].sum(axis=1) + 1.0


def add_strain_noise(strains: np.ndarray, percent: float, seed: int) -> np.ndarray:
    """Additive Gaussian noise per component with std = percent/100 * RMS(component).

    ``strains`` is (N, 3) (xx, yy, xy) or (N, 2, 2); the shape is kept and a
    symmetric tensor stays symmetric.
    """
    if percent < 0:
        raise ValueError(f"noise percent must be non-negative, got {percent}")
    arr = np.asarray(strains, dtype=float)
    tensor = arr.ndim == 3
    comps = np.column_stack([arr[:, 0, 0], arr[:, 1, 1], arr[:, 0, 1]]) if tensor else arr.copy()
    if percent > 0:
        rms = np.sqrt(np.mean(comps**2, axis=0))
        rng = np.random.default_rng(seed)
        comps = comps + rng.standard_normal(comps.shape) * (percent / 100.0) * rms
    if not tensor:
        return comps
    out = np.empty_like(arr)
    out[:, 0, 0], out[:, 1, 1] = comps[:, 0], comps[:, 1]
    out[:, 0, 1] = out[:, 1, 0] = comps[:, 2]
    return out


def inclusion_modulus(
    mesh: Mesh, inside: float = 3.0, outside: float = 1.5, centre=(0.5, 0.5), radius: float = 0.25
) -> np.ndarray:
    """Two-region piecewise field: ``inside`` for elements whose centroid lies in the disc."""
    c = mesh.centroids()
    r = np.hypot(c[:, 0] - centre[0], c[:, 1] - centre[1])
    return np.where(r <= radius, inside, outside).astype(float)


def write_field_csv(path: str | Path, mesh: Mesh, values: np.ndarray) -> None:
    """node_index,x,y,value for nodal fields; element fields use centroid coordinates."""
    values = np.asarray(values, dtype=float)
    if values.shape[0] == mesh.n_nodes:
        xy = mesh.nodes
    elif values.shape[0] == mesh.n_elements:
        xy = mesh.centroids()
    else:
        raise ValueError("values match neither node nor element count")
    lines = ["node_index,x,y,value"]
    for k, ((x, y), v) in enumerate(zip(xy.tolist(), values.tolist())):
        lines.append(f"{k},{x:.17g},{y:.17g},{v:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_field_csv(path: str | Path) -> np.ndarray:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return raw[:, 3]
