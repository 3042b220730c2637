"""Serialisation of error and winner maps: CSV, 8-bit PGM, paletted PPM.

Output is a pure function of the map, so reruns are byte-identical.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .spectral import ACCURACY_CLASSES, ErrorMap, WinnerMap

# winner colours; the first three follow the usual maximal/LDDRK/optimised order
PALETTE = [
    (255, 221, 0),    # yellow
    (0, 170, 60),     # green
    (255, 140, 0),    # orange
    (40, 110, 255),   # blue
    (220, 30, 60),    # red
    (0, 200, 200),    # cyan
]
# class 0 keeps the winner colour, class 1 darkens it, class 2 is violet
CLASS_SHADE = (1.0, 0.55)
VIOLET = (140, 60, 200)


def fmt(x) -> str:
    """Shortest round-trip decimal, locale independent."""
    x = float(x)
    if x != x:
        return "nan"
    if x in (float("inf"), float("-inf")):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def atomic_write(path, data) -> None:
    """Write bytes or text so readers never see a partial file."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def map_csv(m) -> str:
    z = m.grid.points()
    lines = []
    if isinstance(m, WinnerMap):
        lines.append("re,im,value,winner,class")
        for i in range(m.grid.nx):
            for j in range(m.grid.ny):
                lines.append(",".join([fmt(z[i, j].real), fmt(z[i, j].imag), fmt(m.values[i, j]),
                                       str(int(m.winner[i, j])),
                                       ACCURACY_CLASSES[int(m.accuracy_class[i, j])]]))
    else:
        lines.append("re,im,value")
        for i in range(m.grid.nx):
            for j in range(m.grid.ny):
                lines.append(",".join([fmt(z[i, j].real), fmt(z[i, j].imag), fmt(m.values[i, j])]))
    return "\n".join(lines) + "\n"


def gray_levels(values):
    """log10(eps) clamped to [-6, 0] and mapped linearly onto [255, 0]."""
    v = np.asarray(values, dtype=float)
    with np.errstate(divide="ignore"):
        lg = np.log10(v)
    lg = np.where(np.isnan(lg), 0.0, lg)
    lg = np.clip(lg, -6.0, 0.0)
    return np.rint(-lg / 6.0 * 255.0).astype(np.uint8)


def _image_rows(a):
    # image rows run from the top (largest Im) down; columns follow Re
    return np.ascontiguousarray(a.T[::-1])


def map_pgm(m) -> bytes:
    g = _image_rows(gray_levels(m.values))
    h, w = g.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + g.tobytes()


def map_ppm(m: WinnerMap) -> bytes:
    pal = np.array([PALETTE[i % len(PALETTE)] for i in range(max(len(m.contestants), 1))], float)
    cls = np.asarray(m.accuracy_class)
    shade = np.array(CLASS_SHADE + (1.0,))[cls]
    rgb = pal[m.winner] * shade[..., None]
    rgb[cls == 2] = VIOLET
    rgb = np.ascontiguousarray(np.transpose(np.rint(rgb).astype(np.uint8), (1, 0, 2))[::-1])
    h, w = rgb.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + rgb.tobytes()


def write_map(m, stem) -> list[str]:
    """Write <stem>.csv plus .pgm (error map) or .ppm (winner map)."""
    stem = os.fspath(stem)
    paths = [stem + ".csv"]
    atomic_write(paths[0], map_csv(m))
    if isinstance(m, ErrorMap):
        paths.append(stem + ".pgm")
        atomic_write(paths[1], map_pgm(m))
    else:
        paths.append(stem + ".ppm")
        atomic_write(paths[1], map_ppm(m))
    return paths
