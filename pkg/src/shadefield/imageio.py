"""PFM, Radiance RGBE and 8-bit PNG readers/writers.

Arrays are H x W (single channel) or H x W x 3, row 0 at the top.
"""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        ident = f.readline().strip()
        if ident == b"PF":
            channels = 3
        elif ident == b"Pf":
            channels = 1
        else:
            raise ValueError(f"{path}: not a PFM file (header {ident!r})")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: malformed PFM dimensions line")
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(), dtype=dtype)
    expected = width * height * channels
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} floats, found {data.size}")
    shape = (height, width, 3) if channels == 3 else (height, width)
    # PFM stores rows bottom-to-top
    return np.flipud(data.reshape(shape)).astype(np.float64)


def write_pfm(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype="<f4")
    if array.ndim == 3 and array.shape[2] == 3:
        ident = b"PF"
    elif array.ndim == 2:
        ident = b"Pf"
    else:
        raise ValueError(f"cannot write array of shape {array.shape} as PFM")
    height, width = array.shape[:2]
    with open(path, "wb") as f:
        f.write(ident + b"\n")
        f.write(f"{width} {height}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(np.flipud(array)).tobytes())


# --- Radiance RGBE -----------------------------------------------------------

def _read_rle_scanline(buf: memoryview, pos: int, width: int) -> tuple[np.ndarray, int]:
    line = np.empty((4, width), dtype=np.uint8)
    for c in range(4):
        x = 0
        while x < width:
            count = buf[pos]
            pos += 1
            if count > 128:
                count -= 128
                if x + count > width:
                    raise ValueError("RGBE run overflows scanline")
                line[c, x:x + count] = buf[pos]
                pos += 1
            else:
                if count == 0 or x + count > width:
                    raise ValueError("bad RGBE literal run")
                line[c, x:x + count] = np.frombuffer(buf[pos:pos + count], dtype=np.uint8)
                pos += count
            x += count
    return line.T, pos


def read_rgbe(path) -> np.ndarray:
    """Read a Radiance .hdr file (flat or new-style RLE, -Y +X orientation)."""
    raw = Path(path).read_bytes()
    header_end = raw.find(b"\n\n")
    if not raw.startswith(b"#?") or header_end < 0:
        raise ValueError(f"{path}: not a Radiance HDR file")
    header = raw[:header_end].decode("latin-1")
    if "FORMAT=" in header and "32-bit_rle_rgbe" not in header:
        raise ValueError(f"{path}: unsupported pixel format")
    res_end = raw.index(b"\n", header_end + 2)
    m = re.fullmatch(r"-Y (\d+) \+X (\d+)", raw[header_end + 2:res_end].decode().strip())
    if m is None:
        raise ValueError(f"{path}: only '-Y H +X W' orientation is supported")
    height, width = int(m.group(1)), int(m.group(2))
    buf = memoryview(raw)
    pos = res_end + 1
    rgbe = np.empty((height, width, 4), dtype=np.uint8)
    for y in range(height):
        if 8 <= width < 0x8000 and buf[pos] == 2 and buf[pos + 1] == 2 and not buf[pos + 2] & 0x80:
            if (buf[pos + 2] << 8 | buf[pos + 3]) != width:
                raise ValueError(f"{path}: scanline width mismatch at row {y}")
            rgbe[y], pos = _read_rle_scanline(buf, pos + 4, width)
        else:
            chunk = np.frombuffer(buf[pos:pos + 4 * width], dtype=np.uint8)
            if chunk.size != 4 * width:
                raise ValueError(f"{path}: truncated pixel data at row {y}")
            rgbe[y] = chunk.reshape(width, 4)
            pos += 4 * width
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.where(exp > 0, np.ldexp(1.0, exp - 136), 0.0)
    return rgbe[..., :3].astype(np.float64) * scale[..., None]


def write_rgbe(path, rgb: np.ndarray) -> None:
    """Write flat (uncompressed) RGBE."""
    rgb = np.maximum(np.asarray(rgb, dtype=np.float64), 0.0)
    height, width = rgb.shape[:2]
    brightest = rgb.max(axis=2)
    mant, exp = np.frexp(brightest)
    out = np.zeros((height, width, 4), dtype=np.uint8)
    nz = brightest > 1e-32
    factor = np.where(nz, mant * 256.0 / np.where(nz, brightest, 1.0), 0.0)
    out[..., :3] = np.clip(rgb * factor[..., None], 0, 255).astype(np.uint8)
    out[..., 3] = np.where(nz, exp + 128, 0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {height} +X {width}\n".encode())
        f.write(out.tobytes())


# --- sRGB / PNG ----------------------------------------------------------------

def srgb_encode(linear: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(linear, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    x = np.clip(np.asarray(encoded, dtype=np.float64), 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def write_png(path, linear: np.ndarray) -> None:
    """Encode a linear image to 8-bit sRGB."""
    Image.fromarray(np.round(srgb_encode(linear) * 255.0).astype(np.uint8)).save(path)


def read_png(path) -> np.ndarray:
    """Decode an 8-bit sRGB PNG to linear RGB."""
    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return srgb_decode(img)


def quantize_8bit(linear: np.ndarray) -> np.ndarray:
    """What a linear image becomes after a write_png / read_png round trip."""
    return srgb_decode(np.round(srgb_encode(linear) * 255.0) / 255.0)


def write_mask(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask) > 0.5, 255, 0).astype(np.uint8)).save(path)


def read_mask(path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("L")) > 127


def read_image(path) -> np.ndarray:
    """Linear RGB from .pfm, .hdr or sRGB .png."""
    suffix = Path(path).suffix.lower()
    if suffix == ".pfm":
        img = read_pfm(path)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        return img
    if suffix == ".hdr":
        return read_rgbe(path)
    return read_png(path)
