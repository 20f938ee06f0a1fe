"""Binary PGM (P5) / PPM (P6) reading and writing."""
import numpy as np

from ..errors import ParseError


def _tokens(blob, count, pos):
    out = []
    n = len(blob)
    while len(out) < count:
        while pos < n and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < n and blob[pos:pos + 1] == b"#":
            while pos < n and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PNM header")
        out.append(blob[start:pos])
    return out, pos + 1


def read_pnm(path):
    """Read a P5/P6 file into a (C, H, W) float32 array in [0, 1]."""
    with open(path, "rb") as fh:
        blob = fh.read()
    (magic, w, h, maxval), pos = _tokens(blob, 4, 0)
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported PNM magic {magic!r}", path=path)
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise ParseError("non-integer PNM header field", path=path) from None
    if not 0 < maxval < 65536:
        raise ParseError(f"PNM maxval {maxval} out of range", path=path)
    channels = 3 if magic == b"P6" else 1
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    count = w * h * channels
    if len(blob) - pos < count * np.dtype(dtype).itemsize:
        raise ParseError("truncated PNM pixel data", path=path)
    data = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
    img = data.reshape(h, w, channels).transpose(2, 0, 1).astype(np.float32) / maxval
    return img


def write_pnm(path, image):
    """Write (C, H, W) float data in [0, 1] as 8-bit P5 (C=1) or P6 (C=3)."""
    image = np.asarray(image)
    if image.ndim == 2:
        image = image[None]
    c, h, w = image.shape
    if c not in (1, 3):
        raise ValueError(f"PNM needs 1 or 3 channels, got {c}")
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    magic = b"P5" if c == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + f"\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
