"""Writes the EXIF conformance fixtures next to this script.

gps_le.exif and gps_be.exif are bare TIFF blobs assembled with struct in
little- and big-endian byte order. gps.jpg is a small JPEG whose EXIF block
is produced by Pillow. All three carry GPSImgDirectionRef "T" and
GPSImgDirection 12345/100, plus latitude/longitude rationals.
"""

import io
import struct
from pathlib import Path

from PIL import Image
from PIL.TiffImagePlugin import IFDRational

HERE = Path(__file__).resolve().parent

ASCII, SHORT, LONG, RATIONAL = 2, 3, 4, 5


def tiff(order):
    e = "<" if order == "II" else ">"
    # IFD0: Orientation, GPS pointer. GPS IFD: refs and rationals.
    ifd0_at = 8
    ifd0 = [(0x0112, SHORT, 1, struct.pack(e + "HH", 1, 0)), (0x8825, LONG, 1, None)]
    gps = [
        (0x01, ASCII, 2, b"N\0\0\0"),
        (0x02, RATIONAL, 3, struct.pack(e + "6I", 48, 1, 8, 1, 1332, 100)),
        (0x03, ASCII, 2, b"E\0\0\0"),
        (0x04, RATIONAL, 3, struct.pack(e + "6I", 11, 1, 34, 1, 3000, 100)),
        (0x10, ASCII, 2, b"T\0\0\0"),
        (0x11, RATIONAL, 1, struct.pack(e + "2I", 12345, 100)),
    ]
    gps_at = ifd0_at + 2 + 12 * len(ifd0) + 4
    data_at = gps_at + 2 + 12 * len(gps) + 4

    out = bytearray(order.encode() + struct.pack(e + "HI", 42, ifd0_at))
    out += struct.pack(e + "H", len(ifd0))
    for tag, typ, count, value in ifd0:
        if value is None:
            value = struct.pack(e + "I", gps_at)
        out += struct.pack(e + "HHI", tag, typ, count) + value
    out += struct.pack(e + "I", 0)
    assert len(out) == gps_at

    data = bytearray()
    out += struct.pack(e + "H", len(gps))
    for tag, typ, count, value in gps:
        if len(value) <= 4:
            out += struct.pack(e + "HHI", tag, typ, count) + value
        else:
            out += struct.pack(e + "HHII", tag, typ, count, data_at + len(data))
            data += value
    out += struct.pack(e + "I", 0)
    return bytes(out + data)


def jpeg():
    exif = Image.Exif()
    gps = exif.get_ifd(0x8825)
    gps[0x01] = "N"
    gps[0x02] = (IFDRational(48, 1), IFDRational(8, 1), IFDRational(1332, 100))
    gps[0x10] = "T"
    gps[0x11] = IFDRational(12345, 100)
    buf = io.BytesIO()
    Image.new("RGB", (8, 8), (120, 90, 60)).save(buf, "JPEG", exif=exif.tobytes())
    return buf.getvalue()


if __name__ == "__main__":
    (HERE / "gps_le.exif").write_bytes(tiff("II"))
    (HERE / "gps_be.exif").write_bytes(tiff("MM"))
    (HERE / "gps.jpg").write_bytes(jpeg())
