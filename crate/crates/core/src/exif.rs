//! Direction stage: a minimal EXIF reader for the GPS IFD.
//!
//! Accepts a bare TIFF structure, the same prefixed with `Exif\0\0`, or a
//! whole JPEG whose APP1 segment carries it. Only IFD0 and the GPS IFD are
//! read. Every read is bounds-checked and errors carry the absolute byte
//! offset into the input.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::normalize_bearing;

pub const TAG_GPS_IFD: u16 = 0x8825;
pub const TAG_GPS_LATITUDE_REF: u16 = 0x01;
pub const TAG_GPS_LATITUDE: u16 = 0x02;
pub const TAG_GPS_LONGITUDE_REF: u16 = 0x03;
pub const TAG_GPS_LONGITUDE: u16 = 0x04;
pub const TAG_GPS_IMG_DIRECTION_REF: u16 = 0x10;
pub const TAG_GPS_IMG_DIRECTION: u16 = 0x11;

const TYPE_ASCII: u16 = 2;
const TYPE_LONG: u16 = 4;
const TYPE_RATIONAL: u16 = 5;
const TYPE_IFD: u16 = 13;

const EXIF_HEADER: &[u8; 6] = b"Exif\0\0";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExifError {
    #[error("truncated at byte {offset}: need {needed} bytes, blob has {len}")]
    Truncated {
        offset: usize,
        needed: usize,
        len: usize,
    },
    #[error("bad TIFF header at byte {offset}")]
    BadMagic { offset: usize },
    #[error("offset {target} read at byte {offset} points outside the blob")]
    OffsetOutOfBounds { offset: usize, target: u64 },
    #[error("zero denominator in rational at byte {offset}")]
    ZeroDenominator { offset: usize },
    #[error("tag {tag:#06x} at byte {offset} has type {field_type} count {count}, expected {expected}")]
    UnexpectedFormat {
        tag: u16,
        offset: usize,
        field_type: u16,
        count: u32,
        expected: &'static str,
    },
    #[error("malformed JPEG segment at byte {offset}")]
    BadJpeg { offset: usize },
}

type ExifResult<T> = std::result::Result<T, ExifError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DirectionRef {
    #[serde(rename = "T")]
    TrueNorth,
    #[serde(rename = "M")]
    MagneticNorth,
}

/// GPS fields read from one EXIF payload. Absent tags stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExifGpsData {
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    /// Degrees in [0, 360).
    pub img_direction: Option<f64>,
    pub img_direction_ref: Option<DirectionRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Order {
    Little,
    Big,
}

struct Tiff<'a> {
    bytes: &'a [u8],
    // absolute position of `bytes[0]` in the caller's blob
    base: usize,
    order: Order,
}

#[derive(Debug, Clone, Copy)]
struct IfdEntry {
    tag: u16,
    field_type: u16,
    count: u32,
    // position of the 4-byte value/offset field, relative to the TIFF start
    value_pos: usize,
}

fn type_size(t: u16) -> Option<u64> {
    match t {
        1 | 2 | 6 | 7 => Some(1),
        3 | 8 => Some(2),
        4 | 9 | 11 | 13 => Some(4),
        5 | 10 | 12 => Some(8),
        _ => None,
    }
}

impl<'a> Tiff<'a> {
    fn new(bytes: &'a [u8], base: usize) -> ExifResult<Self> {
        if bytes.len() < 8 {
            return Err(ExifError::Truncated {
                offset: base,
                needed: 8,
                len: base + bytes.len(),
            });
        }
        let order = match &bytes[0..2] {
            b"II" => Order::Little,
            b"MM" => Order::Big,
            _ => return Err(ExifError::BadMagic { offset: base }),
        };
        let t = Tiff { bytes, base, order };
        if t.u16(2)? != 42 {
            return Err(ExifError::BadMagic { offset: base + 2 });
        }
        Ok(t)
    }

    fn slice(&self, pos: usize, len: usize) -> ExifResult<&'a [u8]> {
        pos.checked_add(len)
            .and_then(|end| self.bytes.get(pos..end))
            .ok_or(ExifError::Truncated {
                offset: self.base + pos,
                needed: len,
                len: self.base + self.bytes.len(),
            })
    }

    fn u16(&self, pos: usize) -> ExifResult<u16> {
        let b: [u8; 2] = self.slice(pos, 2)?.try_into().unwrap();
        Ok(match self.order {
            Order::Little => u16::from_le_bytes(b),
            Order::Big => u16::from_be_bytes(b),
        })
    }

    fn u32(&self, pos: usize) -> ExifResult<u32> {
        let b: [u8; 4] = self.slice(pos, 4)?.try_into().unwrap();
        Ok(match self.order {
            Order::Little => u32::from_le_bytes(b),
            Order::Big => u32::from_be_bytes(b),
        })
    }

    /// Resolves an offset read at `at` into an in-bounds position.
    fn target(&self, at: usize, offset: u32) -> ExifResult<usize> {
        let target = offset as usize;
        if target >= self.bytes.len() {
            return Err(ExifError::OffsetOutOfBounds {
                offset: self.base + at,
                target: offset as u64,
            });
        }
        Ok(target)
    }

    fn ifd(&self, pos: usize) -> ExifResult<Vec<IfdEntry>> {
        let n = self.u16(pos)? as usize;
        self.slice(pos + 2, n * 12)?;
        (0..n)
            .map(|i| {
                let e = pos + 2 + i * 12;
                Ok(IfdEntry {
                    tag: self.u16(e)?,
                    field_type: self.u16(e + 2)?,
                    count: self.u32(e + 4)?,
                    value_pos: e + 8,
                })
            })
            .collect()
    }

    /// Raw bytes of an entry's value, inline or at its offset.
    fn value(&self, e: &IfdEntry) -> ExifResult<(usize, &'a [u8])> {
        let size = type_size(e.field_type).ok_or(ExifError::UnexpectedFormat {
            tag: e.tag,
            offset: self.base + e.value_pos - 8,
            field_type: e.field_type,
            count: e.count,
            expected: "a TIFF field type",
        })?;
        let total = size * e.count as u64;
        if total <= 4 {
            return Ok((e.value_pos, self.slice(e.value_pos, total as usize)?));
        }
        let off = self.u32(e.value_pos)?;
        let pos = self.target(e.value_pos, off)?;
        let len = usize::try_from(total).map_err(|_| ExifError::OffsetOutOfBounds {
            offset: self.base + e.value_pos,
            target: off as u64,
        })?;
        Ok((pos, self.slice(pos, len)?))
    }

    fn rationals(&self, e: &IfdEntry, count: u32) -> ExifResult<Vec<f64>> {
        if e.field_type != TYPE_RATIONAL || e.count != count {
            return Err(ExifError::UnexpectedFormat {
                tag: e.tag,
                offset: self.base + e.value_pos - 8,
                field_type: e.field_type,
                count: e.count,
                expected: if count == 1 { "1 RATIONAL" } else { "3 RATIONAL" },
            });
        }
        let (pos, _) = self.value(e)?;
        (0..count as usize)
            .map(|i| {
                let at = pos + i * 8;
                let num = self.u32(at)?;
                let den = self.u32(at + 4)?;
                if den == 0 {
                    return Err(ExifError::ZeroDenominator {
                        offset: self.base + at + 4,
                    });
                }
                Ok(num as f64 / den as f64)
            })
            .collect()
    }

    fn ascii_char(&self, e: &IfdEntry) -> ExifResult<Option<u8>> {
        if e.field_type != TYPE_ASCII || e.count == 0 {
            return Err(ExifError::UnexpectedFormat {
                tag: e.tag,
                offset: self.base + e.value_pos - 8,
                field_type: e.field_type,
                count: e.count,
                expected: "ASCII",
            });
        }
        let (_, raw) = self.value(e)?;
        Ok(raw.first().copied().filter(|c| *c != 0))
    }
}

fn dms_to_degrees(dms: &[f64]) -> f64 {
    dms[0] + dms[1] / 60.0 + dms[2] / 3600.0
}

fn parse_tiff(tiff: &Tiff<'_>) -> ExifResult<ExifGpsData> {
    let ifd0_off = tiff.u32(4)?;
    let ifd0 = tiff.ifd(tiff.target(4, ifd0_off)?)?;
    let Some(gps_ptr) = ifd0.iter().find(|e| e.tag == TAG_GPS_IFD) else {
        return Ok(ExifGpsData::default());
    };
    if !matches!(gps_ptr.field_type, TYPE_LONG | TYPE_IFD) || gps_ptr.count != 1 {
        return Err(ExifError::UnexpectedFormat {
            tag: TAG_GPS_IFD,
            offset: tiff.base + gps_ptr.value_pos - 8,
            field_type: gps_ptr.field_type,
            count: gps_ptr.count,
            expected: "1 LONG",
        });
    }
    let gps_off = tiff.u32(gps_ptr.value_pos)?;
    let gps = tiff.ifd(tiff.target(gps_ptr.value_pos, gps_off)?)?;

    let find = |tag: u16| gps.iter().find(|e| e.tag == tag);
    let mut out = ExifGpsData::default();

    let coord = |value_tag: u16, ref_tag: u16, negative: u8| -> ExifResult<Option<f64>> {
        let Some(e) = find(value_tag) else {
            return Ok(None);
        };
        let deg = dms_to_degrees(&tiff.rationals(e, 3)?);
        let sign = match find(ref_tag) {
            Some(r) if tiff.ascii_char(r)? == Some(negative) => -1.0,
            _ => 1.0,
        };
        Ok(Some(sign * deg))
    };
    out.lat = coord(TAG_GPS_LATITUDE, TAG_GPS_LATITUDE_REF, b'S')?;
    out.lon = coord(TAG_GPS_LONGITUDE, TAG_GPS_LONGITUDE_REF, b'W')?;

    if let Some(e) = find(TAG_GPS_IMG_DIRECTION) {
        let deg = tiff.rationals(e, 1)?[0];
        out.img_direction = Some(normalize_bearing(deg));
    }
    if let Some(e) = find(TAG_GPS_IMG_DIRECTION_REF) {
        out.img_direction_ref = match tiff.ascii_char(e)? {
            Some(b'T') => Some(DirectionRef::TrueNorth),
            Some(b'M') => Some(DirectionRef::MagneticNorth),
            _ => None,
        };
    }
    Ok(out)
}

/// Locates the TIFF structure inside a JPEG's APP1 Exif segment.
fn jpeg_exif(blob: &[u8]) -> ExifResult<Option<(usize, &[u8])>> {
    let mut pos = 2;
    loop {
        // skip fill bytes
        while blob.get(pos) == Some(&0xFF) && blob.get(pos + 1) == Some(&0xFF) {
            pos += 1;
        }
        let (Some(&0xFF), Some(&marker)) = (blob.get(pos), blob.get(pos + 1)) else {
            return if pos >= blob.len() {
                Ok(None)
            } else {
                Err(ExifError::BadJpeg { offset: pos })
            };
        };
        match marker {
            // start of scan or end of image: no metadata follows
            0xDA | 0xD9 => return Ok(None),
            0x01 | 0xD0..=0xD7 => {
                pos += 2;
                continue;
            }
            _ => {}
        }
        let len = match blob.get(pos + 2..pos + 4) {
            Some(b) => u16::from_be_bytes([b[0], b[1]]) as usize,
            None => {
                return Err(ExifError::Truncated {
                    offset: pos + 2,
                    needed: 2,
                    len: blob.len(),
                })
            }
        };
        if len < 2 {
            return Err(ExifError::BadJpeg { offset: pos + 2 });
        }
        let start = pos + 4;
        let end = pos + 2 + len;
        let seg = blob.get(start..end).ok_or(ExifError::Truncated {
            offset: start,
            needed: len - 2,
            len: blob.len(),
        })?;
        if marker == 0xE1 && seg.starts_with(EXIF_HEADER) {
            return Ok(Some((start + 6, &seg[6..])));
        }
        pos = end;
    }
}

/// Reads the GPS fields of an EXIF payload.
///
/// A payload without a GPS IFD, or a JPEG without an Exif segment, gives
/// an empty [`ExifGpsData`].
pub fn parse_exif(blob: &[u8]) -> ExifResult<ExifGpsData> {
    let (base, bytes) = if blob.starts_with(&[0xFF, 0xD8]) {
        match jpeg_exif(blob)? {
            Some(found) => found,
            None => return Ok(ExifGpsData::default()),
        }
    } else if let Some(rest) = blob.strip_prefix(EXIF_HEADER) {
        (EXIF_HEADER.len(), rest)
    } else {
        (0, blob)
    };
    parse_tiff(&Tiff::new(bytes, base)?)
}

/// Outcome of the direction stage for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionOutcome {
    /// Compass bearing in [0, 360) when the image passes.
    pub bearing: Option<f64>,
    pub bearing_ref: Option<DirectionRef>,
}

impl DirectionOutcome {
    pub fn pass(&self) -> bool {
        self.bearing.is_some()
    }
}

/// Passes exactly the images whose EXIF carries `GPSImgDirection`.
///
/// Magnetic-north directions pass unconverted.
pub fn filter_by_direction(gps: Option<&ExifGpsData>) -> DirectionOutcome {
    match gps.and_then(|g| g.img_direction.map(|d| (d, g.img_direction_ref))) {
        Some((d, r)) => DirectionOutcome {
            bearing: Some(normalize_bearing(d)),
            bearing_ref: r,
        },
        None => DirectionOutcome {
            bearing: None,
            bearing_ref: None,
        },
    }
}

/// Where the direction stage gets EXIF payloads from.
pub trait ExifSource: Sync {
    /// `Ok(None)` when the image has no metadata at all.
    fn gps(&self, image_id: &str) -> Result<Option<ExifGpsData>>;
}

/// A directory of `<image_id>.exif` blobs or `<image_id>.jpg` files.
#[derive(Debug, Clone)]
pub struct ExifDir {
    root: PathBuf,
}

impl ExifDir {
    pub const EXTENSIONS: [&'static str; 4] = ["exif", "jpg", "jpeg", "JPG"];

    pub fn new(root: impl Into<PathBuf>) -> Self {
        ExifDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn candidate_paths(&self, image_id: &str) -> Vec<PathBuf> {
        // ids are used as file names, never as paths
        if image_id.is_empty()
            || image_id.contains(['/', '\\'])
            || image_id == "."
            || image_id == ".."
        {
            return Vec::new();
        }
        Self::EXTENSIONS
            .iter()
            .map(|ext| self.root.join(format!("{image_id}.{ext}")))
            .collect()
    }
}

impl ExifSource for ExifDir {
    fn gps(&self, image_id: &str) -> Result<Option<ExifGpsData>> {
        for path in self.candidate_paths(image_id) {
            match fs::read(&path) {
                Ok(bytes) => return Ok(Some(parse_exif(&bytes)?)),
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(Error::io(path, e)),
            }
        }
        Ok(None)
    }
}

/// In-memory payloads keyed by image id.
impl ExifSource for HashMap<String, Vec<u8>> {
    fn gps(&self, image_id: &str) -> Result<Option<ExifGpsData>> {
        self.get(image_id)
            .map(|b| parse_exif(b).map_err(Error::from))
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Hand-assembled little-endian TIFF: IFD0 with one GPS pointer, GPS IFD
    // with ImgDirectionRef "T" and ImgDirection 12345/100.
    fn le_fixture() -> Vec<u8> {
        let mut b = vec![b'I', b'I', 42, 0, 8, 0, 0, 0];
        // IFD0 at 8: 1 entry
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&0x8825u16.to_le_bytes());
        b.extend_from_slice(&4u16.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&26u32.to_le_bytes());
        b.extend_from_slice(&0u32.to_le_bytes());
        // GPS IFD at 26: 2 entries, rational at 26 + 2 + 24 + 4 = 56
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&0x10u16.to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&2u32.to_le_bytes());
        b.extend_from_slice(&[b'T', 0, 0, 0]);
        b.extend_from_slice(&0x11u16.to_le_bytes());
        b.extend_from_slice(&5u16.to_le_bytes());
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&56u32.to_le_bytes());
        b.extend_from_slice(&0u32.to_le_bytes());
        b.extend_from_slice(&12345u32.to_le_bytes());
        b.extend_from_slice(&100u32.to_le_bytes());
        assert_eq!(b.len(), 64);
        b
    }

    #[test]
    fn direction_from_rational() {
        let g = parse_exif(&le_fixture()).unwrap();
        assert_eq!(g.img_direction, Some(123.45));
        assert_eq!(g.img_direction_ref, Some(DirectionRef::TrueNorth));
        assert_eq!(g.lat, None);
    }

    #[test]
    fn exif_prefix_is_stripped() {
        let mut b = EXIF_HEADER.to_vec();
        b.extend(le_fixture());
        assert_eq!(parse_exif(&b).unwrap().img_direction, Some(123.45));
    }

    #[test]
    fn missing_gps_ifd_is_empty() {
        let b = [b'I', b'I', 42, 0, 8, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        assert_eq!(parse_exif(&b).unwrap(), ExifGpsData::default());
    }

    #[test]
    fn zero_denominator_names_offset() {
        let mut b = le_fixture();
        b[60..64].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(parse_exif(&b), Err(ExifError::ZeroDenominator { offset: 60 }));
    }

    #[test]
    fn out_of_bounds_gps_offset() {
        let mut b = le_fixture();
        b[18..22].copy_from_slice(&1000u32.to_le_bytes());
        assert_eq!(
            parse_exif(&b),
            Err(ExifError::OffsetOutOfBounds {
                offset: 18,
                target: 1000
            })
        );
    }

    #[test]
    fn truncated_and_bad_magic() {
        let b = le_fixture();
        assert!(matches!(parse_exif(&b[..60]), Err(ExifError::Truncated { .. })));
        assert!(matches!(parse_exif(&b[..5]), Err(ExifError::Truncated { .. })));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert_eq!(parse_exif(&bad), Err(ExifError::BadMagic { offset: 0 }));
    }

    #[test]
    fn jpeg_wrapping() {
        let tiff = le_fixture();
        let mut jpg = vec![0xFF, 0xD8];
        // an APP0 segment first
        jpg.extend_from_slice(&[0xFF, 0xE0, 0x00, 0x04, 0xAA, 0xBB]);
        let seg_len = (2 + 6 + tiff.len()) as u16;
        jpg.extend_from_slice(&[0xFF, 0xE1]);
        jpg.extend_from_slice(&seg_len.to_be_bytes());
        jpg.extend_from_slice(EXIF_HEADER);
        jpg.extend_from_slice(&tiff);
        jpg.extend_from_slice(&[0xFF, 0xD9]);
        assert_eq!(parse_exif(&jpg).unwrap().img_direction, Some(123.45));

        // error offsets are absolute within the JPEG
        let mut broken = jpg.clone();
        let at = 2 + 6 + 4 + 6 + 60;
        broken[at..at + 4].copy_from_slice(&0u32.to_le_bytes());
        assert_eq!(parse_exif(&broken), Err(ExifError::ZeroDenominator { offset: at }));
    }

    #[test]
    fn jpeg_without_exif_is_empty() {
        let jpg = [0xFF, 0xD8, 0xFF, 0xE0, 0x00, 0x02, 0xFF, 0xDA, 0x00];
        assert_eq!(parse_exif(&jpg).unwrap(), ExifGpsData::default());
    }

    #[test]
    fn direction_filter() {
        let g = ExifGpsData {
            img_direction: Some(270.0),
            ..Default::default()
        };
        let out = filter_by_direction(Some(&g));
        assert!(out.pass());
        assert_eq!(out.bearing, Some(270.0));
        assert!(!filter_by_direction(None).pass());
        assert!(!filter_by_direction(Some(&ExifGpsData::default())).pass());
    }

    #[test]
    fn direction_360_normalizes_to_zero() {
        let mut b = le_fixture();
        b[56..60].copy_from_slice(&36000u32.to_le_bytes());
        let g = parse_exif(&b).unwrap();
        assert_eq!(g.img_direction, Some(0.0));
        assert_eq!(filter_by_direction(Some(&g)).bearing, Some(0.0));
    }

    #[test]
    fn exact_integer_rationals() {
        let mut b = le_fixture();
        b[56..60].copy_from_slice(&9000u32.to_le_bytes());
        b[60..64].copy_from_slice(&50u32.to_le_bytes());
        assert_eq!(parse_exif(&b).unwrap().img_direction, Some(180.0));
    }

    #[test]
    fn exif_dir_lookup() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.exif"), le_fixture()).unwrap();
        fs::write(dir.path().join("bad.exif"), b"garbage").unwrap();
        let src = ExifDir::new(dir.path());
        assert_eq!(src.gps("a").unwrap().unwrap().img_direction, Some(123.45));
        assert_eq!(src.gps("missing").unwrap(), None);
        assert!(matches!(src.gps("bad"), Err(Error::Exif(_))));
        assert_eq!(src.gps("../a").unwrap(), None);
    }
}
