//! Reader for the uncompressed little-endian subset of DICOM used by short-axis
//! cine MRI slices.
//!
//! Only the tags needed to rebuild a calibrated pixel grid are interpreted.
//! Everything else is skipped by its declared length; sequences of undefined
//! length are walked item by item.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::Grid;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DicomError {
    #[error("missing DICM magic after the 128-byte preamble")]
    Magic,
    #[error("compressed transfer syntax {0} is not supported")]
    Compressed(String),
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("missing required tag {0}")]
    MissingTag(&'static str),
    #[error("element {tag} at offset {offset} is truncated")]
    TruncatedElement { tag: String, offset: usize },
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    TruncatedPixelData { expected: usize, found: usize },
    #[error("unsupported pixel format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed element {tag}: {message}")]
    Malformed { tag: String, message: String },
}

impl DicomError {
    pub fn kind(&self) -> &'static str {
        match self {
            DicomError::Magic => "dicom_magic",
            DicomError::Compressed(_) => "dicom_compressed",
            DicomError::UnsupportedTransferSyntax(_) => "dicom_transfer_syntax",
            DicomError::MissingTag(_) => "dicom_missing_tag",
            DicomError::TruncatedElement { .. } => "dicom_truncated_element",
            DicomError::TruncatedPixelData { .. } => "dicom_truncated_pixel_data",
            DicomError::UnsupportedFormat(_) => "dicom_unsupported_format",
            DicomError::Malformed { .. } => "dicom_malformed",
        }
    }
}

type DResult<T> = std::result::Result<T, DicomError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(pub u16, pub u16);

impl std::fmt::Display for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

pub mod tags {
    use super::Tag;
    pub const TRANSFER_SYNTAX: Tag = Tag(0x0002, 0x0010);
    pub const SOP_INSTANCE_UID: Tag = Tag(0x0008, 0x0018);
    pub const PATIENT_ID: Tag = Tag(0x0010, 0x0020);
    pub const SERIES_NUMBER: Tag = Tag(0x0020, 0x0011);
    pub const INSTANCE_NUMBER: Tag = Tag(0x0020, 0x0013);
    pub const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
    pub const ROWS: Tag = Tag(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
    pub const PIXEL_SPACING: Tag = Tag(0x0028, 0x0030);
    pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
    pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
    pub const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);
    pub const ITEM: Tag = Tag(0xFFFE, 0xE000);
    pub const ITEM_END: Tag = Tag(0xFFFE, 0xE00D);
    pub const SEQUENCE_END: Tag = Tag(0xFFFE, 0xE0DD);
}

pub const IMPLICIT_LE: &str = "1.2.840.10008.1.2";
pub const EXPLICIT_LE: &str = "1.2.840.10008.1.2.1";
pub const EXPLICIT_BE: &str = "1.2.840.10008.1.2.2";

const UNDEFINED: u32 = 0xFFFF_FFFF;
const MAX_DEPTH: usize = 16;

/// Text-valued tags copied into [`DicomImage::metadata`].
const METADATA: [(Tag, &str); 5] = [
    (tags::TRANSFER_SYNTAX, "TransferSyntaxUID"),
    (tags::SOP_INSTANCE_UID, "SOPInstanceUID"),
    (tags::PATIENT_ID, "PatientID"),
    (tags::SERIES_NUMBER, "SeriesNumber"),
    (tags::INSTANCE_NUMBER, "InstanceNumber"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct DicomImage {
    /// `raw · slope + intercept`.
    pub pixels: Grid<f64>,
    /// `(sx, sy)`: column spacing, row spacing.
    pub spacing_mm: (f64, f64),
    pub metadata: BTreeMap<String, String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Syntax {
    Implicit,
    Explicit,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

struct Element<'a> {
    tag: Tag,
    vr: Option<[u8; 2]>,
    /// `None` for undefined length.
    value: Option<&'a [u8]>,
}

fn has_long_length(vr: [u8; 2]) -> bool {
    matches!(&vr, b"OB" | b"OW" | b"OF" | b"OD" | b"OL" | b"OV" | b"SQ" | b"SV" | b"UC" | b"UN" | b"UR" | b"UT" | b"UV")
}

impl<'a> Reader<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }

    fn take(&mut self, n: usize, tag: Tag) -> DResult<&'a [u8]> {
        let start = self.pos;
        let end = start.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(DicomError::TruncatedElement { tag: tag.to_string(), offset: start })?;
        self.pos = end;
        Ok(&self.bytes[start..end])
    }

    fn u16(&mut self, tag: Tag) -> DResult<u16> {
        let b = self.take(2, tag)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, tag: Tag) -> DResult<u32> {
        let b = self.take(4, tag)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn peek_tag(&self) -> Option<Tag> {
        let b = self.bytes.get(self.pos..self.pos + 4)?;
        Some(Tag(u16::from_le_bytes([b[0], b[1]]), u16::from_le_bytes([b[2], b[3]])))
    }

    fn tag(&mut self) -> DResult<Tag> {
        let unknown = Tag(0xFFFF, 0xFFFF);
        let g = self.u16(unknown)?;
        let e = self.u16(Tag(g, 0xFFFF))?;
        Ok(Tag(g, e))
    }

    fn element(&mut self, syntax: Syntax) -> DResult<Element<'a>> {
        let tag = self.tag()?;
        // Item and delimiter tags never carry a VR.
        let (vr, len) = if tag.0 == 0xFFFE || syntax == Syntax::Implicit {
            (None, self.u32(tag)?)
        } else {
            let v = self.take(2, tag)?;
            let vr = [v[0], v[1]];
            if !vr.iter().all(u8::is_ascii_uppercase) {
                return Err(DicomError::Malformed { tag: tag.to_string(), message: format!("invalid VR bytes {vr:?}") });
            }
            let len = if has_long_length(vr) {
                self.take(2, tag)?;
                self.u32(tag)?
            } else {
                self.u16(tag)? as u32
            };
            (Some(vr), len)
        };
        let value = if len == UNDEFINED { None } else { Some(self.take(len as usize, tag)?) };
        Ok(Element { tag, vr, value })
    }

    /// Skip the body of an undefined-length sequence or item.
    fn skip_undefined(&mut self, syntax: Syntax, terminator: Tag, depth: usize) -> DResult<()> {
        if depth > MAX_DEPTH {
            return Err(DicomError::Malformed { tag: terminator.to_string(), message: "sequences nested too deeply".into() });
        }
        loop {
            if self.at_end() {
                return Err(DicomError::TruncatedElement { tag: terminator.to_string(), offset: self.pos });
            }
            let el = self.element(syntax)?;
            if el.tag == terminator {
                return Ok(());
            }
            if el.value.is_none() {
                let inner = if el.tag == tags::ITEM { tags::ITEM_END } else { tags::SEQUENCE_END };
                self.skip_undefined(syntax, inner, depth + 1)?;
            }
        }
    }
}

fn text(value: &[u8]) -> String {
    String::from_utf8_lossy(value).trim_end_matches(['\0', ' ']).trim().to_string()
}

fn classify_syntax(uid: &str) -> DResult<Syntax> {
    match uid {
        IMPLICIT_LE => Ok(Syntax::Implicit),
        EXPLICIT_LE => Ok(Syntax::Explicit),
        EXPLICIT_BE => Err(DicomError::UnsupportedTransferSyntax(uid.into())),
        _ if uid == "1.2.840.10008.1.2.1.99"
            || uid.starts_with("1.2.840.10008.1.2.4.")
            || uid == "1.2.840.10008.1.2.5" =>
        {
            Err(DicomError::Compressed(uid.into()))
        }
        _ => Err(DicomError::UnsupportedTransferSyntax(uid.into())),
    }
}

fn parse_ds(tag: Tag, value: &[u8]) -> DResult<Vec<f64>> {
    text(value)
        .split('\\')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DicomError::Malformed { tag: tag.to_string(), message: format!("bad decimal string {s:?}") })
        })
        .collect()
}

fn parse_us(tag: Tag, value: &[u8]) -> DResult<u16> {
    match value {
        [a, b, ..] => Ok(u16::from_le_bytes([*a, *b])),
        _ => Err(DicomError::Malformed { tag: tag.to_string(), message: format!("{} bytes for US value", value.len()) }),
    }
}

/// Parse a DICOM Part-10 byte stream.
pub fn read_dicom(bytes: &[u8]) -> DResult<DicomImage> {
    if bytes.len() < 132 || &bytes[128..132] != b"DICM" {
        return Err(DicomError::Magic);
    }
    let mut r = Reader { bytes, pos: 132 };
    let mut metadata = BTreeMap::new();

    // File meta group: always explicit VR little endian.
    let mut transfer_syntax = None;
    while r.peek_tag().is_some_and(|t| t.0 == 0x0002) {
        let el = r.element(Syntax::Explicit)?;
        let value = el.value.ok_or_else(|| DicomError::Malformed {
            tag: el.tag.to_string(),
            message: "undefined length in file meta".into(),
        })?;
        if el.tag == tags::TRANSFER_SYNTAX {
            transfer_syntax = Some(text(value));
        }
    }
    let uid = transfer_syntax.ok_or(DicomError::MissingTag("TransferSyntaxUID"))?;
    let syntax = classify_syntax(&uid)?;
    metadata.insert("TransferSyntaxUID".to_string(), uid);

    let mut us: BTreeMap<Tag, u16> = BTreeMap::new();
    let mut spacing = None;
    let mut slope = 1.0;
    let mut intercept = 0.0;
    let mut pixel_data = None;
    while !r.at_end() {
        let el = r.element(syntax)?;
        let Some(value) = el.value else {
            if el.tag == tags::PIXEL_DATA {
                return Err(DicomError::Compressed(format!("encapsulated pixel data under {}", metadata["TransferSyntaxUID"])));
            }
            let terminator = if el.tag == tags::ITEM { tags::ITEM_END } else { tags::SEQUENCE_END };
            r.skip_undefined(syntax, terminator, 1)?;
            continue;
        };
        if el.vr == Some(*b"SQ") {
            continue;
        }
        match el.tag {
            t @ (tags::ROWS
            | tags::COLUMNS
            | tags::BITS_ALLOCATED
            | tags::PIXEL_REPRESENTATION
            | tags::SAMPLES_PER_PIXEL) => {
                us.insert(t, parse_us(t, value)?);
            }
            tags::PIXEL_SPACING => {
                let v = parse_ds(el.tag, value)?;
                let [row, col] = v[..] else {
                    return Err(DicomError::Malformed {
                        tag: el.tag.to_string(),
                        message: format!("expected 2 spacing values, got {}", v.len()),
                    });
                };
                if !(row > 0.0 && col > 0.0) {
                    return Err(DicomError::Malformed { tag: el.tag.to_string(), message: "spacing must be positive".into() });
                }
                spacing = Some((col, row));
            }
            tags::RESCALE_SLOPE => slope = parse_ds(el.tag, value)?[0],
            tags::RESCALE_INTERCEPT => intercept = parse_ds(el.tag, value)?[0],
            tags::PIXEL_DATA => pixel_data = Some(value),
            t => {
                if let Some((_, name)) = METADATA.iter().find(|(m, _)| *m == t) {
                    metadata.insert(name.to_string(), text(value));
                }
            }
        }
    }

    let need = |t: Tag, name: &'static str| us.get(&t).copied().ok_or(DicomError::MissingTag(name));
    let rows = need(tags::ROWS, "Rows")? as usize;
    let cols = need(tags::COLUMNS, "Columns")? as usize;
    let bits = need(tags::BITS_ALLOCATED, "BitsAllocated")?;
    let signed = us.get(&tags::PIXEL_REPRESENTATION).copied().unwrap_or(0) == 1;
    if let Some(&spp) = us.get(&tags::SAMPLES_PER_PIXEL) {
        if spp != 1 {
            return Err(DicomError::UnsupportedFormat(format!("{spp} samples per pixel")));
        }
    }
    let spacing_mm = spacing.ok_or(DicomError::MissingTag("PixelSpacing"))?;
    let data = pixel_data.ok_or(DicomError::MissingTag("PixelData"))?;
    if bits != 8 && bits != 16 {
        return Err(DicomError::UnsupportedFormat(format!("BitsAllocated={bits}")));
    }
    if rows == 0 || cols == 0 {
        return Err(DicomError::UnsupportedFormat(format!("empty image {rows}x{cols}")));
    }
    let bytes_per = bits as usize / 8;
    let expected = rows * cols * bytes_per;
    if data.len() < expected {
        return Err(DicomError::TruncatedPixelData { expected, found: data.len() });
    }
    let raw = data[..expected].chunks_exact(bytes_per).map(|b| match (bytes_per, signed) {
        (1, false) => b[0] as f64,
        (1, true) => b[0] as i8 as f64,
        (_, false) => u16::from_le_bytes([b[0], b[1]]) as f64,
        (_, true) => i16::from_le_bytes([b[0], b[1]]) as f64,
    });
    let pixels = Grid::from_vec(rows, cols, raw.map(|v| v * slope + intercept).collect()).expect("length checked");
    Ok(DicomImage { pixels, spacing_mm, metadata })
}

/// Minimal DICOM writer used to produce test inputs.
pub mod fixture {
    use super::{tags, Tag, EXPLICIT_LE, IMPLICIT_LE};

    #[derive(Clone, Debug)]
    pub struct DicomFixture {
        pub rows: u16,
        pub cols: u16,
        pub bits_allocated: u16,
        pub signed: bool,
        /// Raw stored values in row-major order.
        pub pixels: Vec<i32>,
        /// PixelSpacing value, `row\col`.
        pub spacing: Option<String>,
        pub slope: Option<String>,
        pub intercept: Option<String>,
        pub transfer_syntax: String,
        pub patient_id: Option<String>,
        /// Insert an undefined-length private sequence before the image tags.
        pub with_sequence: bool,
    }

    impl DicomFixture {
        /// 16-bit unsigned image, spacing `1.3\1.3`, explicit VR.
        pub fn new(rows: u16, cols: u16, pixels: Vec<i32>) -> Self {
            Self {
                rows,
                cols,
                bits_allocated: 16,
                signed: false,
                pixels,
                spacing: Some("1.3\\1.3".into()),
                slope: None,
                intercept: None,
                transfer_syntax: EXPLICIT_LE.into(),
                patient_id: Some("SC-HF-I-01".into()),
                with_sequence: true,
            }
        }

        pub fn implicit(mut self) -> Self {
            self.transfer_syntax = IMPLICIT_LE.into();
            self
        }

        fn implicit_vr(&self) -> bool {
            self.transfer_syntax == IMPLICIT_LE
        }

        fn element(&self, out: &mut Vec<u8>, tag: Tag, vr: &[u8; 2], value: &[u8], explicit: bool) {
            out.extend_from_slice(&tag.0.to_le_bytes());
            out.extend_from_slice(&tag.1.to_le_bytes());
            if explicit {
                out.extend_from_slice(vr);
                if super::has_long_length(*vr) {
                    out.extend_from_slice(&[0, 0]);
                    out.extend_from_slice(&(value.len() as u32).to_le_bytes());
                } else {
                    out.extend_from_slice(&(value.len() as u16).to_le_bytes());
                }
            } else {
                out.extend_from_slice(&(value.len() as u32).to_le_bytes());
            }
            out.extend_from_slice(value);
        }

        fn padded(s: &str, pad: u8) -> Vec<u8> {
            let mut v = s.as_bytes().to_vec();
            if v.len() % 2 == 1 {
                v.push(pad);
            }
            v
        }

        fn undefined_sequence(&self, out: &mut Vec<u8>, explicit: bool) {
            let push_tag = |out: &mut Vec<u8>, t: Tag| {
                out.extend_from_slice(&t.0.to_le_bytes());
                out.extend_from_slice(&t.1.to_le_bytes());
            };
            push_tag(out, Tag(0x0029, 0x1010));
            if explicit {
                out.extend_from_slice(b"SQ\0\0");
            }
            out.extend_from_slice(&u32::MAX.to_le_bytes());
            push_tag(out, tags::ITEM);
            out.extend_from_slice(&u32::MAX.to_le_bytes());
            self.element(out, Tag(0x0029, 0x0010), b"LO", &Self::padded("PRIVATE", b' '), explicit);
            push_tag(out, tags::ITEM_END);
            out.extend_from_slice(&0u32.to_le_bytes());
            push_tag(out, tags::SEQUENCE_END);
            out.extend_from_slice(&0u32.to_le_bytes());
        }

        pub fn to_bytes(&self) -> Vec<u8> {
            let mut out = vec![0u8; 128];
            out.extend_from_slice(b"DICM");
            let ts = Self::padded(&self.transfer_syntax, 0);
            self.element(&mut out, Tag(0x0002, 0x0001), b"OB", &[0, 1], true);
            self.element(&mut out, tags::TRANSFER_SYNTAX, b"UI", &ts, true);

            let explicit = !self.implicit_vr();
            let us = |v: u16| v.to_le_bytes();
            let mut body = Vec::new();
            self.element(&mut body, tags::SOP_INSTANCE_UID, b"UI", &Self::padded("1.2.3.4", 0), explicit);
            if let Some(id) = &self.patient_id {
                self.element(&mut body, tags::PATIENT_ID, b"LO", &Self::padded(id, b' '), explicit);
            }
            if self.with_sequence {
                self.undefined_sequence(&mut body, explicit);
            }
            self.element(&mut body, tags::SAMPLES_PER_PIXEL, b"US", &us(1), explicit);
            self.element(&mut body, tags::ROWS, b"US", &us(self.rows), explicit);
            self.element(&mut body, tags::COLUMNS, b"US", &us(self.cols), explicit);
            if let Some(s) = &self.spacing {
                self.element(&mut body, tags::PIXEL_SPACING, b"DS", &Self::padded(s, b' '), explicit);
            }
            self.element(&mut body, tags::BITS_ALLOCATED, b"US", &us(self.bits_allocated), explicit);
            self.element(&mut body, tags::PIXEL_REPRESENTATION, b"US", &us(self.signed as u16), explicit);
            if let Some(s) = &self.intercept {
                self.element(&mut body, tags::RESCALE_INTERCEPT, b"DS", &Self::padded(s, b' '), explicit);
            }
            if let Some(s) = &self.slope {
                self.element(&mut body, tags::RESCALE_SLOPE, b"DS", &Self::padded(s, b' '), explicit);
            }
            let mut pixels = Vec::new();
            for &p in &self.pixels {
                match self.bits_allocated {
                    8 => pixels.push(p as u8),
                    _ => pixels.extend_from_slice(&(p as u16).to_le_bytes()),
                }
            }
            if pixels.len() % 2 == 1 {
                pixels.push(0);
            }
            let vr = if self.bits_allocated == 8 { b"OB" } else { b"OW" };
            self.element(&mut body, tags::PIXEL_DATA, vr, &pixels, explicit);
            out.extend_from_slice(&body);
            out
        }
    }
}
