//! NIfTI-1 single-file (`.nii` / `.nii.gz`) reading and writing.
//!
//! Geometry comes from the sform when `sform_code > 0`, else the qform, else
//! plain pixdim scaling. Only axis-aligned affines are representable; an
//! oblique affine is snapped to the dominant world axis of each column.
//!
//! The header stores spacing and origin as `f32`. Writers additionally emit a
//! comment extension (ecode 6) carrying the exact `f64` values, which readers
//! prefer when present and consistent with the header, so geometry survives a
//! round trip bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::geometry::{AxisDirection, Geometry, Orientation};
use crate::volume::image::{ImageVolume, IntensityUnit, Modality};
use crate::volume::label::{LabelId, LabelSchema, LabelVolume};

const HEADER_SIZE: usize = 348;
const MAGIC: &[u8; 4] = b"n+1\0";
const ECODE_COMMENT: i32 = 6;
const GEOMETRY_TAG: &str = "tracerseg-geometry v1";

mod off {
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataType {
    U8,
    I8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl DataType {
    fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Self::U8,
            4 => Self::I16,
            8 => Self::I32,
            16 => Self::F32,
            64 => Self::F64,
            256 => Self::I8,
            512 => Self::U16,
            768 => Self::U32,
            1024 => Self::I64,
            1280 => Self::U64,
            other => return Err(Error::MalformedHeader(format!("unsupported datatype code {other}"))),
        })
    }

    fn code(self) -> i16 {
        match self {
            Self::U8 => 2,
            Self::I16 => 4,
            Self::I32 => 8,
            Self::F32 => 16,
            Self::F64 => 64,
            Self::I8 => 256,
            Self::U16 => 512,
            Self::U32 => 768,
            Self::I64 => 1024,
            Self::U64 => 1280,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::I64 | Self::U64 | Self::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Self::F32 | Self::F64)
    }
}

/// Parsed header fields this crate cares about.
#[derive(Debug, Clone)]
struct Header {
    geometry: Geometry,
    datatype: DataType,
    vox_offset: usize,
    slope: f64,
    inter: f64,
    descrip: String,
    big_endian: bool,
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::read_io(path, e))?;
    let mut raw = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut raw)
        .map_err(|e| Error::read_io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::MalformedHeader(format!("gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::MalformedHeader(format!("file is {} bytes, shorter than a header", bytes.len())));
    }
    let big_endian = match (LittleEndian::read_i32(bytes), BigEndian::read_i32(bytes)) {
        (348, _) => false,
        (_, 348) => true,
        (n, _) => return Err(Error::MalformedHeader(format!("sizeof_hdr is {n}, expected 348"))),
    };
    if &bytes[off::MAGIC..off::MAGIC + 4] != MAGIC {
        return Err(Error::MalformedHeader("missing `n+1` magic (only single-file NIfTI-1 is supported)".into()));
    }
    if big_endian {
        parse_header_with::<BigEndian>(bytes, true)
    } else {
        parse_header_with::<LittleEndian>(bytes, false)
    }
}

fn parse_header_with<B: ByteOrder>(b: &[u8], big_endian: bool) -> Result<Header> {
    let i16_at = |o: usize| B::read_i16(&b[o..]);
    let f32_at = |o: usize| B::read_f32(&b[o..]) as f64;

    let ndim = i16_at(off::DIM);
    if !(1..=7).contains(&ndim) {
        return Err(Error::MalformedHeader(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for d in 0..ndim as usize {
        let n = i16_at(off::DIM + 2 * (d + 1));
        if n < 1 {
            return Err(Error::MalformedHeader(format!("dim[{}] = {n}", d + 1)));
        }
        if d < 3 {
            dims[d] = n as usize;
        } else if n != 1 {
            return Err(Error::MalformedHeader("4D and higher volumes are not supported".into()));
        }
    }
    let datatype = DataType::from_code(i16_at(off::DATATYPE))?;
    let bitpix = i16_at(off::BITPIX);
    if bitpix as usize != datatype.size() * 8 {
        return Err(Error::MalformedHeader(format!("bitpix {bitpix} does not match datatype")));
    }
    let pixdim: Vec<f64> = (0..8).map(|i| f32_at(off::PIXDIM + 4 * i)).collect();
    let mut spacing = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
    for (d, s) in spacing.iter_mut().enumerate() {
        if d >= ndim as usize && (*s == 0.0 || !s.is_finite()) {
            *s = 1.0;
        }
    }
    let vox_offset = f32_at(off::VOX_OFFSET);
    if !(vox_offset >= HEADER_SIZE as f64) || vox_offset.fract() != 0.0 {
        return Err(Error::MalformedHeader(format!("vox_offset {vox_offset}")));
    }
    let slope = f32_at(off::SCL_SLOPE);
    let inter = f32_at(off::SCL_INTER);
    let descrip = c_string(&b[off::DESCRIP..off::DESCRIP + 80]);

    // columns of the 3x3 direction*spacing matrix and the origin
    let sform_code = i16_at(off::SFORM_CODE);
    let qform_code = i16_at(off::QFORM_CODE);
    let (columns, origin) = if sform_code > 0 {
        let mut m = [[0.0; 3]; 3];
        let mut origin = [0.0; 3];
        for (r, row) in m.iter_mut().enumerate() {
            let base = off::SROW_X + 16 * r;
            for (c, v) in row.iter_mut().enumerate() {
                *v = f32_at(base + 4 * c);
            }
            origin[r] = f32_at(base + 12);
        }
        let cols = [0, 1, 2].map(|c| [m[0][c], m[1][c], m[2][c]]);
        (cols, origin)
    } else if qform_code > 0 {
        let qb = f32_at(off::QUATERN_B);
        let qc = f32_at(off::QUATERN_B + 4);
        let qd = f32_at(off::QUATERN_B + 8);
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let r = quaternion_to_matrix(qb, qc, qd);
        let cols = [0, 1, 2].map(|c| {
            let f = if c == 2 { qfac } else { 1.0 };
            [r[0][c] * f, r[1][c] * f, r[2][c] * f]
        });
        let origin = [0, 1, 2].map(|i| f32_at(off::QOFFSET_X + 4 * i));
        (cols, origin)
    } else {
        ([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], [0.0; 3])
    };

    let mut axes = [AxisDirection::new(0, false); 3];
    for (d, col) in columns.iter().enumerate() {
        let (w, v) = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .expect("three entries");
        if *v == 0.0 || !v.is_finite() {
            return Err(Error::MalformedHeader(format!("degenerate affine column {d}")));
        }
        axes[d] = AxisDirection::new(w as u8, *v < 0.0);
    }
    let orientation = Orientation::new(axes).map_err(|_| Error::MalformedHeader("affine is not axis-aligned".into()))?;

    let mut geometry = Geometry {
        dims,
        spacing,
        origin,
        orientation,
    };
    if let Some((exact_spacing, exact_origin)) = exact_geometry::<B>(b, vox_offset as usize) {
        let close = |a: f64, b: f64| (a as f32) as f64 == b || (a - b).abs() <= 1e-6 * a.abs().max(1.0);
        if (0..3).all(|d| close(exact_spacing[d], geometry.spacing[d]) && close(exact_origin[d], geometry.origin[d])) {
            geometry.spacing = exact_spacing;
            geometry.origin = exact_origin;
        }
    }
    geometry
        .validate()
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;

    Ok(Header {
        geometry,
        datatype,
        vox_offset: vox_offset as usize,
        slope,
        inter,
        descrip,
        big_endian,
    })
}

fn c_string(bytes: &[u8]) -> String {
    let end = bytes.iter().position(|&c| c == 0).unwrap_or(bytes.len());
    String::from_utf8_lossy(&bytes[..end]).into_owned()
}

/// Exact spacing/origin from our comment extension, if present.
fn exact_geometry<B: ByteOrder>(b: &[u8], vox_offset: usize) -> Option<([f64; 3], [f64; 3])> {
    if b.len() < HEADER_SIZE + 4 || b[HEADER_SIZE] == 0 {
        return None;
    }
    let mut pos = HEADER_SIZE + 4;
    while pos + 8 <= vox_offset.min(b.len()) {
        let esize = B::read_i32(&b[pos..]) as usize;
        let ecode = B::read_i32(&b[pos + 4..]);
        if esize < 16 || pos + esize > b.len() {
            return None;
        }
        if ecode == ECODE_COMMENT {
            let text = c_string(&b[pos + 8..pos + esize]);
            if let Some(parsed) = parse_geometry_comment(&text) {
                return Some(parsed);
            }
        }
        pos += esize;
    }
    None
}

fn parse_geometry_comment(text: &str) -> Option<([f64; 3], [f64; 3])> {
    let mut lines = text.lines();
    if lines.next()? != GEOMETRY_TAG {
        return None;
    }
    let mut spacing = None;
    let mut origin = None;
    for line in lines {
        let mut parts = line.split_whitespace();
        let key = parts.next()?;
        let vals: Vec<f64> = parts.map(|p| p.parse().ok()).collect::<Option<_>>()?;
        let arr: [f64; 3] = vals.try_into().ok()?;
        match key {
            "spacing" => spacing = Some(arr),
            "origin" => origin = Some(arr),
            _ => {}
        }
    }
    Some((spacing?, origin?))
}

fn quaternion_to_matrix(b: f64, c: f64, d: f64) -> [[f64; 3]; 3] {
    let mut a = 1.0 - (b * b + c * c + d * d);
    let (mut b, mut c, mut d) = (b, c, d);
    if a < 1e-7 {
        let n = (b * b + c * c + d * d).sqrt();
        b /= n;
        c /= n;
        d /= n;
        a = 0.0;
    } else {
        a = a.sqrt();
    }
    [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ]
}

/// Quaternion `(b, c, d)` and `qfac` for a signed-permutation direction matrix.
fn matrix_to_quaternion(m: [[f64; 3]; 3]) -> ([f64; 3], f64) {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let qfac = if det < 0.0 { -1.0 } else { 1.0 };
    let mut r = m;
    for row in r.iter_mut() {
        row[2] *= qfac;
    }
    let (r11, r12, r13) = (r[0][0], r[0][1], r[0][2]);
    let (r21, r22, r23) = (r[1][0], r[1][1], r[1][2]);
    let (r31, r32, r33) = (r[2][0], r[2][1], r[2][2]);
    let trace = r11 + r22 + r33 + 1.0;
    let (a, mut b, mut c, mut d): (f64, f64, f64, f64);
    if trace > 0.5 {
        a = 0.5 * trace.sqrt();
        b = 0.25 * (r32 - r23) / a;
        c = 0.25 * (r13 - r31) / a;
        d = 0.25 * (r21 - r12) / a;
    } else {
        let xd = 1.0 + r11 - (r22 + r33);
        let yd = 1.0 + r22 - (r11 + r33);
        let zd = 1.0 + r33 - (r11 + r22);
        if xd > 1.0 {
            b = 0.5 * xd.sqrt();
            c = 0.25 * (r12 + r21) / b;
            d = 0.25 * (r13 + r31) / b;
            a = 0.25 * (r32 - r23) / b;
        } else if yd > 1.0 {
            c = 0.5 * yd.sqrt();
            b = 0.25 * (r12 + r21) / c;
            d = 0.25 * (r23 + r32) / c;
            a = 0.25 * (r13 - r31) / c;
        } else {
            d = 0.5 * zd.sqrt();
            b = 0.25 * (r13 + r31) / d;
            c = 0.25 * (r23 + r32) / d;
            a = 0.25 * (r21 - r12) / d;
        }
        if a < 0.0 {
            b = -b;
            c = -c;
            d = -d;
        }
    }
    ([b, c, d], qfac)
}

fn decode_values(h: &Header, data: &[u8]) -> Result<Vec<f64>> {
    let n = h.geometry.voxel_count();
    let need = n * h.datatype.size();
    if data.len() < need {
        return Err(Error::MalformedHeader(format!(
            "voxel data truncated: need {need} bytes, have {}",
            data.len()
        )));
    }
    let data = &data[..need];
    let mut out = Vec::with_capacity(n);
    macro_rules! decode {
        ($B:ty) => {{
            for chunk in data.chunks_exact(h.datatype.size()) {
                out.push(match h.datatype {
                    DataType::U8 => chunk[0] as f64,
                    DataType::I8 => chunk[0] as i8 as f64,
                    DataType::I16 => <$B>::read_i16(chunk) as f64,
                    DataType::U16 => <$B>::read_u16(chunk) as f64,
                    DataType::I32 => <$B>::read_i32(chunk) as f64,
                    DataType::U32 => <$B>::read_u32(chunk) as f64,
                    DataType::I64 => <$B>::read_i64(chunk) as f64,
                    DataType::U64 => <$B>::read_u64(chunk) as f64,
                    DataType::F32 => <$B>::read_f32(chunk) as f64,
                    DataType::F64 => <$B>::read_f64(chunk),
                });
            }
        }};
    }
    if h.big_endian {
        decode!(BigEndian)
    } else {
        decode!(LittleEndian)
    }
    if h.slope != 0.0 && h.slope.is_finite() && !(h.slope == 1.0 && h.inter == 0.0) {
        for v in &mut out {
            *v = *v * h.slope + h.inter;
        }
    }
    Ok(out)
}

fn descrip_field<'a>(descrip: &'a str, key: &str) -> Option<&'a str> {
    descrip
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v)
}

/// Reads a 3D scalar volume. Modality and unit come from the description
/// field written by [`write_volume`]; files from other tools default to PET
/// in SUV (use [`ImageVolume::with_modality`] to override).
pub fn read_volume<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageVolume<T>> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let h = parse_header(&bytes)?;
    let values = decode_values(&h, &bytes[h.vox_offset.min(bytes.len())..])?;
    let bad = values.iter().filter(|v| !v.is_finite()).count();
    if bad > 0 {
        return Err(Error::NonFiniteVoxels { count: bad });
    }
    let modality = match descrip_field(&h.descrip, "modality") {
        Some("CT") => Modality::Ct,
        _ => Modality::Pet,
    };
    let unit = match descrip_field(&h.descrip, "unit") {
        Some("HU") => IntensityUnit::Hu,
        Some("SUV") => IntensityUnit::Suv,
        Some("normalized") => IntensityUnit::Normalized,
        _ => modality.native_unit(),
    };
    let voxels = values.into_iter().map(T::of).collect();
    ImageVolume::new(h.geometry, voxels, modality, unit)
}

/// Reads an integer label volume. Float files are accepted when every value
/// is a non-negative integer that fits a [`LabelId`].
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let bytes = read_all(path)?;
    let h = parse_header(&bytes)?;
    let values = decode_values(&h, &bytes[h.vox_offset.min(bytes.len())..])?;
    let mut labels = Vec::with_capacity(values.len());
    for v in values {
        if !v.is_finite() {
            return Err(Error::NonFiniteVoxels { count: 1 });
        }
        if v < 0.0 || v.fract() != 0.0 || v > LabelId::MAX as f64 {
            return Err(Error::MalformedHeader(format!("label file {} holds non-label value {v}", path.display())));
        }
        labels.push(v as LabelId);
    }
    let schema = descrip_field(&h.descrip, "schema").unwrap_or(LabelSchema::DEFAULT_ID);
    LabelVolume::new(h.geometry, labels, schema)
}

/// Anything that can be written as a NIfTI-1 volume.
pub trait NiftiVolume {
    fn geometry(&self) -> &Geometry;
    fn descrip(&self) -> String;
    fn datatype_code(&self) -> i16;
    fn encode_voxels(&self, out: &mut Vec<u8>);
}

impl<T: Scalar> NiftiVolume for ImageVolume<T> {
    fn geometry(&self) -> &Geometry {
        ImageVolume::geometry(self)
    }

    fn descrip(&self) -> String {
        format!(
            "tracerseg modality={} unit={}",
            self.modality().as_str(),
            self.unit().as_str()
        )
    }

    fn datatype_code(&self) -> i16 {
        T::NIFTI_DATATYPE
    }

    fn encode_voxels(&self, out: &mut Vec<u8>) {
        out.reserve(self.voxels().len() * T::BYTES);
        for &v in self.voxels() {
            if T::BYTES == 4 {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
    }
}

impl LabelVolume {
    fn disk_type(&self) -> DataType {
        if self.labels().iter().all(|&l| l <= u8::MAX as LabelId) {
            DataType::U8
        } else {
            DataType::U16
        }
    }
}

impl NiftiVolume for LabelVolume {
    fn geometry(&self) -> &Geometry {
        LabelVolume::geometry(self)
    }

    fn descrip(&self) -> String {
        format!("tracerseg labels schema={}", self.schema_id())
    }

    fn datatype_code(&self) -> i16 {
        self.disk_type().code()
    }

    fn encode_voxels(&self, out: &mut Vec<u8>) {
        match self.disk_type() {
            DataType::U8 => out.extend(self.labels().iter().map(|&l| l as u8)),
            _ => {
                for &l in self.labels() {
                    out.extend_from_slice(&l.to_le_bytes());
                }
            }
        }
    }
}

fn encode_header(g: &Geometry, datatype: DataType, descrip: &str, with_sform: bool) -> Vec<u8> {
    let comment = format!(
        "{GEOMETRY_TAG}\nspacing {} {} {}\norigin {} {} {}\n",
        g.spacing[0], g.spacing[1], g.spacing[2], g.origin[0], g.origin[1], g.origin[2]
    );
    let esize = (8 + comment.len() + 1).div_ceil(16) * 16;
    let vox_offset = HEADER_SIZE + 4 + esize;

    let mut h = vec![0u8; vox_offset];
    type E = LittleEndian;
    E::write_i32(&mut h[0..], HEADER_SIZE as i32);
    h[38] = b'r';
    E::write_i16(&mut h[off::DIM..], 3);
    for d in 0..3 {
        E::write_i16(&mut h[off::DIM + 2 * (d + 1)..], g.dims[d] as i16);
    }
    for d in 4..8 {
        E::write_i16(&mut h[off::DIM + 2 * d..], 1);
    }
    E::write_i16(&mut h[off::DATATYPE..], datatype.code());
    E::write_i16(&mut h[off::BITPIX..], (datatype.size() * 8) as i16);

    let mut dir = [[0.0f64; 3]; 3];
    for (d, a) in g.orientation.0.iter().enumerate() {
        dir[a.world_axis as usize][d] = a.sign();
    }
    let (quat, qfac) = matrix_to_quaternion(dir);
    E::write_f32(&mut h[off::PIXDIM..], qfac as f32);
    for d in 0..3 {
        E::write_f32(&mut h[off::PIXDIM + 4 * (d + 1)..], g.spacing[d] as f32);
    }
    E::write_f32(&mut h[off::VOX_OFFSET..], vox_offset as f32);
    E::write_f32(&mut h[off::SCL_SLOPE..], if datatype.is_float() { 0.0 } else { 1.0 });
    E::write_f32(&mut h[off::SCL_INTER..], 0.0);
    h[off::XYZT_UNITS] = 2; // millimeters
    let d = descrip.as_bytes();
    let n = d.len().min(79);
    h[off::DESCRIP..off::DESCRIP + n].copy_from_slice(&d[..n]);

    E::write_i16(&mut h[off::QFORM_CODE..], 1);
    E::write_i16(&mut h[off::SFORM_CODE..], if with_sform { 1 } else { 0 });
    for (i, q) in quat.iter().enumerate() {
        E::write_f32(&mut h[off::QUATERN_B + 4 * i..], *q as f32);
    }
    for i in 0..3 {
        E::write_f32(&mut h[off::QOFFSET_X + 4 * i..], g.origin[i] as f32);
    }
    if with_sform {
        for r in 0..3 {
            let base = off::SROW_X + 16 * r;
            for c in 0..3 {
                E::write_f32(&mut h[base + 4 * c..], (dir[r][c] * g.spacing[c]) as f32);
            }
            E::write_f32(&mut h[base + 12..], g.origin[r] as f32);
        }
    }
    h[off::MAGIC..off::MAGIC + 4].copy_from_slice(MAGIC);

    h[HEADER_SIZE] = 1;
    let ext = HEADER_SIZE + 4;
    E::write_i32(&mut h[ext..], esize as i32);
    E::write_i32(&mut h[ext + 4..], ECODE_COMMENT);
    h[ext + 8..ext + 8 + comment.len()].copy_from_slice(comment.as_bytes());
    h
}

fn write_impl<V: NiftiVolume + ?Sized>(vol: &V, path: &Path, with_sform: bool) -> Result<()> {
    let datatype = DataType::from_code(vol.datatype_code())?;
    let mut bytes = encode_header(vol.geometry(), datatype, &vol.descrip(), with_sform);
    vol.encode_voxels(&mut bytes);

    let file = File::create(path).map_err(|e| Error::write_io(path, e))?;
    let gz = path
        .file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.ends_with(".gz"));
    let mut w = BufWriter::new(file);
    if gz {
        let mut enc = GzEncoder::new(w, Compression::new(6));
        enc.write_all(&bytes).map_err(|e| Error::write_io(path, e))?;
        w = enc.finish().map_err(|e| Error::write_io(path, e))?;
    } else {
        w.write_all(&bytes).map_err(|e| Error::write_io(path, e))?;
    }
    w.flush().map_err(|e| Error::write_io(path, e))
}

/// Writes an image or label volume. A `.gz` suffix selects gzip compression.
/// Images keep their in-memory float width; labels are stored as `u8` when
/// every value fits, else `u16`.
pub fn write_volume<V: NiftiVolume + ?Sized>(vol: &V, path: impl AsRef<Path>) -> Result<()> {
    write_impl(vol, path.as_ref(), true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(orientation: Orientation) -> ImageVolume<f64> {
        let g = Geometry::new([4, 4, 4], [0.1, 2.0, 3.3], [-12.7, 0.3, 101.9], orientation).unwrap();
        ImageVolume::from_fn(g, Modality::Pet, |i, j, k| (i as f64).sin() + 0.37 * j as f64 - k as f64 / 3.0).unwrap()
    }

    #[test]
    fn round_trip_identity_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample(Orientation::RAS);
        for name in ["a.nii", "a.nii.gz"] {
            let p = dir.path().join(name);
            write_volume(&v, &p).unwrap();
            let back: ImageVolume<f64> = read_volume(&p).unwrap();
            assert_eq!(back, v);
        }
    }

    #[test]
    fn f32_volume_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v: ImageVolume<f32> = sample(Orientation::RAS).cast();
        let p = dir.path().join("f.nii");
        write_volume(&v, &p).unwrap();
        assert_eq!(read_volume::<f32>(&p).unwrap(), v);
    }

    #[test]
    fn spacing_passthrough() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::canonical([2, 3, 4], [2.0, 2.0, 3.0]).unwrap();
        let v = ImageVolume::filled(g, 1.0f64, Modality::Ct).unwrap();
        let p = dir.path().join("s.nii.gz");
        write_volume(&v, &p).unwrap();
        let back: ImageVolume<f64> = read_volume(&p).unwrap();
        assert_eq!(back.geometry().spacing, [2.0, 2.0, 3.0]);
        assert_eq!(back.modality(), Modality::Ct);
        assert_eq!(back.unit(), IntensityUnit::Hu);
    }

    #[test]
    fn nan_voxel_rejected() {
        let v = sample(Orientation::RAS);
        let mut bytes = encode_header(v.geometry(), DataType::F64, "", true);
        v.encode_voxels(&mut bytes);
        let start = bytes.len() - 8;
        bytes[start..].copy_from_slice(&f64::NAN.to_le_bytes());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.nii");
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_volume::<f64>(&p), Err(Error::NonFiniteVoxels { count: 1 })));
    }

    #[test]
    fn labels_keep_integer_values() {
        let dir = tempfile::tempdir().unwrap();
        let g = Geometry::canonical([3, 1, 1], [2.0; 3]).unwrap();
        let lv = LabelVolume::new(g, vec![0, 1, 5], "default").unwrap();
        let p = dir.path().join("l.nii.gz");
        write_volume(&lv, &p).unwrap();
        let back = read_labels(&p).unwrap();
        assert_eq!(back.label_set(), vec![0, 1, 5]);
        assert_eq!(back, lv);

        let wide = LabelVolume::new(lv.geometry().clone(), vec![0, 300, 7], "default").unwrap();
        write_volume(&wide, &p).unwrap();
        assert_eq!(read_labels(&p).unwrap(), wide);
    }

    #[test]
    fn missing_file_and_unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_volume::<f64>(dir.path().join("nope.nii")),
            Err(Error::FileNotFound(_))
        ));
        let v = sample(Orientation::RAS);
        assert!(matches!(
            write_volume(&v, dir.path().join("missing/dir/x.nii")),
            Err(Error::IoFailure { .. })
        ));
    }

    #[test]
    fn garbage_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.nii");
        std::fs::write(&p, vec![7u8; 400]).unwrap();
        assert!(matches!(read_volume::<f64>(&p), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn every_orientation_survives_sform_and_qform() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.nii");
        for o in Orientation::all() {
            let v = sample(o);
            for with_sform in [true, false] {
                write_impl(&v, &p, with_sform).unwrap();
                let back: ImageVolume<f64> = read_volume(&p).unwrap();
                assert_eq!(back.geometry().orientation, o, "sform={with_sform}");
                assert_eq!(back, v);
            }
        }
    }

    #[test]
    fn header_without_extension_uses_f32_geometry() {
        let v = sample(Orientation::RAS);
        let mut bytes = encode_header(v.geometry(), DataType::F64, "", true);
        // drop the extension flag; readers must fall back to header floats
        bytes[HEADER_SIZE] = 0;
        v.encode_voxels(&mut bytes);
        let h = parse_header(&bytes).unwrap();
        assert_eq!(h.geometry.spacing[0], 0.1f32 as f64);
        assert_eq!(h.geometry.origin[2], 101.9f32 as f64);
    }
}
