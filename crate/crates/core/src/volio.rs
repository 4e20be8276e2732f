//! NIfTI-1 single-file volumes (`.nii`, `.nii.gz`) and a raw float32 debug format.
//!
//! Only little-endian NIfTI-1 with datatype uint8, int16 or float32 is read.
//! Orientation fields (qform/sform) are not interpreted; geometry comes from
//! `pixdim`. When a header read from disk is passed back as a template for
//! writing, its orientation fields are copied through unchanged.
//!
//! Concurrent writes to the same path are not synchronised.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask3, GridShape, Volume3};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";

// Byte offsets into the NIfTI-1 header.
const OFF_DIM: usize = 40;
const OFF_DATATYPE: usize = 70;
const OFF_BITPIX: usize = 72;
const OFF_PIXDIM: usize = 76;
const OFF_VOX_OFFSET: usize = 108;
const OFF_SCL_SLOPE: usize = 112;
const OFF_SCL_INTER: usize = 116;
const OFF_XYZT_UNITS: usize = 123;
const OFF_CAL_MAX: usize = 124;
const OFF_CAL_MIN: usize = 128;
const OFF_SFORM_CODE: usize = 254;
const OFF_SROW_X: usize = 280;
const OFF_MAGIC: usize = 344;

/// On-disk voxel type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    Uint8,
    Int16,
    Float32,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Float32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(DataType::Uint8),
            4 => Ok(DataType::Int16),
            16 => Ok(DataType::Float32),
            other => Err(Error::Unsupported(format!("NIfTI datatype code {other}"))),
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::Uint8 => 1,
            DataType::Int16 => 2,
            DataType::Float32 => 4,
        }
    }
}

/// Geometry and storage description of a volume file.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub datatype: DataType,
    pub scl_slope: f32,
    pub scl_inter: f32,
    /// Header bytes as read from disk, kept for passthrough of orientation fields.
    raw: Option<Box<[u8; HEADER_SIZE]>>,
}

impl VolumeHeader {
    pub fn shape(&self) -> Result<GridShape> {
        GridShape::new(self.dims, self.spacing)
    }

    /// Effective slope; NIfTI treats a stored 0 as "no scaling".
    fn slope(&self) -> f64 {
        if self.scl_slope == 0.0 || !self.scl_slope.is_finite() {
            1.0
        } else {
            self.scl_slope as f64
        }
    }

    fn inter(&self) -> f64 {
        if self.scl_slope == 0.0 || !self.scl_inter.is_finite() {
            0.0
        } else {
            self.scl_inter as f64
        }
    }
}

/// How a volume is stored by [`write_volume`].
#[derive(Debug, Clone, Default)]
pub struct WriteOptions<'a> {
    /// Storage type; float32 when unset.
    pub datatype: Option<DataType>,
    /// Scaling applied on read as `raw * slope + inter`; identity when unset.
    pub scaling: Option<(f32, f32)>,
    /// Header whose orientation fields are copied into the output.
    pub template: Option<&'a VolumeHeader>,
}

fn is_gzip_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"))
}

fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(with_path(path))?;
    let mut bytes = Vec::new();
    if is_gzip_path(path) {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut bytes)?;
    } else {
        BufReader::new(file).read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(with_path(path))?;
    if is_gzip_path(path) {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?.flush()?;
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes)?;
        w.flush()?;
    }
    Ok(())
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

fn put_i16(b: &mut [u8], off: usize, v: i16) {
    b[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_i32(b: &mut [u8], off: usize, v: i32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(b: &mut [u8], off: usize, v: f32) {
    b[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn parse_header(bytes: &[u8]) -> Result<(VolumeHeader, usize)> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!("file has {} bytes, header needs {HEADER_SIZE}", bytes.len())));
    }
    let sizeof_hdr = i32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if i32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) == HEADER_SIZE as i32 {
            return Err(Error::Unsupported("big-endian NIfTI".into()));
        }
        if sizeof_hdr == 540 {
            return Err(Error::Unsupported("NIfTI-2".into()));
        }
        return Err(Error::Format(format!("sizeof_hdr is {sizeof_hdr}, expected {HEADER_SIZE}")));
    }
    let magic = &bytes[OFF_MAGIC..OFF_MAGIC + 4];
    if magic == b"ni1\0" {
        return Err(Error::Unsupported("split .hdr/.img NIfTI pairs".into()));
    }
    if magic != MAGIC_SINGLE {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }

    let ndim = i16_at(bytes, OFF_DIM);
    if !(1..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim}")));
    }
    let mut dims = [1usize; 3];
    for k in 1..=ndim as usize {
        let d = i16_at(bytes, OFF_DIM + 2 * k);
        if d < 1 {
            return Err(Error::Format(format!("dim[{k}] = {d}")));
        }
        if k <= 3 {
            dims[k - 1] = d as usize;
        } else if d != 1 {
            return Err(Error::Unsupported(format!("non-singleton dimension {k} of size {d}")));
        }
    }
    let mut spacing = [1.0f64; 3];
    for (k, s) in spacing.iter_mut().enumerate() {
        if k < ndim as usize {
            let p = f32_at(bytes, OFF_PIXDIM + 4 * (k + 1));
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Format(format!("pixdim[{}] = {p}", k + 1)));
            }
            *s = p as f64;
        }
    }
    let datatype = DataType::from_code(i16_at(bytes, OFF_DATATYPE))?;
    let vox_offset = f32_at(bytes, OFF_VOX_OFFSET);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::Format(format!("vox_offset = {vox_offset}")));
    }
    let mut raw = Box::new([0u8; HEADER_SIZE]);
    raw.copy_from_slice(&bytes[..HEADER_SIZE]);
    let header = VolumeHeader {
        dims,
        spacing,
        datatype,
        scl_slope: f32_at(bytes, OFF_SCL_SLOPE),
        scl_inter: f32_at(bytes, OFF_SCL_INTER),
        raw: Some(raw),
    };
    Ok((header, vox_offset as usize))
}

fn decode_values(bytes: &[u8], header: &VolumeHeader, offset: usize) -> Result<Vec<f64>> {
    let n = header.dims.iter().product::<usize>();
    let width = header.datatype.bytes();
    let end = offset + n * width;
    if bytes.len() < end {
        return Err(Error::Format(format!("voxel data truncated: {} of {end} bytes", bytes.len())));
    }
    let body = &bytes[offset..end];
    let (slope, inter) = (header.slope(), header.inter());
    let raw: Vec<f64> = match header.datatype {
        DataType::Uint8 => body.iter().map(|&b| b as f64).collect(),
        DataType::Int16 => body.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]]) as f64).collect(),
        DataType::Float32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
    };
    if slope == 1.0 && inter == 0.0 {
        Ok(raw)
    } else {
        Ok(raw.into_iter().map(|v| v * slope + inter).collect())
    }
}

/// Reads a NIfTI-1 file as a scalar volume, applying `scl_slope`/`scl_inter`.
pub fn read_volume(path: impl AsRef<Path>) -> Result<(Volume3, VolumeHeader)> {
    let bytes = read_all(path.as_ref())?;
    let (header, offset) = parse_header(&bytes)?;
    let values = decode_values(&bytes, &header, offset)?;
    let vol = Volume3::new(header.shape()?, values.into_iter().map(|v| v as f32).collect())?;
    Ok((vol, header))
}

/// Reads a NIfTI-1 file as a binary mask; every scaled value must round to 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<(BinaryMask3, VolumeHeader)> {
    let bytes = read_all(path.as_ref())?;
    let (header, offset) = parse_header(&bytes)?;
    let values = decode_values(&bytes, &header, offset)?;
    let data = values
        .into_iter()
        .map(|v| match v.round() {
            r if r == 0.0 => Ok(false),
            r if r == 1.0 => Ok(true),
            _ => Err(Error::MaskDomain(v)),
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok((BinaryMask3::new(header.shape()?, data)?, header))
}

fn build_header(shape: &GridShape, datatype: DataType, slope: f32, inter: f32, template: Option<&VolumeHeader>) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let from_template = template.and_then(|t| t.raw.as_deref());
    match from_template {
        Some(raw) => h[..HEADER_SIZE].copy_from_slice(raw),
        None => {
            // Axis-aligned sform carrying the spacing, millimetre units.
            let sp = shape.spacing();
            put_i16(&mut h, OFF_SFORM_CODE, 2);
            for (row, s) in sp.iter().enumerate() {
                put_f32(&mut h, OFF_SROW_X + 16 * row + 4 * row, *s as f32);
            }
            h[OFF_XYZT_UNITS] = 2;
        }
    }
    put_i32(&mut h, 0, HEADER_SIZE as i32);
    let dims = shape.dims();
    put_i16(&mut h, OFF_DIM, 3);
    for k in 0..7 {
        let d = if k < 3 { dims[k] as i16 } else { 1 };
        put_i16(&mut h, OFF_DIM + 2 * (k + 1), d);
    }
    put_i16(&mut h, OFF_DATATYPE, datatype.code());
    put_i16(&mut h, OFF_BITPIX, (datatype.bytes() * 8) as i16);
    if from_template.is_none() {
        put_f32(&mut h, OFF_PIXDIM, 1.0);
    }
    let sp = shape.spacing();
    for k in 0..7 {
        let p = if k < 3 { sp[k] as f32 } else { 1.0 };
        put_f32(&mut h, OFF_PIXDIM + 4 * (k + 1), p);
    }
    put_f32(&mut h, OFF_VOX_OFFSET, VOX_OFFSET as f32);
    put_f32(&mut h, OFF_SCL_SLOPE, slope);
    put_f32(&mut h, OFF_SCL_INTER, inter);
    put_f32(&mut h, OFF_CAL_MAX, 0.0);
    put_f32(&mut h, OFF_CAL_MIN, 0.0);
    h[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(MAGIC_SINGLE);
    // Bytes 348..352 stay zero: no header extensions.
    h
}

fn check_dims_fit(shape: &GridShape) -> Result<()> {
    if shape.dims().iter().any(|&d| d > i16::MAX as usize) {
        return Err(Error::Unsupported(format!("dimensions {:?} exceed NIfTI-1 limits", shape.dims())));
    }
    Ok(())
}

/// Writes a scalar volume as NIfTI-1; gzip-compressed when the path ends in `.gz`.
pub fn write_volume(path: impl AsRef<Path>, v: &Volume3, opts: &WriteOptions<'_>) -> Result<()> {
    check_dims_fit(v.shape())?;
    let datatype = opts.datatype.unwrap_or(DataType::Float32);
    let (slope, inter) = opts.scaling.unwrap_or((1.0, 0.0));
    if !(slope.is_finite() && slope != 0.0 && inter.is_finite()) {
        return Err(Error::Parameter(format!("scaling slope {slope}, intercept {inter}")));
    }
    let mut bytes = build_header(v.shape(), datatype, slope, inter, opts.template);
    bytes.reserve(v.data().len() * datatype.bytes());
    let stored = v.data().iter().map(|&x| (x as f64 - inter as f64) / slope as f64);
    match datatype {
        DataType::Float32 => {
            for s in stored {
                bytes.extend_from_slice(&(s as f32).to_le_bytes());
            }
        }
        DataType::Int16 => {
            for s in stored {
                let r = s.round();
                if !(i16::MIN as f64..=i16::MAX as f64).contains(&r) {
                    return Err(Error::Domain(format!("value {s} does not fit int16 storage")));
                }
                bytes.extend_from_slice(&(r as i16).to_le_bytes());
            }
        }
        DataType::Uint8 => {
            for s in stored {
                let r = s.round();
                if !(0.0..=255.0).contains(&r) {
                    return Err(Error::Domain(format!("value {s} does not fit uint8 storage")));
                }
                bytes.push(r as u8);
            }
        }
    }
    write_all(path.as_ref(), &bytes)
}

/// Writes a mask as uint8 NIfTI-1 (0/1 values, identity scaling).
pub fn write_mask(path: impl AsRef<Path>, m: &BinaryMask3, template: Option<&VolumeHeader>) -> Result<()> {
    check_dims_fit(m.shape())?;
    let mut bytes = build_header(m.shape(), DataType::Uint8, 1.0, 0.0, template);
    bytes.extend(m.data().iter().map(|&b| b as u8));
    write_all(path.as_ref(), &bytes)
}

/// JSON sidecar of the raw debug format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: String,
}

fn sidecar_path(raw_path: &Path) -> std::path::PathBuf {
    raw_path.with_extension("json")
}

/// Writes `<path>` as little-endian float32 values and `<path minus .raw>.json` as the sidecar.
pub fn write_raw(path: impl AsRef<Path>, v: &Volume3) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(v.data().len() * 4);
    for x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_all(path, &bytes)?;
    let sidecar = RawSidecar {
        dims: v.shape().dims(),
        spacing: v.shape().spacing(),
        dtype: "float32".into(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<Volume3> {
    let path = path.as_ref();
    let sidecar: RawSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)
        .map_err(|e| Error::Format(format!("raw sidecar: {e}")))?;
    if sidecar.dtype != "float32" {
        return Err(Error::Unsupported(format!("raw dtype {}", sidecar.dtype)));
    }
    let shape = GridShape::new(sidecar.dims, sidecar.spacing)?;
    let bytes = std::fs::read(path)?;
    if bytes.len() != shape.len() * 4 {
        return Err(Error::Format(format!("raw file has {} bytes, expected {}", bytes.len(), shape.len() * 4)));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume3::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_volume(shape: GridShape, mut state: u64) -> Volume3 {
        let data = (0..shape.len())
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f32 / (1u64 << 31) as f32) * 2000.0 - 1000.0
            })
            .collect();
        Volume3::new(shape, data).unwrap()
    }

    #[test]
    fn float_roundtrip_plain_and_gzip() {
        let dir = tempfile::tempdir().unwrap();
        let shape = GridShape::new([8, 8, 8], [0.7, 0.8, 1.25]).unwrap();
        let v = lcg_volume(shape, 42);
        for name in ["v.nii", "v.nii.gz"] {
            let p = dir.path().join(name);
            write_volume(&p, &v, &WriteOptions::default()).unwrap();
            let (back, header) = read_volume(&p).unwrap();
            assert_eq!(back.data(), v.data());
            assert_eq!(header.datatype, DataType::Float32);
            for k in 0..3 {
                assert!((back.shape().spacing()[k] - shape.spacing()[k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn float_payload_is_raw_ieee_le() {
        let dir = tempfile::tempdir().unwrap();
        let shape = GridShape::isotropic([3, 2, 1]).unwrap();
        let v = Volume3::new(shape, vec![1.5, -2.0, 0.0, 3.25, 1e-3, -7.0]).unwrap();
        let p = dir.path().join("v.nii");
        write_volume(&p, &v, &WriteOptions::default()).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(bytes.len(), VOX_OFFSET + 6 * 4);
        assert_eq!(i32::from_le_bytes(bytes[0..4].try_into().unwrap()), 348);
        assert_eq!(f32_at(&bytes, OFF_VOX_OFFSET), 352.0);
        assert_eq!(&bytes[OFF_MAGIC..OFF_MAGIC + 4], b"n+1\0");
        let expected: Vec<u8> = v.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        assert_eq!(&bytes[VOX_OFFSET..], expected.as_slice());
    }

    #[test]
    fn mask_roundtrip_is_uint8() {
        let dir = tempfile::tempdir().unwrap();
        let shape = GridShape::isotropic([5, 4, 3]).unwrap();
        let m = BinaryMask3::from_fn(shape, |[x, y, z]| (x + y * z) % 3 == 0);
        let p = dir.path().join("m.nii.gz");
        write_mask(&p, &m, None).unwrap();
        let (back, header) = read_mask(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.datatype, DataType::Uint8);
    }

    #[test]
    fn int16_with_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let shape = GridShape::isotropic([4, 1, 1]).unwrap();
        let v = Volume3::new(shape, vec![-1024.0, 0.0, 40.0, 3000.0]).unwrap();
        let p = dir.path().join("ct.nii");
        let opts = WriteOptions { datatype: Some(DataType::Int16), scaling: Some((2.0, -24.0)), template: None };
        write_volume(&p, &v, &opts).unwrap();
        let (back, h) = read_volume(&p).unwrap();
        assert_eq!(back.data(), v.data());
        assert_eq!(h.scl_slope, 2.0);
        assert_eq!(h.scl_inter, -24.0);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let shape = GridShape::isotropic([2, 2, 2]).unwrap();
        let p = dir.path().join("v.nii");
        write_volume(&p, &Volume3::filled(shape, 1.0), &WriteOptions::default()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[OFF_MAGIC] = b'x';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_datatype_and_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let shape = GridShape::isotropic([2, 2, 2]).unwrap();
        let p = dir.path().join("v.nii");
        write_volume(&p, &Volume3::filled(shape, 1.0), &WriteOptions::default()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        put_i16(&mut bytes, OFF_DATATYPE, 64);
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Unsupported(_))));
        bytes[OFF_MAGIC..OFF_MAGIC + 4].copy_from_slice(b"ni1\0");
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn non_binary_mask_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let shape = GridShape::isotropic([3, 1, 1]).unwrap();
        let p = dir.path().join("m.nii");
        write_volume(&p, &Volume3::new(shape, vec![0.0, 1.0, 2.0]).unwrap(), &WriteOptions::default()).unwrap();
        assert!(matches!(read_mask(&p), Err(Error::MaskDomain(v)) if v == 2.0));
    }

    #[test]
    fn unwritable_directory_fails() {
        let shape = GridShape::isotropic([2, 2, 2]).unwrap();
        let err = write_volume("/nonexistent-dir/x/v.nii", &Volume3::filled(shape, 0.0), &WriteOptions::default());
        assert!(matches!(err, Err(Error::Io(_))));
    }

    #[test]
    fn template_orientation_is_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let shape = GridShape::new([2, 3, 4], [1.0, 1.0, 2.0]).unwrap();
        let p = dir.path().join("a.nii");
        write_volume(&p, &Volume3::filled(shape, 1.0), &WriteOptions::default()).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        // Arbitrary qform quaternion and offset.
        put_i16(&mut bytes, 252, 1);
        put_f32(&mut bytes, 256, 0.25);
        put_f32(&mut bytes, 268, -90.5);
        std::fs::write(&p, &bytes).unwrap();
        let (_, header) = read_volume(&p).unwrap();

        let q = dir.path().join("b.nii");
        write_mask(&q, &BinaryMask3::empty(shape), Some(&header)).unwrap();
        let out = std::fs::read(&q).unwrap();
        assert_eq!(&out[252..280], &bytes[252..280]);
        assert_eq!(i16_at(&out, OFF_DATATYPE), 2);
    }

    #[test]
    fn raw_sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let shape = GridShape::new([3, 4, 2], [1.0, 0.5, 2.0]).unwrap();
        let v = lcg_volume(shape, 7);
        let p = dir.path().join("dbg.raw");
        write_raw(&p, &v).unwrap();
        let json = std::fs::read_to_string(dir.path().join("dbg.json")).unwrap();
        assert!(json.contains("\"dtype\": \"float32\""));
        assert_eq!(read_raw(&p).unwrap(), v);
    }
}
