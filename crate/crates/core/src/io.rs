//! SSI1 raster-stack files, CSV fixture import and `key=value` sidecars.
//!
//! SSI1 layout, all integers and floats little-endian:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0  | 4 | magic `SSI1` |
//! | 4  | 2 | format version (u16, = 1) |
//! | 6  | 1 | kind (0 irradiance, 1 clear-sky index, 2 cloud index) |
//! | 7  | 4 | width (u32) |
//! | 11 | 4 | height (u32) |
//! | 15 | 4 | frame count (u32) |
//! | 19 | 8 | t0, Unix seconds (i64) |
//! | 27 | 4 | step seconds (u32) |
//! | 31 | 4 | pixel size in meters (f32) |
//! | 35 | 8 | origin latitude (f64) |
//! | 43 | 8 | origin longitude (f64) |
//! | 51 | .. | frames in time order, each row-major `height x width` f32 |
//!
//! Missing samples are stored as `-1.0e30`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, MapStack, StackKind};
use crate::num::Real;

pub const SSI1_MAGIC: &[u8; 4] = b"SSI1";
pub const SSI1_VERSION: u16 = 1;
pub const SSI1_HEADER_LEN: usize = 51;

/// Reader that knows how many bytes it has consumed, for truncation reports.
struct CountingReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn fill(&mut self, buf: &mut [u8]) -> Result<()> {
        let mut got = 0;
        while got < buf.len() {
            match self.inner.read(&mut buf[got..]) {
                Ok(0) => {
                    return Err(Error::Truncated {
                        offset: self.offset + got as u64,
                        needed: buf.len() - got,
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        self.offset += got as u64;
        Ok(())
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.fill(&mut b)?;
        Ok(b)
    }
}

pub fn read_stack<T: Real>(path: impl AsRef<Path>) -> Result<MapStack<T>> {
    let file = File::open(path.as_ref())?;
    read_stack_from(BufReader::new(file))
}

pub fn read_stack_from<T: Real, R: Read>(reader: R) -> Result<MapStack<T>> {
    let mut r = CountingReader {
        inner: reader,
        offset: 0,
    };
    let magic: [u8; 4] = r.array()?;
    if &magic != SSI1_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected \"SSI1\"", magic)));
    }
    let version = u16::from_le_bytes(r.array()?);
    if version != SSI1_VERSION {
        return Err(Error::Format(format!("unsupported SSI1 version {version}")));
    }
    let [code] = r.array::<1>()?;
    let kind = StackKind::from_code(code).ok_or_else(|| Error::Format(format!("unknown kind tag {code}")))?;
    let width = u32::from_le_bytes(r.array()?) as usize;
    let height = u32::from_le_bytes(r.array()?) as usize;
    let count = u32::from_le_bytes(r.array()?) as usize;
    let t0 = i64::from_le_bytes(r.array()?);
    let step_s = u32::from_le_bytes(r.array()?);
    let pixel_size_m = f32::from_le_bytes(r.array()?);
    let origin_lat = f64::from_le_bytes(r.array()?);
    let origin_lon = f64::from_le_bytes(r.array()?);

    let spec = GridSpec {
        width,
        height,
        pixel_size_m,
        origin_lat,
        origin_lon,
        elevation_m: None,
        t0,
        step_s,
    };
    spec.validate().map_err(|e| Error::Format(format!("invalid header: {e}")))?;

    let cells = width * height;
    let mut buf = vec![0u8; cells * 4];
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        r.fill(&mut buf)?;
        let values: Vec<T> = buf
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                if v.is_missing() {
                    T::missing()
                } else {
                    T::lit(v as f64)
                }
            })
            .collect();
        frames.push(Array2::from_shape_vec((height, width), values).expect("buffer sized to grid"));
    }
    MapStack::new(spec, kind, frames).map_err(|e| Error::Format(format!("invalid payload: {e}")))
}

pub fn write_stack<T: Real>(stack: &MapStack<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write_stack_to(stack, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_stack_to<T: Real, W: Write>(stack: &MapStack<T>, w: &mut W) -> Result<()> {
    let spec = stack.spec();
    let as_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} exceeds u32")))
    };
    w.write_all(SSI1_MAGIC)?;
    w.write_all(&SSI1_VERSION.to_le_bytes())?;
    w.write_all(&[stack.kind().code()])?;
    w.write_all(&as_u32(spec.width, "width")?.to_le_bytes())?;
    w.write_all(&as_u32(spec.height, "height")?.to_le_bytes())?;
    w.write_all(&as_u32(stack.len(), "frame count")?.to_le_bytes())?;
    w.write_all(&spec.t0.to_le_bytes())?;
    w.write_all(&spec.step_s.to_le_bytes())?;
    w.write_all(&spec.pixel_size_m.to_le_bytes())?;
    w.write_all(&spec.origin_lat.to_le_bytes())?;
    w.write_all(&spec.origin_lon.to_le_bytes())?;

    let mut buf = Vec::with_capacity(spec.pixel_count() * 4);
    for frame in stack.frames() {
        buf.clear();
        for v in frame.iter() {
            let x = if v.is_missing() {
                crate::num::MISSING as f32
            } else {
                v.as_f64() as f32
            };
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct CsvSample {
    t: usize,
    i: usize,
    j: usize,
    value: f64,
}

/// Reads a `t,i,j,value` CSV where `t` is the frame index on `spec`'s time
/// axis. Cells that are never mentioned are missing.
pub fn import_csv<T: Real, R: Read>(reader: R, spec: GridSpec, kind: StackKind) -> Result<MapStack<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "i", "j", "value"] {
        return Err(Error::Format(format!("CSV header must be t,i,j,value, got {:?}", headers)));
    }
    let samples: Vec<CsvSample> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    let count = samples.iter().map(|s| s.t + 1).max().unwrap_or(0);
    let mut frames = vec![Array2::from_elem(spec.shape(), T::missing()); count];
    for s in &samples {
        spec.check_pixel(s.i, s.j)?;
        frames[s.t][[s.i, s.j]] = T::lit(s.value);
    }
    MapStack::new(spec, kind, frames)
}

pub fn import_csv_file<T: Real>(path: impl AsRef<Path>, spec: GridSpec, kind: StackKind) -> Result<MapStack<T>> {
    import_csv(File::open(path.as_ref())?, spec, kind)
}

/// `<path>.meta`
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// Writes `key=value` lines next to `path`, in the given order.
pub fn write_sidecar(path: &Path, entries: &[(&str, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        out.push_str(k);
        out.push('=');
        out.push_str(v);
        out.push('\n');
    }
    std::fs::write(sidecar_path(path), out)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(sidecar_path(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Format(format!("sidecar line without '=': {l}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(w: usize, h: usize) -> GridSpec {
        GridSpec::new(w, h, 41.9, 8.7, 1_293_840_000).unwrap()
    }

    fn hand_written_header(kind: u8, w: u32, h: u32, n: u32) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(b"SSI1");
        b.extend_from_slice(&1u16.to_le_bytes());
        b.push(kind);
        b.extend_from_slice(&w.to_le_bytes());
        b.extend_from_slice(&h.to_le_bytes());
        b.extend_from_slice(&n.to_le_bytes());
        b.extend_from_slice(&0i64.to_le_bytes());
        b.extend_from_slice(&3600u32.to_le_bytes());
        b.extend_from_slice(&2500f32.to_le_bytes());
        b.extend_from_slice(&42.0f64.to_le_bytes());
        b.extend_from_slice(&9.0f64.to_le_bytes());
        b
    }

    #[test]
    fn reads_hand_built_constant_stack() {
        let mut bytes = hand_written_header(0, 2, 2, 3);
        assert_eq!(bytes.len(), SSI1_HEADER_LEN);
        for _ in 0..12 {
            bytes.extend_from_slice(&100f32.to_le_bytes());
        }
        let s: MapStack<f64> = read_stack_from(&bytes[..]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.kind(), StackKind::Irradiance);
        assert!(s.frames().iter().all(|f| f.iter().all(|v| *v == 100.0)));
        assert_eq!(s.spec().origin_lat, 42.0);
        assert_eq!(s.spec().pixel_size_m, 2500.0);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = hand_written_header(0, 1, 1, 0);
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_stack_from::<f64, _>(&bytes[..]), Err(Error::Format(_))));
    }

    #[test]
    fn bad_kind_tag() {
        let bytes = hand_written_header(7, 1, 1, 0);
        assert!(matches!(read_stack_from::<f64, _>(&bytes[..]), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let mut bytes = hand_written_header(0, 2, 2, 2);
        bytes.extend_from_slice(&[0u8; 20]);
        match read_stack_from::<f64, _>(&bytes[..]) {
            Err(Error::Truncated { offset, needed }) => {
                assert_eq!(offset, (SSI1_HEADER_LEN + 20) as u64);
                assert_eq!(needed, 12);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn truncated_header() {
        let bytes = hand_written_header(0, 2, 2, 2);
        assert!(matches!(
            read_stack_from::<f64, _>(&bytes[..30]),
            Err(Error::Truncated { offset: 30, needed: 1 })
        ));
    }

    #[test]
    fn file_round_trip_with_missing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.ssi");
        let mut s = MapStack::from_fn(spec(3, 2), StackKind::Irradiance, 4, |t, i, j| (t * 100 + i * 10 + j) as f32)
            .unwrap()
            .into_parts();
        s.2[1][[0, 1]] = f32::missing();
        let s = MapStack::new(s.0, s.1, s.2).unwrap();
        write_stack(&s, &p).unwrap();
        let back: MapStack<f32> = read_stack(&p).unwrap();
        assert_eq!(back, s);
        assert!(back.frame(1)[[0, 1]].is_missing());
    }

    #[test]
    fn csv_fixture_import() {
        let text = "t,i,j,value\n0,0,0,1.5\n1,1,0,2.5\n";
        let s: MapStack<f64> = import_csv(text.as_bytes(), spec(1, 2), StackKind::Irradiance).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.frame(0)[[0, 0]], 1.5);
        assert!(s.frame(0)[[1, 0]].is_missing());
        assert_eq!(s.frame(1)[[1, 0]], 2.5);
    }

    #[test]
    fn csv_rejects_bad_header_and_pixels() {
        assert!(import_csv::<f64, _>("a,b\n".as_bytes(), spec(1, 1), StackKind::Irradiance).is_err());
        let oob = "t,i,j,value\n0,3,0,1\n";
        assert!(matches!(
            import_csv::<f64, _>(oob.as_bytes(), spec(1, 1), StackKind::Irradiance),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ssi");
        write_sidecar(&p, &[("predictor", "persistence".into()), ("seed", "7".into())]).unwrap();
        let kv = read_sidecar(&p).unwrap();
        assert_eq!(kv[0], ("predictor".to_string(), "persistence".to_string()));
        assert_eq!(kv[1].1, "7");
    }

    proptest! {
        #[test]
        fn bytes_round_trip_bit_exact(
            w in 1usize..6,
            h in 1usize..6,
            n in 0usize..4,
            kind in 0u8..3,
            t0 in -1_000_000_000i64..2_000_000_000,
            lat in -80.0f64..80.0,
            vals in prop::collection::vec(0.0f32..2000.0, 150),
        ) {
            let sp = GridSpec::new(w, h, lat, 3.25, t0).unwrap();
            let st = MapStack::from_fn(sp, StackKind::from_code(kind).unwrap(), n, |t, i, j| {
                vals[(t * 37 + i * w + j) % vals.len()]
            }).unwrap();
            let mut bytes = Vec::new();
            write_stack_to(&st, &mut bytes).unwrap();
            prop_assert_eq!(bytes.len(), SSI1_HEADER_LEN + n * w * h * 4);
            let back: MapStack<f32> = read_stack_from(&bytes[..]).unwrap();
            prop_assert_eq!(&back, &st);
            let mut again = Vec::new();
            write_stack_to(&back, &mut again).unwrap();
            prop_assert_eq!(bytes, again);
        }
    }
}
