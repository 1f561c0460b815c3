//! Little-endian IF cube container.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "VIMO"
//!      4     4  version (u32)
//!      8     4  M, frames (u32)
//!     12     4  K, samples per chirp (u32)
//!     16     8  frame_rate (f64)
//!     24     8  f_min (f64)
//!     32     8  bandwidth (f64)
//!     40     8  chirp_duration (f64)
//!     48    16  reserved (writers store a provenance tag, readers ignore it)
//!     64   8MK  M×K samples, row-major, interleaved (f32 re, f32 im)
//! ```

use std::io::{Read, Write};

use num_complex::Complex64;

use super::{IFDataCube, RadarConfig};
use crate::error::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"VIMO";
pub const CUBE_VERSION: u32 = 1;
pub const CUBE_HEADER_LEN: usize = 64;

pub fn write_cube<W: Write>(cube: &IFDataCube, mut w: W, reserved: [u8; 16]) -> Result<()> {
    let cfg = &cube.config;
    let frames = u32::try_from(cfg.n_frames).map_err(|_| Error::Format("too many frames".into()))?;
    let k = u32::try_from(cfg.samples_per_chirp)
        .map_err(|_| Error::Format("too many samples per chirp".into()))?;
    let mut header = Vec::with_capacity(CUBE_HEADER_LEN);
    header.extend_from_slice(CUBE_MAGIC);
    header.extend_from_slice(&CUBE_VERSION.to_le_bytes());
    header.extend_from_slice(&frames.to_le_bytes());
    header.extend_from_slice(&k.to_le_bytes());
    for v in [cfg.frame_rate, cfg.f_min, cfg.bandwidth, cfg.chirp_duration] {
        header.extend_from_slice(&v.to_le_bytes());
    }
    header.extend_from_slice(&reserved);
    debug_assert_eq!(header.len(), CUBE_HEADER_LEN);
    w.write_all(&header)?;

    let mut body = Vec::with_capacity(cube.samples.len() * 8);
    for c in &cube.samples {
        body.extend_from_slice(&(c.re as f32).to_le_bytes());
        body.extend_from_slice(&(c.im as f32).to_le_bytes());
    }
    w.write_all(&body)?;
    Ok(())
}

fn f64_at(buf: &[u8], off: usize) -> f64 {
    f64::from_le_bytes(buf[off..off + 8].try_into().expect("8-byte slice"))
}

fn u32_at(buf: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(buf[off..off + 4].try_into().expect("4-byte slice"))
}

/// Reads a cube; the returned config has `noise_std = 0` since the file does
/// not record it.
pub fn read_cube<R: Read>(mut r: R) -> Result<IFDataCube> {
    let mut header = [0u8; CUBE_HEADER_LEN];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &header[0..4] != CUBE_MAGIC {
        return Err(Error::Format("bad magic, not an IF cube file".into()));
    }
    let version = u32_at(&header, 4);
    if version != CUBE_VERSION {
        return Err(Error::Format(format!("unsupported cube version {version}")));
    }
    let config = RadarConfig {
        n_frames: u32_at(&header, 8) as usize,
        samples_per_chirp: u32_at(&header, 12) as usize,
        frame_rate: f64_at(&header, 16),
        f_min: f64_at(&header, 24),
        bandwidth: f64_at(&header, 32),
        chirp_duration: f64_at(&header, 40),
        noise_std: 0.0,
    };
    config
        .validate()
        .map_err(|e| Error::Format(format!("invalid header: {e}")))?;

    let n = config.n_frames * config.samples_per_chirp;
    let mut body = vec![0u8; n * 8];
    r.read_exact(&mut body)
        .map_err(|e| Error::Format(format!("truncated sample data ({n} samples expected): {e}")))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after sample data".into()));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[0..4].try_into().expect("4 bytes"));
            let im = f32::from_le_bytes(c[4..8].try_into().expect("4 bytes"));
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    IFDataCube::new(samples, config).map_err(|e| Error::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cube() -> IFDataCube {
        let cfg = RadarConfig {
            n_frames: 3,
            samples_per_chirp: 4,
            ..RadarConfig::default()
        };
        let samples = (0..12).map(|i| Complex64::new(i as f64, -0.5 * i as f64)).collect();
        IFDataCube::new(samples, cfg).unwrap()
    }

    #[test]
    fn header_layout_is_fixed() {
        let mut buf = Vec::new();
        write_cube(&small_cube(), &mut buf, [7u8; 16]).unwrap();
        assert_eq!(buf.len(), 64 + 12 * 8);
        assert_eq!(&buf[0..4], b"VIMO");
        assert_eq!(u32_at(&buf, 4), 1);
        assert_eq!(u32_at(&buf, 8), 3);
        assert_eq!(u32_at(&buf, 12), 4);
        assert_eq!(f64_at(&buf, 16), 20.0);
        assert_eq!(f64_at(&buf, 24), 60e9);
        assert_eq!(&buf[48..64], &[7u8; 16]);
        assert_eq!(f32::from_le_bytes(buf[72..76].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(buf[76..80].try_into().unwrap()), -0.5);
    }

    #[test]
    fn read_back() {
        let cube = small_cube();
        let mut buf = Vec::new();
        write_cube(&cube, &mut buf, [0; 16]).unwrap();
        let back = read_cube(&buf[..]).unwrap();
        assert_eq!(back.samples, cube.samples);
        assert_eq!(back.config.n_frames, 3);
    }

    #[test]
    fn corrupt_inputs_are_format_errors() {
        let mut buf = Vec::new();
        write_cube(&small_cube(), &mut buf, [0; 16]).unwrap();
        assert!(matches!(read_cube(&buf[..40]), Err(Error::Format(_))));
        assert!(matches!(read_cube(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_cube(&bad[..]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read_cube(&bad[..]), Err(Error::Format(_))));
        let mut long = buf;
        long.push(0);
        assert!(matches!(read_cube(&long[..]), Err(Error::Format(_))));
    }
}
