//! Packed binary point clouds: consecutive 16-byte records of four
//! little-endian IEEE-754 f32 values (x, y, z, intensity), the KITTI
//! velodyne layout. The reader widens to f64; the writer narrows, so
//! clouds that originate from f32 data round-trip bit-exactly.

use std::fs;
use std::path::Path;

use crate::geometry::Point3;
use crate::{Error, Result};

pub const POINT_RECORD_BYTES: usize = 16;

pub fn read_point_bin(path: impl AsRef<Path>) -> Result<Vec<Point3>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_points(&bytes).map_err(|reason| Error::malformed(path.display().to_string(), reason))
}

pub fn decode_points(bytes: &[u8]) -> std::result::Result<Vec<Point3>, String> {
    if bytes.len() % POINT_RECORD_BYTES != 0 {
        return Err(format!(
            "length {} is not a multiple of the {POINT_RECORD_BYTES}-byte point record",
            bytes.len()
        ));
    }
    let mut points = Vec::with_capacity(bytes.len() / POINT_RECORD_BYTES);
    for record in bytes.chunks_exact(POINT_RECORD_BYTES) {
        let mut values = [0.0f64; 4];
        for (v, chunk) in values.iter_mut().zip(record.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")) as f64;
        }
        points.push(Point3::new(values[0], values[1], values[2], values[3]));
    }
    Ok(points)
}

pub fn encode_points(points: &[Point3]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(points.len() * POINT_RECORD_BYTES);
    for p in points {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    bytes
}

pub fn write_point_bin(path: impl AsRef<Path>, points: &[Point3]) -> Result<()> {
    fs::write(path, encode_points(points))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_file_is_empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        std::fs::write(&path, b"").unwrap();
        assert!(read_point_bin(&path).unwrap().is_empty());
    }

    #[test]
    fn single_record_decodes() {
        let mut bytes = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let pts = decode_points(&bytes).unwrap();
        assert_eq!(pts, vec![Point3::new(1.0, 2.0, 3.0, 0.5)]);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, [0u8; 17]).unwrap();
        assert!(matches!(
            read_point_bin(&path),
            Err(Error::MalformedInput { .. })
        ));
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let points: Vec<Point3> = (0..10_000)
            .map(|_| {
                // f32-representable coordinates, as produced by the
                // generator and by real sensors.
                Point3::new(
                    rng.random_range(-80.0f32..80.0) as f64,
                    rng.random_range(-80.0f32..80.0) as f64,
                    rng.random_range(-3.0f32..3.0) as f64,
                    rng.random_range(0.0f32..1.0) as f64,
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.bin");
        write_point_bin(&path, &points).unwrap();
        let back = read_point_bin(&path).unwrap();
        assert_eq!(points.len(), back.len());
        for (a, b) in points.iter().zip(&back) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.z.to_bits(), b.z.to_bits());
            assert_eq!(a.intensity.to_bits(), b.intensity.to_bits());
        }
        // Byte-level determinism of the writer.
        let bytes_a = encode_points(&points);
        write_point_bin(&path, &back).unwrap();
        assert_eq!(bytes_a, std::fs::read(&path).unwrap());
    }
}
