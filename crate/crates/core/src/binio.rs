//! Little-endian binary primitives shared by the embedding cache and the
//! checkpoint format.

use std::io::{self, Read, Write};

pub fn write_tag<W: Write>(w: &mut W, tag: &[u8; 4]) -> io::Result<()> {
    w.write_all(tag)
}

pub fn read_tag<R: Read>(r: &mut R) -> io::Result<[u8; 4]> {
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag)?;
    Ok(tag)
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

pub fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn write_f32_slice<W: Write>(w: &mut W, vs: &[f32]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 4);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_f32_vec<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_f64_slice<W: Write>(w: &mut W, vs: &[f64]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_f64_vec<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_are_exact() {
        let mut buf = Vec::new();
        write_tag(&mut buf, b"NMOE").unwrap();
        write_u32(&mut buf, 7).unwrap();
        write_f32_slice(&mut buf, &[1.5, -0.25, f32::MIN_POSITIVE]).unwrap();
        write_f64_slice(&mut buf, &[std::f64::consts::PI, -0.0]).unwrap();
        let mut r = buf.as_slice();
        assert_eq!(&read_tag(&mut r).unwrap(), b"NMOE");
        assert_eq!(read_u32(&mut r).unwrap(), 7);
        assert_eq!(read_f32_vec(&mut r, 3).unwrap(), vec![1.5, -0.25, f32::MIN_POSITIVE]);
        let back = read_f64_vec(&mut r, 2).unwrap();
        assert_eq!(back[0], std::f64::consts::PI);
        assert_eq!(back[0].to_bits(), std::f64::consts::PI.to_bits());
        assert!(back[1] == 0.0 && back[1].is_sign_negative());
        assert!(r.is_empty());
    }

    #[test]
    fn truncated_reads_fail() {
        let buf = [1u8, 2, 3];
        assert!(read_u32(&mut &buf[..]).is_err());
        assert!(read_f64_vec(&mut &buf[..], 1).is_err());
    }
}
