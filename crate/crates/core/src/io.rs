//! Bit-exact file formats: a small binary container for tensors plus
//! binary PPM (P6) images and PGM (P5) label maps.
//!
//! Tensor container layout, all integers little-endian:
//! `"CRFT" | u32 version=1 | u32 H | u32 W | u32 C | H*W*C f32 values`
//! (row-major, channel-minor, no padding).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Image, LabelMap, Tensor3, DEFAULT_VOID_LABEL};

const TENSOR_MAGIC: &[u8; 4] = b"CRFT";
const TENSOR_VERSION: u32 = 1;

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated(what.to_string())
        } else {
            Error::Io(e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn expect_eof<R: Read>(r: &mut R, what: &str) -> Result<()> {
    let mut b = [0u8; 1];
    match r.read(&mut b) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::UnsupportedFormat(format!(
            "trailing data after {what}"
        ))),
        Err(e) => Err(Error::Io(e)),
    }
}

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor3) -> Result<()> {
    for dim in [t.height(), t.width(), t.channels()] {
        if dim > u32::MAX as usize {
            return Err(Error::DimensionOverflow(format!(
                "dimension {dim} exceeds format limit"
            )));
        }
    }
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&(t.height() as u32).to_le_bytes())?;
    w.write_all(&(t.width() as u32).to_le_bytes())?;
    w.write_all(&(t.channels() as u32).to_le_bytes())?;
    let mut buf = Vec::with_capacity(t.as_slice().len() * 4);
    for v in t.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor3> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic, "tensor magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(TENSOR_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = read_u32(r, "tensor version")?;
    if version != TENSOR_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "tensor version {version}"
        )));
    }
    let h = read_u32(r, "tensor height")? as usize;
    let w = read_u32(r, "tensor width")? as usize;
    let c = read_u32(r, "tensor channels")? as usize;
    // Tensor3 construction re-checks zero dims and element-count overflow,
    // but the payload read below must not allocate on a hostile header.
    let len = Tensor3::new(h, w, c)?.as_slice().len();
    let mut bytes = vec![0u8; len * 4];
    read_exact_or_truncated(r, &mut bytes, "tensor payload")?;
    expect_eof(r, "tensor payload")?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor3::from_vec(h, w, c, data)
}

/// Netpbm header tokenizer: skips whitespace and `#` comments.
fn read_pnm_token<R: Read>(r: &mut R) -> Result<String> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    let mut in_comment = false;
    loop {
        match r.read(&mut byte) {
            Ok(0) => {
                if tok.is_empty() {
                    return Err(Error::Truncated("pnm header".into()));
                }
                return Ok(tok);
            }
            Ok(_) => {}
            Err(e) => return Err(Error::Io(e)),
        }
        let ch = byte[0];
        if in_comment {
            if ch == b'\n' {
                in_comment = false;
            }
            continue;
        }
        if ch == b'#' {
            in_comment = true;
            continue;
        }
        if ch.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(ch as char);
    }
}

fn parse_pnm_dim(tok: &str, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::UnsupportedFormat(format!("bad {what}: {tok:?}")))
}

fn read_pnm_header<R: Read>(r: &mut R, expected_magic: &str) -> Result<(usize, usize)> {
    let magic = read_pnm_token(r)?;
    if magic != expected_magic {
        return Err(Error::BadMagic {
            expected: expected_magic.to_string(),
            found: magic,
        });
    }
    let w = parse_pnm_dim(&read_pnm_token(r)?, "width")?;
    let h = parse_pnm_dim(&read_pnm_token(r)?, "height")?;
    let maxval = parse_pnm_dim(&read_pnm_token(r)?, "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("maxval {maxval}")));
    }
    Ok((h, w))
}

pub fn write_image_ppm<W: Write>(w: &mut W, img: &Image) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width(), img.height())?;
    w.write_all(img.as_slice())?;
    Ok(())
}

pub fn read_image_ppm<R: Read>(r: &mut R) -> Result<Image> {
    let (h, w) = read_pnm_header(r, "P6")?;
    let img = Image::new(h, w)?; // validates dims before the payload allocation
    let mut bytes = vec![0u8; img.as_slice().len()];
    read_exact_or_truncated(r, &mut bytes, "ppm payload")?;
    expect_eof(r, "ppm payload")?;
    Image::from_vec(h, w, bytes)
}

/// Labels are stored as single bytes; non-void labels above 254 do not fit.
pub fn write_labelmap_pgm<W: Write>(w: &mut W, lm: &LabelMap) -> Result<()> {
    let mut bytes = Vec::with_capacity(lm.as_slice().len());
    for &l in lm.as_slice() {
        let b = if l == lm.void_label() {
            255u8
        } else if l < 255 {
            l as u8
        } else {
            return Err(Error::LabelOutOfRange(format!(
                "label {l} does not fit the 8-bit map format"
            )));
        };
        bytes.push(b);
    }
    write!(w, "P5\n{} {}\n255\n", lm.width(), lm.height())?;
    w.write_all(&bytes)?;
    Ok(())
}

pub fn read_labelmap_pgm<R: Read>(r: &mut R) -> Result<LabelMap> {
    read_labelmap_pgm_with_void(r, DEFAULT_VOID_LABEL)
}

pub fn read_labelmap_pgm_with_void<R: Read>(r: &mut R, void_label: u16) -> Result<LabelMap> {
    let (h, w) = read_pnm_header(r, "P5")?;
    let lm = LabelMap::new(h, w, void_label)?;
    let mut bytes = vec![0u8; lm.as_slice().len()];
    read_exact_or_truncated(r, &mut bytes, "pgm payload")?;
    expect_eof(r, "pgm payload")?;
    let labels = bytes.into_iter().map(u16::from).collect();
    LabelMap::from_labels(h, w, labels, void_label)
}

pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<Tensor3> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

pub fn save_tensor<P: AsRef<Path>>(path: P, t: &Tensor3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_image<P: AsRef<Path>>(path: P) -> Result<Image> {
    read_image_ppm(&mut BufReader::new(File::open(path)?))
}

pub fn save_image<P: AsRef<Path>>(path: P, img: &Image) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_image_ppm(&mut w, img)?;
    w.flush()?;
    Ok(())
}

pub fn load_labelmap<P: AsRef<Path>>(path: P) -> Result<LabelMap> {
    read_labelmap_pgm(&mut BufReader::new(File::open(path)?))
}

pub fn save_labelmap<P: AsRef<Path>>(path: P, lm: &LabelMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_labelmap_pgm(&mut w, lm)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip_tensor(t: &Tensor3) -> Tensor3 {
        let mut buf = Vec::new();
        write_tensor(&mut buf, t).unwrap();
        read_tensor(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn tensor_roundtrip_is_bit_exact() {
        let mut state = 1234567890123456789u64;
        let mut vals = Vec::with_capacity(7 * 5 * 21);
        for _ in 0..7 * 5 * 21 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(7);
            vals.push(f32::from_bits(
                0x3f000000 | ((state >> 40) as u32 & 0x7fffff),
            ));
        }
        let t = Tensor3::from_vec(7, 5, 21, vals).unwrap();
        let back = roundtrip_tensor(&t);
        let a: Vec<u32> = t.as_slice().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn tensor_bad_magic() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor3::new(1, 1, 1).unwrap()).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_tensor(&mut buf.as_slice()),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn tensor_truncated() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor3::new(2, 2, 2).unwrap()).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(
            read_tensor(&mut buf.as_slice()),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn tensor_zero_dimension_header() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"CRFT");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&3u32.to_le_bytes());
        assert!(matches!(
            read_tensor(&mut buf.as_slice()),
            Err(Error::ZeroDimension(_))
        ));
    }

    #[test]
    fn tensor_dimension_overflow_header() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"CRFT");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&u32::MAX.to_le_bytes());
        buf.extend_from_slice(&u32::MAX.to_le_bytes());
        buf.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            read_tensor(&mut buf.as_slice()),
            Err(Error::DimensionOverflow(_))
        ));
    }

    #[test]
    fn ppm_wrong_magic_is_format_error() {
        let img = Image::new(2, 3).unwrap();
        let mut buf = Vec::new();
        write_image_ppm(&mut buf, &img).unwrap();
        let mut pgm = buf.clone();
        pgm[1] = b'5'; // P6 -> P5
        assert!(matches!(
            read_image_ppm(&mut pgm.as_slice()),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn ppm_comment_header_parses() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"P6\n# generated\n2 1\n255\n");
        buf.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = read_image_ppm(&mut buf.as_slice()).unwrap();
        assert_eq!((img.height(), img.width()), (1, 2));
        assert_eq!(img.pixel(0, 1), [4, 5, 6]);
    }

    #[test]
    fn pgm_roundtrip_with_void() {
        let lm = LabelMap::from_labels(2, 2, vec![0, 3, 255, 20], 255).unwrap();
        let mut buf = Vec::new();
        write_labelmap_pgm(&mut buf, &lm).unwrap();
        let back = read_labelmap_pgm(&mut buf.as_slice()).unwrap();
        assert_eq!(lm, back);
    }

    #[test]
    fn pgm_rejects_wide_labels() {
        let lm = LabelMap::from_labels(1, 1, vec![300], 65535).unwrap();
        let mut buf = Vec::new();
        assert!(matches!(
            write_labelmap_pgm(&mut buf, &lm),
            Err(Error::LabelOutOfRange(_))
        ));
    }

    proptest! {
        // Round-trips are identity on bits for all three formats.
        #[test]
        fn formats_roundtrip(
            h in 1usize..6,
            w in 1usize..6,
            c in 1usize..4,
            seed in any::<u64>(),
        ) {
            let mut state = seed | 1;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 33) as u32
            };
            let vals: Vec<f32> = (0..h * w * c).map(|_| (next() as f32 / u32::MAX as f32) * 2.0 - 1.0).collect();
            let t = Tensor3::from_vec(h, w, c, vals).unwrap();
            let bits_in: Vec<u32> = t.as_slice().iter().map(|v| v.to_bits()).collect();
            let bits_out: Vec<u32> = roundtrip_tensor(&t).as_slice().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits_in, bits_out);

            let rgb: Vec<u8> = (0..h * w * 3).map(|_| (next() & 0xff) as u8).collect();
            let img = Image::from_vec(h, w, rgb).unwrap();
            let mut buf = Vec::new();
            write_image_ppm(&mut buf, &img).unwrap();
            prop_assert_eq!(&read_image_ppm(&mut buf.as_slice()).unwrap(), &img);

            let labels: Vec<u16> = (0..h * w).map(|_| (next() % 256) as u16).collect();
            let lm = LabelMap::from_labels(h, w, labels, 255).unwrap();
            let mut buf = Vec::new();
            write_labelmap_pgm(&mut buf, &lm).unwrap();
            prop_assert_eq!(&read_labelmap_pgm(&mut buf.as_slice()).unwrap(), &lm);
        }
    }
}
