//! Format 212: two 12-bit two's-complement samples packed into three bytes.
//!
//! ```text
//! byte0 = s1[7:0]
//! byte1 = s2[11:8] << 4 | s1[11:8]
//! byte2 = s2[7:0]
//! ```

use crate::error::{data_err, Result};

pub const SAMPLE_MIN: i16 = -2048;
pub const SAMPLE_MAX: i16 = 2047;

fn sign_extend_12(v: u16) -> i16 {
    if v >= 2048 {
        v as i16 - 4096
    } else {
        v as i16
    }
}

/// Decodes `sample_count` samples in stored (interleaved) order.
pub fn decode_212(bytes: &[u8], sample_count: usize) -> Result<Vec<i16>> {
    let needed = (sample_count * 3).div_ceil(2);
    if bytes.len() < needed {
        let complete_groups = bytes.len() / 3;
        return Err(data_err!(
            "format 212 stream truncated: {} samples need {needed} bytes, have {} (last complete group ends at byte offset {})",
            sample_count,
            bytes.len(),
            complete_groups * 3
        ));
    }
    let mut out = Vec::with_capacity(sample_count);
    for group in bytes[..needed].chunks(3) {
        let b0 = u16::from(group[0]);
        let b1 = u16::from(group[1]);
        out.push(sign_extend_12(((b1 & 0x0f) << 8) | b0));
        if out.len() < sample_count {
            let b2 = u16::from(group[2]);
            out.push(sign_extend_12(((b1 & 0xf0) << 4) | b2));
        }
    }
    Ok(out)
}

/// Encodes samples in stored order; an odd final sample occupies two bytes.
pub fn encode_212(samples: &[i16]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity((samples.len() * 3).div_ceil(2));
    for (i, pair) in samples.chunks(2).enumerate() {
        for (j, &s) in pair.iter().enumerate() {
            if !(SAMPLE_MIN..=SAMPLE_MAX).contains(&s) {
                return Err(data_err!("sample {} = {s} does not fit in 12 bits", 2 * i + j));
            }
        }
        let s1 = (pair[0] as u16) & 0x0fff;
        out.push((s1 & 0xff) as u8);
        match pair.get(1) {
            Some(&s2) => {
                let s2 = (s2 as u16) & 0x0fff;
                out.push((((s2 >> 8) << 4) | (s1 >> 8)) as u8);
                out.push((s2 & 0xff) as u8);
            }
            None => out.push((s1 >> 8) as u8),
        }
    }
    Ok(out)
}

/// Splits an interleaved stream into per-channel vectors.
pub fn deinterleave(samples: &[i16], channels: usize) -> Result<Vec<Vec<i16>>> {
    if channels == 0 || !samples.len().is_multiple_of(channels) {
        return Err(data_err!(
            "{} samples cannot be split into {channels} channels",
            samples.len()
        ));
    }
    let mut out = vec![Vec::with_capacity(samples.len() / channels); channels];
    for frame in samples.chunks(channels) {
        for (c, &s) in frame.iter().enumerate() {
            out[c].push(s);
        }
    }
    Ok(out)
}

pub fn interleave(channels: &[Vec<i16>]) -> Result<Vec<i16>> {
    let len = channels.first().map_or(0, Vec::len);
    if channels.iter().any(|c| c.len() != len) {
        return Err(data_err!("channels differ in length"));
    }
    Ok((0..len)
        .flat_map(|i| channels.iter().map(move |c| c[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_decoded_groups() {
        assert_eq!(decode_212(&[0, 0, 0], 2).unwrap(), vec![0, 0]);
        assert_eq!(decode_212(&[0xff, 0xff, 0xff], 2).unwrap(), vec![-1, -1]);
        assert_eq!(decode_212(&[0x34, 0x12, 0x56], 2).unwrap(), vec![564, 342]);
        assert_eq!(decode_212(&[0x00, 0x08, 0xff], 2).unwrap(), vec![-2048, 255]);
    }

    #[test]
    fn odd_counts_and_truncation() {
        let enc = encode_212(&[5, -7, 2047]).unwrap();
        assert_eq!(enc.len(), 5);
        assert_eq!(decode_212(&enc, 3).unwrap(), vec![5, -7, 2047]);
        let err = decode_212(&[1, 2, 3, 4], 4).unwrap_err().to_string();
        assert!(err.contains("byte offset 3"), "{err}");
        assert!(encode_212(&[2048]).is_err());
    }

    #[test]
    fn interleaving() {
        let ch = deinterleave(&[1, 10, 2, 20, 3, 30], 2).unwrap();
        assert_eq!(ch, vec![vec![1, 2, 3], vec![10, 20, 30]]);
        assert_eq!(interleave(&ch).unwrap(), vec![1, 10, 2, 20, 3, 30]);
        assert!(deinterleave(&[1, 2, 3], 2).is_err());
    }
}
