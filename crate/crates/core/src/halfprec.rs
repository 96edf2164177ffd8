//! IEEE binary16 conversion at the persistence boundary.

use half::f16;

/// Largest finite binary16 magnitude.
pub const F16_MAX: f64 = 65504.0;

/// Rounds `v` to the nearest binary16 (ties to even) and returns its bits.
/// Values beyond the finite range are clamped to ±65504; the flag reports
/// whether that happened.
pub fn quantize(v: f64) -> (u16, bool) {
    if v.is_nan() {
        return (f16::NAN.to_bits(), false);
    }
    if v.abs() > F16_MAX {
        let c = F16_MAX.copysign(v);
        return (f16::from_f64(c).to_bits(), true);
    }
    (f16::from_f64(v).to_bits(), false)
}

pub fn dequantize(bits: u16) -> f64 {
    f16::from_bits(bits).to_f64()
}

/// `v` after a round trip through binary16.
pub fn round_trip(v: f64) -> f64 {
    dequantize(quantize(v).0)
}

pub fn encode_hex(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 2);
    for &v in values {
        bytes.extend_from_slice(&quantize(v).0.to_le_bytes());
    }
    hex::encode(bytes)
}

pub fn decode_hex(s: &str) -> Result<Vec<f64>, String> {
    let bytes = hex::decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 2 != 0 {
        return Err(format!("odd byte count {}", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| dequantize(u16::from_le_bytes([c[0], c[1]])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_and_rounded_values() {
        assert_eq!(round_trip(1.0), 1.0);
        assert_eq!(round_trip(0.1), 0.0999755859375);
        assert_eq!(quantize(70000.0), (f16::from_f64(65504.0).to_bits(), true));
        assert_eq!(round_trip(-1e9), -65504.0);
        // smallest subnormal survives
        assert_eq!(round_trip(2f64.powi(-24)), 2f64.powi(-24));
    }

    #[test]
    fn hex_round_trip() {
        let v = [0.5, -0.25, 0.1];
        let s = encode_hex(&v);
        assert_eq!(s.len(), 12);
        let back = decode_hex(&s).unwrap();
        assert_eq!(back, v.iter().map(|&x| round_trip(x)).collect::<Vec<_>>());
        assert!(decode_hex("abc").is_err());
    }
}
