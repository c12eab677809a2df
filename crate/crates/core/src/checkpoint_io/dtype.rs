use std::fmt;
use std::str::FromStr;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

/// Element type of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dtype {
    F32,
    F16,
    BF16,
    F64,
}

impl Dtype {
    /// Width of one element in bytes.
    pub const fn width(self) -> usize {
        match self {
            Dtype::F16 | Dtype::BF16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F16 => "F16",
            Dtype::BF16 => "BF16",
            Dtype::F64 => "F64",
        }
    }

    /// Decodes one little-endian element. `bytes` must hold exactly `width()` bytes.
    #[inline]
    pub fn decode(self, bytes: &[u8]) -> f64 {
        match self {
            Dtype::F32 => f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as f64,
            Dtype::F16 => decode_f16(u16::from_le_bytes([bytes[0], bytes[1]])),
            Dtype::BF16 => decode_bf16(u16::from_le_bytes([bytes[0], bytes[1]])),
            Dtype::F64 => f64::from_le_bytes([
                bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
            ]),
        }
    }

    /// Encodes one value little-endian, rounding to nearest-even for the narrow types.
    pub fn encode(self, value: f64, out: &mut Vec<u8>) {
        match self {
            Dtype::F32 => out.extend_from_slice(&(value as f32).to_le_bytes()),
            Dtype::F16 => out.extend_from_slice(&f16::from_f64(value).to_bits().to_le_bytes()),
            Dtype::BF16 => out.extend_from_slice(&bf16::from_f64(value).to_bits().to_le_bytes()),
            Dtype::F64 => out.extend_from_slice(&value.to_le_bytes()),
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "F32" => Ok(Dtype::F32),
            "F16" => Ok(Dtype::F16),
            "BF16" => Ok(Dtype::BF16),
            "F64" => Ok(Dtype::F64),
            other => Err(other.to_string()),
        }
    }
}

/// bfloat16 bit pattern to value: the f32 whose upper half is `bits`.
#[inline]
pub fn decode_bf16(bits: u16) -> f64 {
    bf16::from_bits(bits).to_f64()
}

/// IEEE 754 binary16 bit pattern to value.
#[inline]
pub fn decode_f16(bits: u16) -> f64 {
    f16::from_bits(bits).to_f64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_patterns() {
        assert_eq!(decode_bf16(0x3F80), 1.0);
        assert_eq!(decode_bf16(0x4049), 3.140625);
        assert_eq!(decode_f16(0x3C00), 1.0);
        assert_eq!(decode_f16(0xC000), -2.0);
    }

    #[test]
    fn encode_decode_is_identity_on_representable_values() {
        for dtype in [Dtype::F32, Dtype::F16, Dtype::BF16, Dtype::F64] {
            for v in [0.0, 1.0, -2.0, 0.5, 3.140625] {
                let mut buf = Vec::new();
                dtype.encode(v, &mut buf);
                assert_eq!(buf.len(), dtype.width());
                assert_eq!(dtype.decode(&buf), v, "{dtype}");
            }
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("BF16".parse::<Dtype>().unwrap(), Dtype::BF16);
        assert!("I8".parse::<Dtype>().is_err());
    }
}
