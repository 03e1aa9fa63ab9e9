//! Little-endian bit streams: the first field occupies the lowest bits of the
//! first byte.

#[derive(Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `width` bits of `value`.
    pub fn push(&mut self, value: u32, width: u32) {
        debug_assert!(width == 32 || value >> width == 0, "value {value} wider than {width} bits");
        for i in 0..width {
            let bit = (value >> i) & 1;
            let pos = self.len;
            if pos % 8 == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().expect("pushed") |= 1 << (pos % 8);
            }
            self.len += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.len
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, pos: 0 }
    }

    /// Reads `width` bits; `None` past the end.
    pub fn read(&mut self, width: u32) -> Option<u32> {
        if self.pos + u64::from(width) > 8 * self.bytes.len() as u64 {
            return None;
        }
        let mut value = 0u32;
        for i in 0..width {
            let p = self.pos + u64::from(i);
            let bit = (self.bytes[(p / 8) as usize] >> (p % 8)) & 1;
            value |= u32::from(bit) << i;
        }
        self.pos += u64::from(width);
        Some(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_bit_codes_pack_low_nibble_first() {
        let mut w = BitWriter::new();
        for c in [1, 2, 3, 4] {
            w.push(c, 4);
        }
        assert_eq!(w.bit_len(), 16);
        assert_eq!(w.into_bytes(), vec![0x21, 0x43]);
    }

    #[test]
    fn one_bit_codes() {
        let mut w = BitWriter::new();
        for c in [1, 0, 1, 1, 0, 0, 0, 0, 1] {
            w.push(c, 1);
        }
        assert_eq!(w.bit_len(), 9);
        assert_eq!(w.into_bytes(), vec![0b0000_1101, 0b1]);
    }

    proptest! {
        #[test]
        fn round_trip(fields in prop::collection::vec((0u32..=16).prop_flat_map(|w| {
            let max = if w == 0 { 0 } else { (1u64 << w) - 1 };
            (Just(w), 0..=max)
        }), 0..60)) {
            let mut w = BitWriter::new();
            for &(width, v) in &fields {
                w.push(v as u32, width);
            }
            let total: u64 = fields.iter().map(|&(width, _)| u64::from(width)).sum();
            prop_assert_eq!(w.bit_len(), total);
            let bytes = w.into_bytes();
            prop_assert_eq!(bytes.len() as u64, total.div_ceil(8));
            let mut r = BitReader::new(&bytes);
            for &(width, v) in &fields {
                prop_assert_eq!(r.read(width), Some(v as u32));
            }
        }
    }
}
