//! Bit arrays packed LSB-first into 32-bit words.

pub const WORD_BITS: usize = 32;

#[inline]
pub fn words_for_bits(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

pub fn pack(bits: &[bool]) -> Vec<u32> {
    let mut words = vec![0u32; words_for_bits(bits.len())];
    for (i, b) in bits.iter().enumerate() {
        if *b {
            words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
        }
    }
    words
}

pub fn unpack(words: &[u32], len: usize) -> Vec<bool> {
    (0..len).map(|i| words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1).collect()
}

/// Little-endian byte reader used by the encoding parsers.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> crate::Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            crate::Error::MalformedEncoding(format!(
                "stream ends at byte {} but {} more bytes are needed",
                self.buf.len(),
                n
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> crate::Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> crate::Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn i16(&mut self) -> crate::Result<i16> {
        Ok(i16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> crate::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> crate::Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn finish(&self) -> crate::Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(crate::Error::MalformedEncoding(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}
