//! Shared 32-bit word plumbing for the kernel and host bytecodes.

use super::CodegenError;

pub(crate) fn word(op: u8, a: u8, b: u8, c: u8) -> u32 {
    u32::from_le_bytes([op, a, b, c])
}

/// Packs bytes four to a word, zero-padding the last one.
pub(crate) fn pack_bytes(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks(4)
        .map(|c| {
            let mut w = [0u8; 4];
            w[..c.len()].copy_from_slice(c);
            u32::from_le_bytes(w)
        })
        .collect()
}

pub(crate) struct Reader<'a> {
    words: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Result<Self, CodegenError> {
        if !bytes.len().is_multiple_of(4) {
            return Err(CodegenError::MalformedBytecode(format!("{} bytes is not a whole number of words", bytes.len())));
        }
        Ok(Self { words: bytes, pos: 0 })
    }

    /// Words left to read.
    pub(crate) fn remaining(&self) -> usize {
        (self.words.len() - self.pos) / 4
    }

    /// Word index of the next read.
    pub(crate) fn position(&self) -> usize {
        self.pos / 4
    }

    pub(crate) fn bytes(&mut self) -> Result<[u8; 4], CodegenError> {
        let w = self
            .words
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| CodegenError::MalformedBytecode(format!("truncated at word {}", self.pos / 4)))?;
        self.pos += 4;
        Ok(w.try_into().expect("4 bytes"))
    }

    pub(crate) fn u32(&mut self) -> Result<u32, CodegenError> {
        self.bytes().map(u32::from_le_bytes)
    }

    /// `n` bytes packed four to a word.
    pub(crate) fn packed(&mut self, n: usize) -> Result<Vec<u8>, CodegenError> {
        if n.div_ceil(4) > self.remaining() {
            return Err(CodegenError::MalformedBytecode(format!("truncated at word {}", self.pos / 4)));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n.div_ceil(4) {
            out.extend(self.bytes()?);
        }
        out.truncate(n);
        Ok(out)
    }
}
