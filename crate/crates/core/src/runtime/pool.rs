use std::sync::Arc;

use super::buffer::{Arena, Buffer, BufferFlags, BufferOrigin};
use super::RuntimeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoolHandle(usize);

#[derive(Debug)]
struct Block {
    buffer: Arc<Buffer>,
    /// Bytes requested by the current holder, if any.
    live: Option<usize>,
}

/// Transient buffer pool. A request takes the smallest free block that fits
/// (blocks are never split) and only grows the pool when none does.
#[derive(Debug)]
pub struct TransientPool {
    arena: Arc<Arena>,
    blocks: Vec<Option<Block>>,
    live_bytes: usize,
    high_water: usize,
}

impl TransientPool {
    pub fn new(arena: Arc<Arena>) -> Self {
        Self { arena, blocks: vec![], live_bytes: 0, high_water: 0 }
    }

    pub fn acquire(&mut self, bytes: usize) -> Result<PoolHandle, RuntimeError> {
        let best = self
            .blocks
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.as_ref().filter(|b| b.live.is_none() && b.buffer.len() >= bytes).map(|b| (b.buffer.len(), i)))
            .min();
        let i = match best {
            Some((_, i)) => i,
            None => {
                let buffer = self.arena.allocate(BufferFlags::TRANSIENT, BufferOrigin::PooledTransient, bytes)?;
                let slot = self.blocks.iter().position(Option::is_none).unwrap_or(self.blocks.len());
                if slot == self.blocks.len() {
                    self.blocks.push(None);
                }
                self.blocks[slot] = Some(Block { buffer, live: None });
                slot
            }
        };
        self.blocks[i].as_mut().expect("block").live = Some(bytes);
        self.live_bytes += bytes;
        self.high_water = self.high_water.max(self.live_bytes);
        Ok(PoolHandle(i))
    }

    pub fn buffer(&self, h: PoolHandle) -> Arc<Buffer> {
        Arc::clone(&self.blocks[h.0].as_ref().expect("live handle").buffer)
    }

    pub fn release(&mut self, h: PoolHandle) -> Result<(), RuntimeError> {
        let block = self.blocks.get_mut(h.0).and_then(Option::as_mut).ok_or(RuntimeError::DoubleRelease)?;
        let bytes = block.live.take().ok_or(RuntimeError::DoubleRelease)?;
        self.live_bytes -= bytes;
        Ok(())
    }

    /// Returns free blocks to the arena.
    pub fn trim(&mut self) {
        for b in &mut self.blocks {
            if b.as_ref().is_some_and(|b| b.live.is_none()) {
                *b = None;
            }
        }
    }

    /// Peak of the summed requested bytes of live blocks.
    pub fn high_water(&self) -> usize {
        self.high_water
    }

    pub fn reset_high_water(&mut self) {
        self.high_water = self.live_bytes;
    }

    pub fn live_bytes(&self) -> usize {
        self.live_bytes
    }

    pub fn live_count(&self) -> usize {
        self.blocks.iter().flatten().filter(|b| b.live.is_some()).count()
    }

    /// Capacity of every block the pool holds, live or free.
    pub fn reserved_bytes(&self) -> usize {
        self.blocks.iter().flatten().map(|b| b.buffer.len()).sum()
    }
}
