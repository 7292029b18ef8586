use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use bytemuck::{Pod, Zeroable};

use super::RuntimeError;

/// Default arena cap, in bytes.
pub const DEFAULT_ARENA_CAP: usize = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferFlags {
    pub host_visible: bool,
    pub device_visible: bool,
    pub readable: bool,
    pub writable: bool,
}

impl BufferFlags {
    /// Entry arguments: filled by the host, read by the device.
    pub const INPUT: BufferFlags = BufferFlags { host_visible: true, device_visible: true, readable: true, writable: false };
    /// Results: written by the device, read back by the host.
    pub const OUTPUT: BufferFlags = BufferFlags { host_visible: true, device_visible: true, readable: true, writable: true };
    /// Inter-dispatch temporaries never seen by the host.
    pub const TRANSIENT: BufferFlags = BufferFlags { host_visible: false, device_visible: true, readable: true, writable: true };
    pub const CONSTANT: BufferFlags = BufferFlags { host_visible: true, device_visible: true, readable: true, writable: false };
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BufferOrigin {
    HostAlloc,
    DeviceAlloc,
    Constant,
    PooledTransient,
}

#[repr(C, align(16))]
#[derive(Clone, Copy, Pod, Zeroable)]
struct Chunk([u8; 16]);

/// Byte budget shared by every buffer allocated through one [`Arena`].
#[derive(Debug)]
pub struct Arena {
    cap: usize,
    used: AtomicUsize,
    live: AtomicUsize,
    next_id: AtomicU64,
}

impl Arena {
    pub fn new(cap: usize) -> Arc<Self> {
        Arc::new(Self { cap, used: AtomicUsize::new(0), live: AtomicUsize::new(0), next_id: AtomicU64::new(0) })
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    /// Bytes currently held by live buffers.
    pub fn used(&self) -> usize {
        self.used.load(Ordering::SeqCst)
    }

    /// Requested bytes of live buffers, without alignment padding.
    pub fn live_bytes(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    /// A zero-filled, 16-byte aligned buffer.
    pub fn allocate(self: &Arc<Self>, flags: BufferFlags, origin: BufferOrigin, len: usize) -> Result<Arc<Buffer>, RuntimeError> {
        if !flags.host_visible && !flags.device_visible {
            return Err(RuntimeError::InvalidFlags);
        }
        let reserved = len.next_multiple_of(16);
        self.used
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |u| u.checked_add(reserved).filter(|n| *n <= self.cap))
            .map_err(|in_use| RuntimeError::OutOfMemory { requested: len, in_use, cap: self.cap })?;
        self.live.fetch_add(len, Ordering::SeqCst);
        Ok(Arc::new(Buffer {
            id: self.next_id.fetch_add(1, Ordering::SeqCst),
            len,
            flags,
            origin,
            data: RwLock::new(vec![Chunk::zeroed(); reserved / 16]),
            arena: Arc::clone(self),
        }))
    }
}

impl Arena {
    /// A buffer created with `bytes` as its contents, whatever its flags.
    pub fn allocate_init(self: &Arc<Self>, flags: BufferFlags, origin: BufferOrigin, bytes: &[u8]) -> Result<Arc<Buffer>, RuntimeError> {
        let b = self.allocate(flags, origin, bytes.len())?;
        b.fill_unchecked(bytes)?;
        Ok(b)
    }
}

/// A flat byte allocation with visibility and access flags. Every access
/// goes through a check of those flags.
#[derive(Debug)]
pub struct Buffer {
    id: u64,
    len: usize,
    flags: BufferFlags,
    origin: BufferOrigin,
    data: RwLock<Vec<Chunk>>,
    arena: Arc<Arena>,
}

impl std::fmt::Debug for Chunk {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Chunk")
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        self.arena.used.fetch_sub(self.len.next_multiple_of(16), Ordering::SeqCst);
        self.arena.live.fetch_sub(self.len, Ordering::SeqCst);
    }
}

pub struct ReadView<'a>(RwLockReadGuard<'a, Vec<Chunk>>, usize);
pub struct WriteView<'a>(RwLockWriteGuard<'a, Vec<Chunk>>, usize);

impl std::ops::Deref for ReadView<'_> {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &bytemuck::cast_slice(&self.0[..])[..self.1]
    }
}

impl std::ops::Deref for WriteView<'_> {
    type Target = [u8];
    fn deref(&self) -> &[u8] {
        &bytemuck::cast_slice(&self.0[..])[..self.1]
    }
}

impl std::ops::DerefMut for WriteView<'_> {
    fn deref_mut(&mut self) -> &mut [u8] {
        &mut bytemuck::cast_slice_mut(&mut self.0[..])[..self.1]
    }
}

fn denied(id: u64, what: &str) -> RuntimeError {
    RuntimeError::PermissionDenied(format!("buffer {id}: {what}"))
}

impl Buffer {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn flags(&self) -> BufferFlags {
        self.flags
    }

    pub fn origin(&self) -> BufferOrigin {
        self.origin
    }

    /// Bytes reserved in the arena.
    pub fn reserved(&self) -> usize {
        self.len.next_multiple_of(16)
    }

    pub fn check_host_read(&self) -> Result<(), RuntimeError> {
        match (self.flags.host_visible, self.flags.readable) {
            (false, _) => Err(denied(self.id, "host read of a buffer not visible to the host")),
            (_, false) => Err(denied(self.id, "host read of a non-readable buffer")),
            _ => Ok(()),
        }
    }

    pub fn check_host_write(&self) -> Result<(), RuntimeError> {
        match (self.flags.host_visible, self.flags.writable) {
            (false, _) => Err(denied(self.id, "host write to a buffer not visible to the host")),
            (_, false) => Err(denied(self.id, "host write to a read-only buffer")),
            _ => Ok(()),
        }
    }

    pub fn check_device(&self, read: bool, write: bool) -> Result<(), RuntimeError> {
        if !self.flags.device_visible {
            return Err(denied(self.id, "device access to a buffer not visible to the device"));
        }
        if read && !self.flags.readable {
            return Err(denied(self.id, "device read of a non-readable buffer"));
        }
        if write && !self.flags.writable {
            return Err(denied(self.id, "device write to a read-only buffer"));
        }
        Ok(())
    }

    pub fn host_read(&self) -> Result<Vec<u8>, RuntimeError> {
        self.check_host_read()?;
        Ok(self.read_unchecked().to_vec())
    }

    pub fn host_write(&self, bytes: &[u8]) -> Result<(), RuntimeError> {
        self.check_host_write()?;
        self.fill_unchecked(bytes)
    }

    /// Initial contents supplied at creation (entry arguments, constants),
    /// before the buffer's flags take effect.
    pub(crate) fn fill_unchecked(&self, bytes: &[u8]) -> Result<(), RuntimeError> {
        if bytes.len() != self.len {
            return Err(RuntimeError::SizeMismatch { expected: self.len, got: bytes.len() });
        }
        self.write_unchecked().copy_from_slice(bytes);
        Ok(())
    }

    pub(crate) fn read_unchecked(&self) -> ReadView<'_> {
        ReadView(self.data.read().expect("buffer lock poisoned"), self.len)
    }

    pub(crate) fn write_unchecked(&self) -> WriteView<'_> {
        WriteView(self.data.write().expect("buffer lock poisoned"), self.len)
    }

    /// Contents regardless of flags, for tests and instrumentation.
    pub fn snapshot(&self) -> Vec<u8> {
        self.read_unchecked().to_vec()
    }
}
