//! The `.tirm` container: a header, a section table and 8-byte aligned
//! section payloads, all little-endian.
//!
//! ```text
//! "TIRM" | version u16 | flags u16 | count u32 | count x {kind u32, offset u64, size u64} | payloads
//! ```

use thiserror::Error;

use crate::ir::{Dim, ElementType, TensorType, MAX_RANK};
use crate::transforms::ConstantEntry;

pub const MODULE_MAGIC: [u8; 4] = *b"TIRM";
pub const MODULE_VERSION: u16 = 1;
pub const FLAG_HOST_EMITC: u16 = 1;
pub const FLAG_HAS_DEBUG: u16 = 2;

const HEADER_LEN: usize = 12;
const ENTRY_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SectionKind {
    HostBytecode = 1,
    KernelTable = 2,
    ConstantPool = 3,
    DebugNames = 4,
    HostCSource = 5,
    Signature = 6,
}

impl SectionKind {
    pub const ALL: [SectionKind; 6] = [
        SectionKind::HostBytecode,
        SectionKind::KernelTable,
        SectionKind::ConstantPool,
        SectionKind::DebugNames,
        SectionKind::HostCSource,
        SectionKind::Signature,
    ];

    pub fn from_u32(k: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|s| *s as u32 == k)
    }

    pub fn name(self) -> &'static str {
        match self {
            SectionKind::HostBytecode => "host_bytecode",
            SectionKind::KernelTable => "kernel_table",
            SectionKind::ConstantPool => "constant_pool",
            SectionKind::DebugNames => "debug_names",
            SectionKind::HostCSource => "host_c_source",
            SectionKind::Signature => "signature",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModuleError {
    #[error("not a module file (bad magic)")]
    BadMagic,
    #[error("unsupported module version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt section table: {0}")]
    CorruptSectionTable(String),
    #[error("section payload runs past the end of the file: {0}")]
    TruncatedPayload(String),
    #[error("malformed {section} section: {message}")]
    MalformedSection { section: &'static str, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    pub kind: SectionKind,
    pub payload: Vec<u8>,
}

/// A decoded module; payloads are kept as bytes and decoded on demand.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleFile {
    pub version: u16,
    pub flags: u16,
    /// Sorted by kind.
    pub sections: Vec<Section>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum HostCode {
    Bytecode(Vec<u8>),
    CSource(String),
}

/// Entry-point types. Dynamic extents are supplied by the arguments that
/// carry them.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Signature {
    pub args: Vec<TensorType>,
    pub results: Vec<TensorType>,
}

impl Signature {
    /// (argument, axis) pairs whose extents are only known at run time.
    pub fn dynamic_dims(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (a, t) in self.args.iter().enumerate() {
            for (axis, d) in t.shape.iter().enumerate() {
                if d.is_dynamic() {
                    out.push((a, axis));
                }
            }
        }
        out
    }
}

/// Everything `write_module` serializes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModuleContents {
    pub host: HostCode,
    /// Kernel bytecode by ordinal.
    pub kernels: Vec<Vec<u8>>,
    pub constants: Vec<ConstantEntry>,
    pub signature: Signature,
    /// Kernel names by ordinal; written only for debug modules.
    pub kernel_names: Vec<String>,
}

struct Out(Vec<u8>);

impl Out {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend(v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn align(&mut self, to: usize) {
        while !self.0.len().is_multiple_of(to) {
            self.0.push(0);
        }
    }
}

fn encode_types(o: &mut Out, types: &[TensorType]) {
    o.u32(types.len() as u32);
    for t in types {
        let mask = t.shape.iter().enumerate().fold(0u8, |m, (i, d)| m | (u8::from(d.is_dynamic()) << i));
        o.u8(t.elem.code());
        o.u8(t.rank() as u8);
        o.u8(mask);
        o.u8(0);
        for d in &t.shape {
            o.u64(d.as_static().map_or(u64::MAX, |n| n));
        }
    }
}

impl ModuleContents {
    pub fn to_file(&self, debug: bool) -> ModuleFile {
        let mut sections = Vec::new();
        match &self.host {
            HostCode::Bytecode(b) => sections.push(Section { kind: SectionKind::HostBytecode, payload: b.clone() }),
            HostCode::CSource(c) => {
                sections.push(Section { kind: SectionKind::HostCSource, payload: c.as_bytes().to_vec() })
            }
        }

        let mut o = Out(vec![]);
        o.u32(self.kernels.len() as u32);
        for (ordinal, k) in self.kernels.iter().enumerate() {
            o.u32(ordinal as u32);
            o.u32(k.len() as u32);
            o.0.extend(k);
            o.align(4);
        }
        sections.push(Section { kind: SectionKind::KernelTable, payload: o.0 });

        let mut o = Out(vec![]);
        o.u32(self.constants.len() as u32);
        o.u32(0);
        for c in &self.constants {
            o.u8(c.elem.code());
            o.u8(c.shape.len() as u8);
            o.u16(0);
            o.u32(0);
            for d in &c.shape {
                o.u64(*d as u64);
            }
            o.u64(c.bytes.len() as u64);
            o.0.extend(&c.bytes);
            o.align(8);
        }
        sections.push(Section { kind: SectionKind::ConstantPool, payload: o.0 });

        if debug {
            let mut o = Out(vec![]);
            o.u32(self.kernel_names.len() as u32);
            for (ordinal, name) in self.kernel_names.iter().enumerate() {
                o.u32(ordinal as u32);
                o.u32(name.len() as u32);
                o.0.extend(name.as_bytes());
                o.align(4);
            }
            sections.push(Section { kind: SectionKind::DebugNames, payload: o.0 });
        }

        let mut o = Out(vec![]);
        encode_types(&mut o, &self.signature.args);
        encode_types(&mut o, &self.signature.results);
        sections.push(Section { kind: SectionKind::Signature, payload: o.0 });

        sections.sort_by_key(|s| s.kind);
        let mut flags = 0;
        if matches!(self.host, HostCode::CSource(_)) {
            flags |= FLAG_HOST_EMITC;
        }
        if debug {
            flags |= FLAG_HAS_DEBUG;
        }
        ModuleFile { version: MODULE_VERSION, flags, sections }
    }
}

/// Serializes the contents; `debug` adds the kernel-name section.
pub fn write_module(contents: &ModuleContents, debug: bool) -> Vec<u8> {
    contents.to_file(debug).to_bytes()
}

impl ModuleFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut o = Out(Vec::new());
        o.0.extend(MODULE_MAGIC);
        o.u16(self.version);
        o.u16(self.flags);
        o.u32(self.sections.len() as u32);
        let mut offset = (HEADER_LEN + ENTRY_LEN * self.sections.len()).next_multiple_of(8);
        for s in &self.sections {
            o.u32(s.kind as u32);
            o.u64(offset as u64);
            o.u64(s.payload.len() as u64);
            offset = (offset + s.payload.len()).next_multiple_of(8);
        }
        for s in &self.sections {
            o.align(8);
            o.0.extend(&s.payload);
        }
        o.align(8);
        o.0
    }

    pub fn section(&self, kind: SectionKind) -> Option<&[u8]> {
        self.sections.iter().find(|s| s.kind == kind).map(|s| s.payload.as_slice())
    }

    pub fn has_debug(&self) -> bool {
        self.flags & FLAG_HAS_DEBUG != 0
    }

    pub fn host_is_emitc(&self) -> bool {
        self.flags & FLAG_HOST_EMITC != 0
    }

    pub fn host(&self) -> Result<HostCode, ModuleError> {
        if let Some(b) = self.section(SectionKind::HostBytecode) {
            return Ok(HostCode::Bytecode(b.to_vec()));
        }
        let c = self.section(SectionKind::HostCSource).expect("validated: one host section");
        String::from_utf8(c.to_vec())
            .map(HostCode::CSource)
            .map_err(|_| malformed(SectionKind::HostCSource, "not UTF-8"))
    }

    /// Kernel bytecode by ordinal.
    pub fn kernels(&self) -> Result<Vec<Vec<u8>>, ModuleError> {
        let kind = SectionKind::KernelTable;
        let mut r = In::new(self.section(kind).unwrap_or_default(), kind);
        let n = r.u32()? as usize;
        let mut out = Vec::new();
        for i in 0..n {
            if r.u32()? as usize != i {
                return Err(malformed(kind, "kernel ordinals out of sequence"));
            }
            let len = r.u32()? as usize;
            out.push(r.take(len)?.to_vec());
            r.align(4)?;
        }
        r.finish()?;
        Ok(out)
    }

    pub fn constants(&self) -> Result<Vec<ConstantEntry>, ModuleError> {
        let kind = SectionKind::ConstantPool;
        let mut r = In::new(self.section(kind).unwrap_or_default(), kind);
        let n = r.u32()? as usize;
        r.u32()?;
        let mut out = Vec::new();
        for _ in 0..n {
            let elem = ElementType::from_code(r.u8()?).ok_or_else(|| malformed(kind, "bad element type"))?;
            let rank = r.u8()? as usize;
            if rank > MAX_RANK {
                return Err(malformed(kind, "rank too large"));
            }
            r.take(6)?;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let len = r.u64()? as usize;
            let expected = shape
                .iter()
                .try_fold(elem.byte_width(), |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| malformed(kind, "constant too large"))?;
            if len != expected {
                return Err(malformed(kind, "constant byte length disagrees with its shape"));
            }
            let bytes = r.take(len)?.to_vec();
            r.align(8)?;
            out.push(ConstantEntry { elem, shape, bytes });
        }
        r.finish()?;
        Ok(out)
    }

    /// Kernel names by ordinal, or `None` for a stripped module.
    pub fn debug_names(&self) -> Result<Option<Vec<String>>, ModuleError> {
        let kind = SectionKind::DebugNames;
        let Some(payload) = self.section(kind) else { return Ok(None) };
        let mut r = In::new(payload, kind);
        let n = r.u32()? as usize;
        let mut out = Vec::new();
        for i in 0..n {
            if r.u32()? as usize != i {
                return Err(malformed(kind, "name ordinals out of sequence"));
            }
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| malformed(kind, "name is not UTF-8"))?;
            out.push(name.to_string());
            r.align(4)?;
        }
        r.finish()?;
        Ok(Some(out))
    }

    pub fn signature(&self) -> Result<Signature, ModuleError> {
        let kind = SectionKind::Signature;
        let Some(payload) = self.section(kind) else {
            return Err(malformed(kind, "missing"));
        };
        let mut r = In::new(payload, kind);
        let args = r.types()?;
        let results = r.types()?;
        r.finish()?;
        Ok(Signature { args, results })
    }

    pub fn total_size(&self) -> usize {
        self.to_bytes().len()
    }
}

fn malformed(kind: SectionKind, message: &str) -> ModuleError {
    ModuleError::MalformedSection { section: kind.name(), message: message.into() }
}

struct In<'a> {
    b: &'a [u8],
    pos: usize,
    kind: SectionKind,
}

impl<'a> In<'a> {
    fn new(b: &'a [u8], kind: SectionKind) -> Self {
        Self { b, pos: 0, kind }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModuleError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.b.len()).ok_or_else(|| malformed(self.kind, "truncated"))?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ModuleError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModuleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64, ModuleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }

    fn align(&mut self, to: usize) -> Result<(), ModuleError> {
        let pad = self.pos.next_multiple_of(to) - self.pos;
        self.take(pad).map(|_| ())
    }

    fn finish(&self) -> Result<(), ModuleError> {
        if self.pos == self.b.len() {
            Ok(())
        } else {
            Err(malformed(self.kind, "trailing bytes"))
        }
    }

    fn types(&mut self) -> Result<Vec<TensorType>, ModuleError> {
        let n = self.u32()? as usize;
        let mut out = Vec::new();
        for _ in 0..n {
            let elem = ElementType::from_code(self.u8()?).ok_or_else(|| malformed(self.kind, "bad element type"))?;
            let rank = self.u8()? as usize;
            let mask = self.u8()?;
            self.u8()?;
            if rank > MAX_RANK {
                return Err(malformed(self.kind, "rank too large"));
            }
            let mut shape = Vec::with_capacity(rank);
            for i in 0..rank {
                let d = self.u64()?;
                let dynamic = mask & (1 << i) != 0;
                if dynamic != (d == u64::MAX) {
                    return Err(malformed(self.kind, "dynamic mask disagrees with extents"));
                }
                shape.push(if dynamic { Dim::Dynamic } else { Dim::Static(d) });
            }
            out.push(TensorType::new(shape, elem));
        }
        Ok(out)
    }
}

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4"))
}

fn read_u64(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().expect("8"))
}

/// Parses and validates the container. Section payload contents are checked
/// by the typed accessors on [`ModuleFile`].
pub fn read_module(bytes: &[u8]) -> Result<ModuleFile, ModuleError> {
    let corrupt = |m: &str| ModuleError::CorruptSectionTable(m.into());
    if bytes.len() < 4 || bytes[..4] != MODULE_MAGIC {
        return Err(ModuleError::BadMagic);
    }
    if bytes.len() < 6 {
        return Err(corrupt("header is truncated"));
    }
    let version = read_u16(bytes, 4);
    if version != MODULE_VERSION {
        return Err(ModuleError::UnsupportedVersion(version));
    }
    if bytes.len() < HEADER_LEN {
        return Err(corrupt("header is truncated"));
    }
    let flags = read_u16(bytes, 6);
    if flags & !(FLAG_HOST_EMITC | FLAG_HAS_DEBUG) != 0 {
        return Err(corrupt("unknown flag bits"));
    }
    let count = read_u32(bytes, 8) as usize;
    if count > SectionKind::ALL.len() {
        return Err(corrupt("too many sections"));
    }
    let table_end = HEADER_LEN + ENTRY_LEN * count;
    if bytes.len() < table_end {
        return Err(corrupt("section table runs past the end of the file"));
    }
    let mut sections: Vec<Section> = Vec::with_capacity(count);
    let mut prev_end = table_end as u64;
    for i in 0..count {
        let at = HEADER_LEN + ENTRY_LEN * i;
        let kind = read_u32(bytes, at);
        let offset = read_u64(bytes, at + 4);
        let size = read_u64(bytes, at + 12);
        let kind = SectionKind::from_u32(kind).ok_or_else(|| corrupt(&format!("unknown section kind {kind}")))?;
        if sections.last().is_some_and(|s| s.kind >= kind) {
            return Err(corrupt("section kinds repeat or are out of order"));
        }
        if !offset.is_multiple_of(8) {
            return Err(corrupt("payload offset is not 8-byte aligned"));
        }
        if offset < prev_end {
            return Err(corrupt("payloads overlap or are not ascending"));
        }
        let end = offset
            .checked_add(size)
            .filter(|e| *e <= bytes.len() as u64)
            .ok_or_else(|| ModuleError::TruncatedPayload(format!("{} at {offset} size {size}", kind.name())))?;
        sections.push(Section { kind, payload: bytes[offset as usize..end as usize].to_vec() });
        prev_end = end;
    }
    let has = |k| sections.iter().any(|s| s.kind == k);
    if has(SectionKind::HostBytecode) == has(SectionKind::HostCSource) {
        return Err(corrupt("exactly one of host_bytecode and host_c_source is required"));
    }
    if (flags & FLAG_HOST_EMITC != 0) != has(SectionKind::HostCSource) {
        return Err(corrupt("host-is-emitc flag disagrees with the sections"));
    }
    if (flags & FLAG_HAS_DEBUG != 0) != has(SectionKind::DebugNames) {
        return Err(corrupt("has-debug flag disagrees with the sections"));
    }
    Ok(ModuleFile { version, flags, sections })
}

/// Drops the debug-name section; every other payload is untouched.
pub fn strip_debug(file: &ModuleFile) -> ModuleFile {
    let mut f = file.clone();
    f.sections.retain(|s| s.kind != SectionKind::DebugNames);
    f.flags &= !FLAG_HAS_DEBUG;
    f
}
