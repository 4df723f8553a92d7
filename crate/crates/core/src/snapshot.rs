//! Binary snapshot framing shared by every persisted record.
//!
//! Layout: 8-byte magic, little-endian `u32` format version, little-endian
//! `u32` record kind, then the record payload as little-endian 64-bit words.

pub const MAGIC: &[u8; 8] = b"COCYCLE\0";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum SnapshotKind {
    WienerPath = 1,
    StationaryPoint = 2,
    Trajectory = 3,
}

impl SnapshotKind {
    pub fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(Self::WienerPath),
            2 => Some(Self::StationaryPoint),
            3 => Some(Self::Trajectory),
            _ => None,
        }
    }
}

pub fn header(kind: SnapshotKind) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(kind as u32).to_le_bytes());
    out
}

/// Reads the header of any snapshot, returning its kind.
pub fn peek_kind(bytes: &[u8]) -> Result<SnapshotKind, String> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err("missing snapshot magic".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(format!("unsupported snapshot version {version}"));
    }
    let kind = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    SnapshotKind::from_u32(kind).ok_or_else(|| format!("unknown snapshot kind {kind}"))
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn expect_header(&mut self, kind: SnapshotKind) -> Result<(), String> {
        let found = peek_kind(self.bytes)?;
        if found != kind {
            return Err(format!("expected a {kind:?} record, found {found:?}"));
        }
        self.pos = HEADER_LEN;
        Ok(())
    }

    pub fn u64(&mut self) -> Result<u64, String> {
        let end = self.pos + 8;
        let chunk = self.bytes.get(self.pos..end).ok_or("truncated record")?;
        self.pos = end;
        Ok(u64::from_le_bytes(chunk.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, String> {
        self.u64().map(f64::from_bits)
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, String> {
        let end = n.checked_mul(8).and_then(|b| b.checked_add(self.pos)).ok_or("size overflow")?;
        let chunk = self.bytes.get(self.pos..end).ok_or("truncated record")?;
        self.pos = end;
        Ok(chunk.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn finish(&self) -> Result<(), String> {
        if self.pos != self.bytes.len() {
            return Err(format!("{} trailing bytes", self.bytes.len() - self.pos));
        }
        Ok(())
    }
}

pub fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_sixteen_bytes() {
        let h = header(SnapshotKind::Trajectory);
        assert_eq!(h.len(), HEADER_LEN);
        assert_eq!(peek_kind(&h).unwrap(), SnapshotKind::Trajectory);
        assert!(peek_kind(b"nonsense-bytes!!").is_err());
    }
}
