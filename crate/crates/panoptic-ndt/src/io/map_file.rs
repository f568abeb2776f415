//! Bit-stable binary map serialization.
//!
//! Little-endian layout:
//!   magic "PNDT" | version u32 | voxel_size f64
//!   class count u32, then per class: id u8, kind u8 (0 void, 1 stuff,
//!     2 thing), name length u32, name bytes
//!   next_global_id u64 | voxel count u64
//!   per voxel, ascending by index:
//!     ix iy iz (3 x i64) | n u64 | sum (3 x f64)
//!     sqsum upper triangle (xx xy xz yy yz zz, 6 x f64)
//!     log-odds f64 | nL u64 | nZ u64
//!     semantic bins (|L| x f64)
//!     instance entry count u8 (<= 16), then per entry id u64, mass f64

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::classes::{ClassDef, ClassKind, ClassTable};
use crate::histogram::{InstanceEntry, InstanceHistogram, SemanticHistogram, MAX_INSTANCE_ENTRIES};
use crate::map::{NdtShape, NdtVoxel, PanopticMap, VoxelIndex};

pub const MAP_MAGIC: [u8; 4] = *b"PNDT";
pub const MAP_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MapFileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad magic: expected \"PNDT\"")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("truncated file in {section} at byte {offset}")]
    Truncated { section: String, offset: usize },
    #[error("voxel record {record}: instance entry count {count} exceeds 16")]
    TooManyInstanceEntries { record: usize, count: u8 },
    #[error("invalid class table: {0}")]
    Classes(String),
    #[error("invalid field in {section}: {message}")]
    BadField { section: String, message: String },
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    section: String,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self {
            buf,
            pos: 0,
            section: "header".to_string(),
        }
    }

    fn section(&mut self, name: impl Into<String>) {
        self.section = name.into();
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MapFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let slice = &self.buf[self.pos..end];
                self.pos = end;
                Ok(slice)
            }
            None => Err(MapFileError::Truncated {
                section: self.section.clone(),
                offset: self.pos,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8, MapFileError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, MapFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, MapFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, MapFileError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, MapFileError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Serialize the map to deterministic bytes.
pub fn map_to_bytes(map: &PanopticMap) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAP_MAGIC);
    out.extend_from_slice(&MAP_VERSION.to_le_bytes());
    out.extend_from_slice(&map.voxel_size().to_le_bytes());

    let defs = map.class_table().defs();
    out.extend_from_slice(&(defs.len() as u32).to_le_bytes());
    for def in defs {
        out.push(def.id);
        out.push(match def.kind {
            ClassKind::Void => 0,
            ClassKind::Stuff => 1,
            ClassKind::Thing => 2,
        });
        out.extend_from_slice(&(def.name.len() as u32).to_le_bytes());
        out.extend_from_slice(def.name.as_bytes());
    }
    out.extend_from_slice(&map.next_global_id().to_le_bytes());

    let indices = map.sorted_indices();
    out.extend_from_slice(&(indices.len() as u64).to_le_bytes());
    for index in indices {
        let voxel = map.voxel(index).expect("sorted index exists");
        out.extend_from_slice(&index.ix.to_le_bytes());
        out.extend_from_slice(&index.iy.to_le_bytes());
        out.extend_from_slice(&index.iz.to_le_bytes());
        out.extend_from_slice(&voxel.shape.count().to_le_bytes());
        let sum = voxel.shape.sum();
        for v in [sum.x, sum.y, sum.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let sq = voxel.shape.sqsum();
        for (r, c) in [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)] {
            out.extend_from_slice(&sq[(r, c)].to_le_bytes());
        }
        out.extend_from_slice(&voxel.log_odds().to_le_bytes());
        out.extend_from_slice(&voxel.n_sem.to_le_bytes());
        out.extend_from_slice(&voxel.n_inst.to_le_bytes());
        for &bin in voxel.sem.bins() {
            out.extend_from_slice(&bin.to_le_bytes());
        }
        let entries = voxel.inst.entries();
        out.push(entries.len() as u8);
        for e in entries {
            out.extend_from_slice(&e.id.to_le_bytes());
            out.extend_from_slice(&e.mass.to_le_bytes());
        }
    }
    out
}

/// Parse a map from bytes, with positional diagnostics on corruption.
pub fn map_from_bytes(bytes: &[u8]) -> Result<PanopticMap, MapFileError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MAP_MAGIC {
        return Err(MapFileError::BadMagic);
    }
    let version = r.u32()?;
    if version != MAP_VERSION {
        return Err(MapFileError::BadVersion(version));
    }
    let voxel_size = r.f64()?;

    r.section("class table");
    let class_count = r.u32()? as usize;
    let mut defs = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let id = r.u8()?;
        let kind = match r.u8()? {
            0 => ClassKind::Void,
            1 => ClassKind::Stuff,
            2 => ClassKind::Thing,
            other => {
                return Err(MapFileError::BadField {
                    section: "class table".to_string(),
                    message: format!("unknown class kind {}", other),
                })
            }
        };
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| MapFileError::BadField {
                section: "class table".to_string(),
                message: "class name is not utf8".to_string(),
            })?
            .to_string();
        defs.push(ClassDef { id, name, kind });
    }
    let table = ClassTable::from_defs(defs).map_err(|e| MapFileError::Classes(e.to_string()))?;
    let num_classes = table.len();

    let next_global_id = r.u64()?;
    let voxel_count = r.u64()? as usize;

    let mut map = PanopticMap::new(voxel_size, table.clone()).map_err(|e| MapFileError::BadField {
        section: "header".to_string(),
        message: e.to_string(),
    })?;
    map.set_next_global_id(next_global_id);

    for record in 0..voxel_count {
        r.section(format!("voxel record {}", record));
        let index = VoxelIndex::new(r.i64()?, r.i64()?, r.i64()?);
        let n = r.u64()?;
        let sum = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
        let (xx, xy, xz, yy, yz, zz) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let sqsum = Matrix3::new(xx, xy, xz, xy, yy, yz, xz, yz, zz);
        let log_odds = r.f64()?;
        let n_sem = r.u64()?;
        let n_inst = r.u64()?;
        let mut bins = Vec::with_capacity(num_classes);
        for _ in 0..num_classes {
            bins.push(r.f64()?);
        }
        let entry_count = r.u8()?;
        if entry_count as usize > MAX_INSTANCE_ENTRIES {
            return Err(MapFileError::TooManyInstanceEntries {
                record,
                count: entry_count,
            });
        }
        let mut entries = Vec::with_capacity(entry_count as usize);
        for _ in 0..entry_count {
            entries.push(InstanceEntry {
                id: r.u64()?,
                mass: r.f64()?,
            });
        }

        let mut voxel = NdtVoxel::new(num_classes);
        voxel.shape = NdtShape::from_raw(n, sum, sqsum);
        voxel.set_log_odds(log_odds);
        voxel.sem = SemanticHistogram::from_bins(bins, &table);
        voxel.inst = InstanceHistogram::from_entries(entries);
        voxel.n_sem = n_sem;
        voxel.n_inst = n_inst;
        map.insert_voxel(index, voxel);
    }
    if !r.done() {
        return Err(MapFileError::BadField {
            section: "trailer".to_string(),
            message: format!("{} unexpected trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok(map)
}

pub fn save_map(map: &PanopticMap, path: &Path) -> Result<(), MapFileError> {
    fs::write(path, map_to_bytes(map)).map_err(|source| MapFileError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_map(path: &Path) -> Result<PanopticMap, MapFileError> {
    let bytes = fs::read(path).map_err(|source| MapFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    map_from_bytes(&bytes)
}
