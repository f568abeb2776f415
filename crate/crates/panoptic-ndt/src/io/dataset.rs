//! The dataset directory: per-frame PGM rasters plus plain-text pose,
//! intrinsics, class and cloud files. Simulator output and real
//! datasets are interchangeable through this format.
//!
//! Layout, with a zero-padded 6-digit frame index:
//!   classes.txt            one `id name stuff|thing` line per class
//!   intrinsics.txt         fx fy cx cy width height
//!   cloud.txt              optional; `x y z class_id instance_id` lines
//!   NNNNNN.pose.txt        16 numbers, row-major 4x4 camera-to-world
//!   NNNNNN.depth.pgm       16-bit, millimeters, 0 = invalid
//!   NNNNNN.sem.pgm         8-bit class ids
//!   NNNNNN.inst.pgm        16-bit frame-local instance ids
//!   NNNNNN.sem_score.pgm   optional 16-bit, value / 65535
//!   NNNNNN.inst_score.pgm  optional 16-bit, value / 65535

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::classes::{ClassDef, ClassKind, ClassTable};
use crate::eval::{GroundTruthCloud, GtPoint};
use crate::frame::PanopticFrame;
use crate::geometry::{Intrinsics, Pose};
use crate::raster::Raster;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: raster is {got_w}x{got_h}, expected {want_w}x{want_h}")]
    SizeMismatch {
        path: PathBuf,
        got_w: u32,
        got_h: u32,
        want_w: u32,
        want_h: u32,
    },
    #[error("dataset at {0} contains no frames")]
    Empty(PathBuf),
    #[error("invalid class table: {0}")]
    Classes(String),
    #[error("invalid frame data: {0}")]
    Frame(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------- PGM

fn write_pgm_header(out: &mut Vec<u8>, width: u32, height: u32, maxval: u32) {
    out.extend_from_slice(format!("P5\n{} {}\n{}\n", width, height, maxval).as_bytes());
}

pub fn write_pgm8(path: &Path, raster: &Raster<u8>) -> Result<(), DatasetError> {
    let mut out = Vec::with_capacity(raster.len() + 32);
    write_pgm_header(&mut out, raster.width(), raster.height(), 255);
    out.extend_from_slice(raster.data());
    fs::write(path, out).map_err(io_err(path))
}

pub fn write_pgm16(path: &Path, raster: &Raster<u16>) -> Result<(), DatasetError> {
    let mut out = Vec::with_capacity(raster.len() * 2 + 32);
    write_pgm_header(&mut out, raster.width(), raster.height(), 65535);
    for &v in raster.data() {
        // PGM stores the most significant byte first.
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(io_err(path))
}

struct PgmHeader {
    width: u32,
    height: u32,
    maxval: u32,
    data_offset: usize,
}

fn parse_pgm_header(path: &Path, bytes: &[u8]) -> Result<PgmHeader, DatasetError> {
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(parse_err(path, "not a binary PGM (missing P5 magic)"));
    }
    // Three whitespace-separated fields after the magic; comments are
    // not supported.
    let mut fields = Vec::new();
    let mut pos = 2;
    while fields.len() < 3 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            break;
        }
        let field = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| parse_err(path, "non-utf8 header"))?;
        fields.push(
            field
                .parse::<u32>()
                .map_err(|_| parse_err(path, format!("bad header field {:?}", field)))?,
        );
    }
    if fields.len() != 3 {
        return Err(parse_err(path, "truncated PGM header"));
    }
    // Exactly one whitespace byte separates maxval from the data.
    pos += 1;
    Ok(PgmHeader {
        width: fields[0],
        height: fields[1],
        maxval: fields[2],
        data_offset: pos,
    })
}

pub fn read_pgm8(path: &Path) -> Result<Raster<u8>, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let header = parse_pgm_header(path, &bytes)?;
    if header.maxval != 255 {
        return Err(parse_err(path, format!("expected maxval 255, got {}", header.maxval)));
    }
    let n = header.width as usize * header.height as usize;
    let data = bytes
        .get(header.data_offset..header.data_offset + n)
        .ok_or_else(|| parse_err(path, "truncated pixel data"))?;
    Ok(Raster::from_vec(header.width, header.height, data.to_vec()))
}

pub fn read_pgm16(path: &Path) -> Result<Raster<u16>, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let header = parse_pgm_header(path, &bytes)?;
    if header.maxval != 65535 {
        return Err(parse_err(path, format!("expected maxval 65535, got {}", header.maxval)));
    }
    let n = header.width as usize * header.height as usize;
    let data = bytes
        .get(header.data_offset..header.data_offset + 2 * n)
        .ok_or_else(|| parse_err(path, "truncated pixel data"))?;
    let values = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(Raster::from_vec(header.width, header.height, values))
}

// ------------------------------------------------------- quantization

pub fn depth_to_mm(depth: &Raster<f64>) -> Raster<u16> {
    depth.map(|&d| {
        if d.is_finite() && d > 0.0 {
            (d * 1000.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        }
    })
}

pub fn mm_to_depth(mm: &Raster<u16>) -> Raster<f64> {
    mm.map(|&v| v as f64 / 1000.0)
}

pub fn score_to_u16(score: &Raster<f64>) -> Raster<u16> {
    score.map(|&s| (s * 65535.0).round().clamp(0.0, 65535.0) as u16)
}

pub fn u16_to_score(raw: &Raster<u16>) -> Raster<f64> {
    raw.map(|&v| v as f64 / 65535.0)
}

/// The frame as it survives a write/read cycle: depth quantized to
/// millimeters, scores to 16-bit steps.
pub fn quantize_frame(frame: &PanopticFrame) -> PanopticFrame {
    let mut out = frame.clone();
    out.depth = mm_to_depth(&depth_to_mm(&frame.depth));
    out.sem_score = u16_to_score(&score_to_u16(&frame.sem_score));
    out.inst_score = u16_to_score(&score_to_u16(&frame.inst_score));
    out
}

// ------------------------------------------------------ text formats

pub fn write_classes(path: &Path, table: &ClassTable) -> Result<(), DatasetError> {
    let mut out = String::new();
    for def in table.defs() {
        if def.kind == ClassKind::Void {
            continue;
        }
        let kind = match def.kind {
            ClassKind::Stuff => "stuff",
            ClassKind::Thing => "thing",
            ClassKind::Void => unreachable!(),
        };
        out.push_str(&format!("{} {} {}\n", def.id, def.name, kind));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_classes(path: &Path) -> Result<ClassTable, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut defs = vec![ClassDef {
        id: 0,
        name: "void".to_string(),
        kind: ClassKind::Void,
    }];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(id), Some(name), Some(kind), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(parse_err(path, format!("line {}: expected `id name kind`", lineno + 1)));
        };
        let id: u8 = id
            .parse()
            .map_err(|_| parse_err(path, format!("line {}: bad class id", lineno + 1)))?;
        let kind = match kind {
            "stuff" => ClassKind::Stuff,
            "thing" => ClassKind::Thing,
            "void" if id == 0 => continue,
            other => {
                return Err(parse_err(
                    path,
                    format!("line {}: unknown kind {:?}", lineno + 1, other),
                ))
            }
        };
        defs.push(ClassDef {
            id,
            name: name.to_string(),
            kind,
        });
    }
    ClassTable::from_defs(defs).map_err(|e| DatasetError::Classes(e.to_string()))
}

pub fn write_intrinsics(path: &Path, intr: &Intrinsics) -> Result<(), DatasetError> {
    fs::write(
        path,
        format!(
            "{} {} {} {} {} {}\n",
            intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height
        ),
    )
    .map_err(io_err(path))
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 6 {
        return Err(parse_err(path, "expected `fx fy cx cy width height`"));
    }
    let f = |i: usize| -> Result<f64, DatasetError> {
        fields[i]
            .parse()
            .map_err(|_| parse_err(path, format!("bad number {:?}", fields[i])))
    };
    let d = |i: usize| -> Result<u32, DatasetError> {
        fields[i]
            .parse()
            .map_err(|_| parse_err(path, format!("bad integer {:?}", fields[i])))
    };
    Intrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, d(4)?, d(5)?)
        .map_err(|e| parse_err(path, e.to_string()))
}

pub fn write_pose(path: &Path, pose: &Pose) -> Result<(), DatasetError> {
    let r = pose.rotation();
    let t = pose.translation();
    let rows = [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let mut out = String::new();
    for row in rows {
        out.push_str(&format!("{} {} {} {}\n", row[0], row[1], row[2], row[3]));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_pose(path: &Path) -> Result<Pose, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let values: Result<Vec<f64>, _> = text.split_whitespace().map(str::parse).collect();
    let values = values.map_err(|_| parse_err(path, "bad number in pose"))?;
    if values.len() != 16 {
        return Err(parse_err(path, format!("expected 16 values, got {}", values.len())));
    }
    let m = &values;
    let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
    let translation = Vector3::new(m[3], m[7], m[11]);
    Pose::new(rotation, translation).map_err(|e| parse_err(path, e.to_string()))
}

pub fn write_cloud(path: &Path, cloud: &GroundTruthCloud) -> Result<(), DatasetError> {
    let mut out = String::new();
    for p in &cloud.points {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            p.position.x, p.position.y, p.position.z, p.class_id, p.instance_id
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_cloud(path: &Path) -> Result<GroundTruthCloud, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(parse_err(
                path,
                format!("line {}: expected `x y z class instance`", lineno + 1),
            ));
        }
        let num = |i: usize| -> Result<f64, DatasetError> {
            fields[i]
                .parse()
                .map_err(|_| parse_err(path, format!("line {}: bad number", lineno + 1)))
        };
        points.push(GtPoint {
            position: Vector3::new(num(0)?, num(1)?, num(2)?),
            class_id: fields[3]
                .parse()
                .map_err(|_| parse_err(path, format!("line {}: bad class", lineno + 1)))?,
            instance_id: fields[4]
                .parse()
                .map_err(|_| parse_err(path, format!("line {}: bad instance", lineno + 1)))?,
        });
    }
    Ok(GroundTruthCloud { points })
}

// ---------------------------------------------------------- datasets

fn frame_path(dir: &Path, index: usize, suffix: &str) -> PathBuf {
    dir.join(format!("{:06}.{}", index, suffix))
}

/// Write frames as a dataset directory. Depth and scores are quantized
/// to the file resolution; reading the directory back reproduces
/// exactly the quantized frames.
pub fn write_dataset(
    dir: &Path,
    table: &ClassTable,
    frames: &[PanopticFrame],
) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_classes(&dir.join("classes.txt"), table)?;
    if let Some(first) = frames.first() {
        write_intrinsics(&dir.join("intrinsics.txt"), &first.intr)?;
    }
    for (i, frame) in frames.iter().enumerate() {
        write_pose(&frame_path(dir, i, "pose.txt"), &frame.pose)?;
        write_pgm16(&frame_path(dir, i, "depth.pgm"), &depth_to_mm(&frame.depth))?;
        write_pgm8(&frame_path(dir, i, "sem.pgm"), &frame.sem)?;
        write_pgm16(&frame_path(dir, i, "inst.pgm"), &frame.inst)?;
        write_pgm16(
            &frame_path(dir, i, "sem_score.pgm"),
            &score_to_u16(&frame.sem_score),
        )?;
        write_pgm16(
            &frame_path(dir, i, "inst_score.pgm"),
            &score_to_u16(&frame.inst_score),
        )?;
    }
    Ok(())
}

/// Read a dataset directory: class table, intrinsics and all frames
/// with contiguous indices from 0. Missing score rasters default to 1.
pub fn read_dataset(dir: &Path) -> Result<(ClassTable, Intrinsics, Vec<PanopticFrame>), DatasetError> {
    let table = read_classes(&dir.join("classes.txt"))?;
    let intr = read_intrinsics(&dir.join("intrinsics.txt"))?;
    let mut frames = Vec::new();
    for index in 0.. {
        let depth_path = frame_path(dir, index, "depth.pgm");
        if !depth_path.exists() {
            break;
        }
        let depth_mm = read_pgm16(&depth_path)?;
        check_size(&depth_path, depth_mm.width(), depth_mm.height(), &intr)?;
        let sem = read_pgm8(&frame_path(dir, index, "sem.pgm"))?;
        check_size(&frame_path(dir, index, "sem.pgm"), sem.width(), sem.height(), &intr)?;
        let inst = read_pgm16(&frame_path(dir, index, "inst.pgm"))?;
        check_size(&frame_path(dir, index, "inst.pgm"), inst.width(), inst.height(), &intr)?;
        let pose = read_pose(&frame_path(dir, index, "pose.txt"))?;

        let sem_score = {
            let p = frame_path(dir, index, "sem_score.pgm");
            if p.exists() {
                let r = read_pgm16(&p)?;
                check_size(&p, r.width(), r.height(), &intr)?;
                u16_to_score(&r)
            } else {
                Raster::filled(intr.width, intr.height, 1.0)
            }
        };
        let inst_score = {
            let p = frame_path(dir, index, "inst_score.pgm");
            if p.exists() {
                let r = read_pgm16(&p)?;
                check_size(&p, r.width(), r.height(), &intr)?;
                u16_to_score(&r)
            } else {
                Raster::filled(intr.width, intr.height, 1.0)
            }
        };

        let frame = PanopticFrame::new(
            mm_to_depth(&depth_mm),
            sem,
            inst,
            sem_score,
            inst_score,
            pose,
            intr,
        )
        .map_err(|e| DatasetError::Frame(format!("frame {}: {}", index, e)))?;
        frames.push(frame);
    }
    if frames.is_empty() {
        return Err(DatasetError::Empty(dir.to_path_buf()));
    }
    Ok((table, intr, frames))
}

fn check_size(path: &Path, w: u32, h: u32, intr: &Intrinsics) -> Result<(), DatasetError> {
    if w != intr.width || h != intr.height {
        return Err(DatasetError::SizeMismatch {
            path: path.to_path_buf(),
            got_w: w,
            got_h: h,
            want_w: intr.width,
            want_h: intr.height,
        });
    }
    Ok(())
}

/// Writer used by report outputs.
pub fn write_text(path: &Path, text: &str) -> Result<(), DatasetError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(text.as_bytes()).map_err(io_err(path))
}
