//! On-disk formats: the dataset directory, the binary map file, and
//! PLY point-cloud export.

pub mod dataset;
pub mod map_file;
pub mod ply;

pub use dataset::{
    read_cloud, read_dataset, read_pgm16, read_pgm8, write_cloud, write_dataset, write_pgm16,
    write_pgm8, DatasetError,
};
pub use map_file::{load_map, save_map, MapFileError};
pub use ply::{export_ply, PlyMode};
