//! Mapped memory regions backing a shard.
//!
//! Shared regions are files under the shared-memory directory (`/dev/shm` on
//! Linux, overridable with `GEAR_SHM_DIR`) mapped `MAP_SHARED`, so every
//! process that opens the same name sees the same bytes. Private regions are
//! anonymous mappings visible to the creating process only.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use memmap2::{MmapMut, MmapOptions};

use crate::error::{GearError, Result};

/// Where a shard's bytes live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backing {
    /// Named shared region `gear.shard.<cluster_id>.<shard_id>`.
    Shared { cluster_id: String },
    /// Anonymous memory of the calling process.
    Private,
}

pub fn region_name(cluster_id: &str, shard_id: u64) -> String {
    format!("gear.shard.{cluster_id}.{shard_id}")
}

pub fn shm_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os("GEAR_SHM_DIR") {
        return PathBuf::from(dir);
    }
    let dev_shm = Path::new("/dev/shm");
    if dev_shm.is_dir() {
        dev_shm.to_path_buf()
    } else {
        std::env::temp_dir()
    }
}

pub fn region_path(name: &str) -> PathBuf {
    shm_dir().join(name)
}

/// A mapped, page-aligned byte region.
pub struct Region {
    map: MmapMut,
    name: Option<String>,
    unlink_on_drop: bool,
}

impl Region {
    pub fn create_shared(name: &str, len: usize) -> Result<Region> {
        let path = region_path(name);
        let err = |source| GearError::Region {
            name: name.to_string(),
            source,
        };
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(err)?;
        let mapped = file
            .set_len(len as u64)
            .and_then(|_| unsafe { MmapOptions::new().len(len).map_mut(&file) });
        match mapped {
            Ok(map) => Ok(Region {
                map,
                name: Some(name.to_string()),
                unlink_on_drop: true,
            }),
            Err(e) => {
                let _ = fs::remove_file(&path);
                Err(err(e))
            }
        }
    }

    pub fn open_shared(name: &str) -> Result<Region> {
        let path = region_path(name);
        let err = |source| GearError::Region {
            name: name.to_string(),
            source,
        };
        let file: File = OpenOptions::new()
            .read(true)
            .write(true)
            .open(&path)
            .map_err(err)?;
        let map = unsafe { MmapMut::map_mut(&file) }.map_err(err)?;
        Ok(Region {
            map,
            name: Some(name.to_string()),
            unlink_on_drop: false,
        })
    }

    pub fn private(len: usize) -> Result<Region> {
        let map = MmapMut::map_anon(len).map_err(|source| GearError::Region {
            name: "<private>".into(),
            source,
        })?;
        Ok(Region {
            map,
            name: None,
            unlink_on_drop: false,
        })
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn as_ptr(&self) -> *mut u8 {
        self.map.as_ptr() as *mut u8
    }

    /// Keep (or stop keeping) the backing file alive after this handle drops.
    pub fn set_unlink_on_drop(&mut self, unlink: bool) {
        self.unlink_on_drop = unlink;
    }

    pub fn flush(&self) -> Result<()> {
        Ok(self.map.flush()?)
    }
}

impl Drop for Region {
    fn drop(&mut self) {
        if self.unlink_on_drop {
            if let Some(name) = &self.name {
                let _ = fs::remove_file(region_path(name));
            }
        }
    }
}

/// Remove a named region left behind by a crashed creator.
pub fn unlink_region(name: &str) -> Result<()> {
    match fs::remove_file(region_path(name)) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(source) => Err(GearError::Region {
            name: name.to_string(),
            source,
        }),
    }
}
