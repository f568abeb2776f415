//! Per-voxel semantic and instance histograms.
//!
//! The semantic histogram is dense over the class table; the instance
//! histogram is sparse and bounded to 16 entries, evicting the smallest
//! entry when full. Both keep cached sums that are recomputed from the
//! visible entries on every mutation, so a histogram's observable state
//! is always a pure function of its entries.

use crate::classes::{ClassId, ClassTable};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HistogramError {
    #[error("histogram mass must be positive, got {0}")]
    NonPositiveMass(f64),
}

/// Dense semantic histogram h^L with cached total and stuff mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticHistogram {
    bins: Vec<f64>,
    total: f64,
    stuff_mass: f64,
}

impl SemanticHistogram {
    pub fn new(num_classes: usize) -> Self {
        Self {
            bins: vec![0.0; num_classes],
            total: 0.0,
            stuff_mass: 0.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bins.len()
    }

    pub fn bin(&self, class_id: ClassId) -> f64 {
        self.bins[class_id as usize]
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn stuff_mass(&self) -> f64 {
        self.stuff_mass
    }

    pub fn is_unobserved(&self) -> bool {
        self.total == 0.0
    }

    pub fn add(&mut self, class_id: ClassId, mass: f64, table: &ClassTable) -> Result<(), HistogramError> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(HistogramError::NonPositiveMass(mass));
        }
        self.bins[class_id as usize] += mass;
        self.recompute_caches(table);
        Ok(())
    }

    /// Stuff proportion of the observed mass; 0 when unobserved.
    pub fn stuff_proportion(&self) -> f64 {
        if self.total > 0.0 {
            self.stuff_mass / self.total
        } else {
            0.0
        }
    }

    /// Argmax over all non-void classes, lowest id on ties. None when
    /// the histogram is empty.
    pub fn argmax(&self) -> Option<ClassId> {
        argmax_bins(self.bins.iter().copied().enumerate().skip(1))
    }

    /// Argmax restricted to thing classes, lowest id on ties.
    pub fn argmax_thing(&self, table: &ClassTable) -> Option<ClassId> {
        argmax_bins(
            self.bins
                .iter()
                .copied()
                .enumerate()
                .filter(|(id, _)| table.is_thing(*id as ClassId)),
        )
    }

    /// Rebuild the cached sums by scanning the bins in id order.
    pub fn recompute_caches(&mut self, table: &ClassTable) {
        let mut total = 0.0;
        let mut stuff = 0.0;
        for (id, &mass) in self.bins.iter().enumerate() {
            total += mass;
            if table.is_stuff(id as ClassId) {
                stuff += mass;
            }
        }
        self.total = total;
        self.stuff_mass = stuff;
    }

    /// Reconstruct from raw bins (deserialization path).
    pub fn from_bins(bins: Vec<f64>, table: &ClassTable) -> Self {
        let mut h = Self {
            bins,
            total: 0.0,
            stuff_mass: 0.0,
        };
        h.recompute_caches(table);
        h
    }
}

fn argmax_bins(iter: impl Iterator<Item = (usize, f64)>) -> Option<ClassId> {
    let mut best: Option<(usize, f64)> = None;
    for (id, mass) in iter {
        if mass <= 0.0 {
            continue;
        }
        match best {
            Some((_, m)) if mass <= m => {}
            _ => best = Some((id, mass)),
        }
    }
    best.map(|(id, _)| id as ClassId)
}

pub const MAX_INSTANCE_ENTRIES: usize = 16;

/// One (global instance id, accumulated mass) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceEntry {
    pub id: u64,
    pub mass: f64,
}

/// Sparse bounded instance histogram h^Z, kept sorted by mass
/// descending (ties by id ascending). At the 16-entry limit a new id
/// replaces the smallest entry; the cached total then tracks only the
/// surviving entries.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InstanceHistogram {
    entries: Vec<InstanceEntry>,
    total: f64,
}

impl InstanceHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[InstanceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn mass_of(&self, id: u64) -> Option<f64> {
        self.entries.iter().find(|e| e.id == id).map(|e| e.mass)
    }

    pub fn add(&mut self, id: u64, mass: f64) -> Result<(), HistogramError> {
        if !(mass > 0.0) || !mass.is_finite() {
            return Err(HistogramError::NonPositiveMass(mass));
        }
        if let Some(entry) = self.entries.iter_mut().find(|e| e.id == id) {
            entry.mass += mass;
        } else {
            if self.entries.len() == MAX_INSTANCE_ENTRIES {
                // Sorted descending, so the smallest entry is last.
                self.entries.pop();
            }
            self.entries.push(InstanceEntry { id, mass });
        }
        self.normalize();
        Ok(())
    }

    /// Argmax by mass, lowest id on ties; the head of the sorted order.
    pub fn argmax(&self) -> Option<u64> {
        self.entries.first().map(|e| e.id)
    }

    /// Ids whose cumulative mass fraction, accumulated from the
    /// smallest entry upward, reaches at least `1 - theta_b`. These are
    /// the instances worth back-projecting for matching.
    pub fn top_ids(&self, theta_b: f64) -> Vec<u64> {
        let cutoff = 1.0 - theta_b;
        let mut out = Vec::new();
        if self.total <= 0.0 {
            return out;
        }
        let mut cum = 0.0;
        // Ascending scan: entries() is descending, so walk backwards.
        for entry in self.entries.iter().rev() {
            cum += entry.mass / self.total;
            if cum >= cutoff {
                out.push(entry.id);
            }
        }
        out.sort_unstable();
        out
    }

    /// Cumulative-mass membership test for one id (Eq.-style gate used
    /// by the tracker). False when the id is absent.
    pub fn is_in_top(&self, id: u64, theta_b: f64) -> bool {
        if self.total <= 0.0 {
            return false;
        }
        let mut cum = 0.0;
        for entry in self.entries.iter().rev() {
            cum += entry.mass / self.total;
            if entry.id == id {
                return cum >= 1.0 - theta_b;
            }
        }
        false
    }

    fn normalize(&mut self) {
        // Mass descending, id ascending on equal mass.
        self.entries.sort_by(|a, b| {
            b.mass
                .partial_cmp(&a.mass)
                .unwrap()
                .then_with(|| a.id.cmp(&b.id))
        });
        self.total = self.entries.iter().map(|e| e.mass).sum();
    }

    /// Reconstruct from raw entries (deserialization path).
    pub fn from_entries(entries: Vec<InstanceEntry>) -> Self {
        let mut h = Self {
            entries,
            total: 0.0,
        };
        h.normalize();
        h
    }
}
