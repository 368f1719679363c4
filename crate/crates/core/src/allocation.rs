//! The result type shared by every pipeline: each source element is split
//! into pieces, each piece sent to one destination point.

use alloc::vec;
use alloc::vec::Vec;

use crate::measures::{MassElement, Point, TorusBox, Window};

/// Which construction produced a piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Provenance {
    /// Sent to an atom of the destination.
    Disc,
    /// Sent into the diffuse part of the destination.
    Diff,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Disc => "DISC",
            Provenance::Diff => "DIFF",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    /// Index of the destination (atom index, or destination element id).
    pub dest: usize,
    pub location: Point,
    pub mass: f64,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub element: MassElement,
    /// Mass of the element this allocation was responsible for.
    pub offered: f64,
    pub pieces: Vec<Piece>,
}

impl Entry {
    pub fn allocated(&self) -> f64 {
        self.pieces.iter().map(|p| p.mass).sum()
    }

    pub fn unallocated(&self) -> f64 {
        (self.offered - self.allocated()).max(0.0)
    }

    /// The piece carrying the most mass, first one on ties.
    pub fn dominant(&self) -> Option<&Piece> {
        self.pieces
            .iter()
            .fold(None, |best: Option<&Piece>, p| match best {
                Some(b) if b.mass >= p.mass => Some(b),
                _ => Some(p),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub window: Window,
    pub entries: Vec<Entry>,
}

impl Allocation {
    pub fn new(window: Window, entries: Vec<Entry>) -> Self {
        Allocation { window, entries }
    }

    pub fn offered_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.offered).sum()
    }

    pub fn allocated_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.allocated()).sum()
    }

    pub fn unallocated_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.unallocated()).sum()
    }

    /// Received mass per destination index, for indices below `count`.
    pub fn cell_masses(&self, count: usize) -> Vec<f64> {
        let mut out = vec![0.0; count];
        for e in &self.entries {
            for p in &e.pieces {
                if p.dest < count {
                    out[p.dest] += p.mass;
                }
            }
        }
        out
    }

    /// Element ids sending some mass to destination `dest`.
    pub fn cell(&self, dest: usize) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.pieces.iter().any(|p| p.dest == dest))
            .map(|e| e.element.id)
            .collect()
    }

    /// Mass of the image measure in a box.
    pub fn image_mass_in_box(&self, b: &TorusBox) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.pieces.iter())
            .filter(|p| b.contains(&self.window, &p.location))
            .map(|p| p.mass)
            .sum()
    }

    /// Mass of the image measure at exactly `point`.
    pub fn image_mass_at(&self, point: &Point) -> f64 {
        self.entries
            .iter()
            .flat_map(|e| e.pieces.iter())
            .filter(|p| p.location == *point)
            .map(|p| p.mass)
            .sum()
    }
}
