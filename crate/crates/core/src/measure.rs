//! Finite point measures on the line and centring schemes.

use crate::error::{ensure, Result};
use crate::numerics::SQRT_2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Finite multiset of atoms, kept in ascending order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointMeasure {
    atoms: Vec<f64>,
}

impl PointMeasure {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Sorts the atoms. NaN is rejected.
    pub fn from_atoms(mut atoms: Vec<f64>) -> Result<Self> {
        ensure(atoms.iter().all(|a| !a.is_nan()), || "atoms must not be NaN".into())?;
        atoms.sort_by(f64::total_cmp);
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn into_atoms(self) -> Vec<f64> {
        self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Largest atom, `-inf` for the empty measure.
    pub fn max(&self) -> f64 {
        self.atoms.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Number of atoms `>= z`.
    pub fn count_above(&self, z: f64) -> usize {
        self.atoms.len() - self.atoms.partition_point(|&a| a < z)
    }

    /// Number of atoms strictly greater than `z`.
    pub fn count_strictly_above(&self, z: f64) -> usize {
        self.atoms.len() - self.atoms.partition_point(|&a| a <= z)
    }

    /// Number of atoms in the open interval `(lo, hi)`.
    pub fn count_open(&self, lo: f64, hi: f64) -> usize {
        let a = self.atoms.partition_point(|&x| x <= lo);
        let b = self.atoms.partition_point(|&x| x < hi);
        b.saturating_sub(a)
    }

    /// Atoms `>= a`.
    pub fn restrict_above(&self, a: f64) -> PointMeasure {
        let i = self.atoms.partition_point(|&x| x < a);
        PointMeasure {
            atoms: self.atoms[i..].to_vec(),
        }
    }

    /// Every atom moved by `c`.
    pub fn shifted(&self, c: f64) -> PointMeasure {
        PointMeasure {
            atoms: self.atoms.iter().map(|x| x + c).collect(),
        }
    }

    /// Every atom multiplied by `d > 0`.
    pub fn dilated(&self, d: f64) -> PointMeasure {
        debug_assert!(d > 0.0);
        PointMeasure {
            atoms: self.atoms.iter().map(|x| x * d).collect(),
        }
    }

    /// Sum of `f` over the atoms.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.atoms.iter().map(|&x| f(x)).sum()
    }

    /// Union of two measures.
    pub fn merged(&self, other: &PointMeasure) -> PointMeasure {
        let mut atoms = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        while i < self.atoms.len() && j < other.atoms.len() {
            if self.atoms[i] <= other.atoms[j] {
                atoms.push(self.atoms[i]);
                i += 1;
            } else {
                atoms.push(other.atoms[j]);
                j += 1;
            }
        }
        atoms.extend_from_slice(&self.atoms[i..]);
        atoms.extend_from_slice(&other.atoms[j..]);
        PointMeasure { atoms }
    }
}

/// `(max, number of atoms >= z)`.
pub fn max_and_counts(measure: &PointMeasure, z: f64) -> (f64, usize) {
    (measure.max(), measure.count_above(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenteringScheme {
    /// `sqrt2 t - 3/(2 sqrt2) log t`
    BbmThreehalves,
    /// `sqrt2 t - 1/(2 sqrt2) log t`
    BouOnehalf,
    /// `sqrt2 t - 1/(2 sqrt2) log(4 pi t)`
    BouTilde,
}

/// Centring function evaluated at a horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Centering {
    pub scheme: CenteringScheme,
    pub t: f64,
}

impl Centering {
    pub fn new(scheme: CenteringScheme, t: f64) -> Self {
        Self { scheme, t }
    }

    pub fn value(&self) -> f64 {
        let t = self.t;
        let lead = SQRT_2 * t;
        match self.scheme {
            CenteringScheme::BbmThreehalves => lead - 3.0 / (2.0 * SQRT_2) * t.ln(),
            CenteringScheme::BouOnehalf => lead - 1.0 / (2.0 * SQRT_2) * t.ln(),
            CenteringScheme::BouTilde => lead - 1.0 / (2.0 * SQRT_2) * (4.0 * PI * t).ln(),
        }
    }
}
