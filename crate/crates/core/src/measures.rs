//! Signed measures and bounded functions on a uniform grid of a real interval.
//!
//! A [`HybridMeasure`] is a list of weighted atoms plus one mass per cell. A
//! [`GridFunction`] carries one sample per cell midpoint and a separate sample
//! at the left endpoint, which age-structured models need for `f(0)`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition of `[lower, upper)` into `n_cells` cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    lower: f64,
    upper: f64,
    n_cells: usize,
}

impl Grid {
    pub fn new(lower: f64, upper: f64, n_cells: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must satisfy lower < upper, got [{lower}, {upper})"
            )));
        }
        if n_cells == 0 {
            return Err(Error::InvalidParameter("grid needs at least one cell".into()));
        }
        Ok(Self { lower, upper, n_cells })
    }

    /// Grid starting at `lower` with `n_cells` cells of width `spacing`.
    pub fn with_spacing(lower: f64, spacing: f64, n_cells: usize) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidParameter(format!("spacing must be positive, got {spacing}")));
        }
        Self::new(lower, lower + spacing * n_cells as f64, n_cells)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / self.n_cells as f64
    }

    pub fn left_edge(&self, cell: usize) -> f64 {
        self.lower + self.spacing() * cell as f64
    }

    pub fn midpoint(&self, cell: usize) -> f64 {
        self.lower + self.spacing() * (cell as f64 + 0.5)
    }

    pub fn midpoints(&self) -> Vec<f64> {
        (0..self.n_cells).map(|j| self.midpoint(j)).collect()
    }

    /// Index of the cell containing `x`, or `None` outside `[lower, upper)`.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if !(x >= self.lower && x < self.upper) {
            return None;
        }
        let j = ((x - self.lower) / self.spacing()).floor() as usize;
        Some(j.min(self.n_cells - 1))
    }

    fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "[{}, {}) x {} vs [{}, {}) x {}",
                self.lower, self.upper, self.n_cells, other.lower, other.upper, other.n_cells
            )))
        }
    }
}

/// A weighted point mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

/// Finite signed measure: atoms plus a piecewise-constant density stored as
/// cell masses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridMeasure {
    grid: Grid,
    density_weights: Vec<f64>,
    atoms: Vec<Atom>,
}

impl HybridMeasure {
    pub fn zero(grid: &Grid) -> Self {
        Self { grid: grid.clone(), density_weights: vec![0.0; grid.n_cells()], atoms: Vec::new() }
    }

    /// Measure with the given cell masses and no atoms.
    pub fn from_cells(grid: &Grid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "{} cell weights for a grid of {} cells",
                weights.len(),
                grid.n_cells()
            )));
        }
        Ok(Self { grid: grid.clone(), density_weights: weights, atoms: Vec::new() })
    }

    pub fn dirac(grid: &Grid, location: f64) -> Result<Self> {
        let mut mu = Self::zero(grid);
        mu.push_atom(location, 1.0)?;
        Ok(mu)
    }

    /// Normalized Lebesgue measure on the grid interval.
    pub fn uniform(grid: &Grid) -> Self {
        let w = 1.0 / grid.n_cells() as f64;
        Self { grid: grid.clone(), density_weights: vec![w; grid.n_cells()], atoms: Vec::new() }
    }

    pub fn push_atom(&mut self, location: f64, weight: f64) -> Result<()> {
        if self.grid.cell_of(location).is_none() {
            return Err(Error::InvalidParameter(format!(
                "atom at {location} outside [{}, {})",
                self.grid.lower(),
                self.grid.upper()
            )));
        }
        self.atoms.push(Atom { location, weight });
        Ok(())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn density_weights(&self) -> &[f64] {
        &self.density_weights
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn mass(&self) -> f64 {
        self.density_weights.iter().sum::<f64>() + self.atoms.iter().map(|a| a.weight).sum::<f64>()
    }

    /// Cell masses with every atom folded into its containing cell.
    pub fn project(&self) -> Vec<f64> {
        let mut w = self.density_weights.clone();
        for a in &self.atoms {
            if let Some(j) = self.grid.cell_of(a.location) {
                w[j] += a.weight;
            }
        }
        w
    }

    pub fn projected(&self) -> Self {
        Self { grid: self.grid.clone(), density_weights: self.project(), atoms: Vec::new() }
    }

    pub fn is_nonnegative(&self) -> bool {
        self.density_weights.iter().all(|&w| w >= 0.0) && self.atoms.iter().all(|a| a.weight >= 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            density_weights: self.density_weights.iter().map(|w| c * w).collect(),
            atoms: self.atoms.iter().map(|a| Atom { location: a.location, weight: c * a.weight }).collect(),
        }
    }

    /// Rescaled to total mass one.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.mass();
        if m == 0.0 || !m.is_finite() {
            return Err(Error::ZeroMass);
        }
        Ok(self.scaled(1.0 / m))
    }

    /// `self + c * other`.
    pub fn add_scaled(&self, c: f64, other: &Self) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        let density_weights =
            self.density_weights.iter().zip(&other.density_weights).map(|(a, b)| a + c * b).collect();
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().map(|a| Atom { location: a.location, weight: c * a.weight }));
        Ok(Self { grid: self.grid.clone(), density_weights, atoms })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    /// Atoms sorted by location with equal locations merged and zero weights dropped.
    pub fn merged_atoms(&self) -> Vec<Atom> {
        let mut atoms = self.atoms.clone();
        atoms.sort_by(|a, b| a.location.total_cmp(&b.location));
        let mut out: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match out.last_mut() {
                Some(last) if last.location == a.location => last.weight += a.weight,
                _ => out.push(a),
            }
        }
        out.retain(|a| a.weight != 0.0);
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["location", "weight"])?;
        for (j, &v) in self.density_weights.iter().enumerate() {
            w.write_record([fmt(self.grid.midpoint(j)), fmt(v)])?;
        }
        for a in self.merged_atoms() {
            w.write_record([format!("atom:{}", fmt(a.location)), fmt(a.weight)])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`HybridMeasure::write_csv`] for the given grid.
    pub fn read_csv<R: Read>(grid: &Grid, reader: R) -> Result<Self> {
        let mut mu = Self::zero(grid);
        let mut rdr = csv::Reader::from_reader(reader);
        let mut next = 0usize;
        for rec in rdr.records() {
            let rec = rec?;
            let loc = rec.get(0).unwrap_or_default();
            let weight = parse_f64(rec.get(1).unwrap_or_default())?;
            if let Some(x) = loc.strip_prefix("atom:") {
                mu.push_atom(parse_f64(x)?, weight)?;
            } else {
                if next >= grid.n_cells() {
                    return Err(Error::GridMismatch("more density rows than cells".into()));
                }
                mu.density_weights[next] = weight;
                next += 1;
            }
        }
        if next != grid.n_cells() {
            return Err(Error::GridMismatch(format!("{next} density rows for {} cells", grid.n_cells())));
        }
        Ok(mu)
    }
}

/// Bounded function sampled at cell midpoints, plus a sample at the left endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
    value_at_boundary_0: f64,
}

impl GridFunction {
    pub fn new(grid: &Grid, values: Vec<f64>, value_at_boundary_0: f64) -> Result<Self> {
        if values.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "{} samples for a grid of {} cells",
                values.len(),
                grid.n_cells()
            )));
        }
        Ok(Self { grid: grid.clone(), values, value_at_boundary_0 })
    }

    /// Cell samples; the boundary sample is taken from the first cell.
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        let b = values.first().copied().unwrap_or(0.0);
        Self::new(grid, values, b)
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: grid.clone(), values: grid.midpoints().into_iter().map(&f).collect(), value_at_boundary_0: f(grid.lower()) }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self { grid: grid.clone(), values: vec![c; grid.n_cells()], value_at_boundary_0: c }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value_at_boundary_0(&self) -> f64 {
        self.value_at_boundary_0
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(self.value_at_boundary_0.abs(), |m, v| m.max(v.abs()))
    }

    /// Nearest-sample evaluation; the exact left endpoint uses the boundary sample.
    pub fn eval(&self, x: f64) -> Option<f64> {
        if x == self.grid.lower() {
            return Some(self.value_at_boundary_0);
        }
        self.grid.cell_of(x).map(|j| self.values[j])
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["location", "value"])?;
        w.write_record([fmt(self.grid.lower()), fmt(self.value_at_boundary_0)])?;
        for (j, &v) in self.values.iter().enumerate() {
            w.write_record([fmt(self.grid.midpoint(j)), fmt(v)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(grid: &Grid, reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut vals = Vec::with_capacity(grid.n_cells() + 1);
        for rec in rdr.records() {
            let rec = rec?;
            vals.push(parse_f64(rec.get(1).unwrap_or_default())?);
        }
        if vals.len() != grid.n_cells() + 1 {
            return Err(Error::GridMismatch(format!("{} rows for {} cells", vals.len(), grid.n_cells())));
        }
        let b = vals.remove(0);
        Self::new(grid, vals, b)
    }
}

/// Total variation norm, with atoms at a common location merged first.
pub fn tv_norm(mu: &HybridMeasure) -> f64 {
    mu.density_weights.iter().map(|w| w.abs()).sum::<f64>()
        + mu.merged_atoms().iter().map(|a| a.weight.abs()).sum::<f64>()
}

/// `μ(f)`.
pub fn pair(mu: &HybridMeasure, f: &GridFunction) -> Result<f64> {
    mu.grid.check_same(&f.grid)?;
    let mut s: f64 = mu.density_weights.iter().zip(&f.values).map(|(w, v)| w * v).sum();
    for a in &mu.atoms {
        s += a.weight * f.eval(a.location).unwrap_or(0.0);
    }
    Ok(s)
}

/// Jordan decomposition `μ = μ₊ − μ₋`.
pub fn jordan(mu: &HybridMeasure) -> (HybridMeasure, HybridMeasure) {
    let plus_d = mu.density_weights.iter().map(|w| w.max(0.0)).collect();
    let minus_d = mu.density_weights.iter().map(|w| (-w).max(0.0)).collect();
    let atoms = mu.merged_atoms();
    let plus_a = atoms.iter().filter(|a| a.weight > 0.0).copied().collect();
    let minus_a =
        atoms.iter().filter(|a| a.weight < 0.0).map(|a| Atom { location: a.location, weight: -a.weight }).collect();
    (
        HybridMeasure { grid: mu.grid.clone(), density_weights: plus_d, atoms: plus_a },
        HybridMeasure { grid: mu.grid.clone(), density_weights: minus_d, atoms: minus_a },
    )
}

/// TV distance between two vectors of cell masses.
pub fn tv_cells(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub(crate) fn fmt(x: f64) -> String {
    format!("{x:.12e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::InvalidParameter(format!("bad number {s:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Grid {
        Grid::new(0.0, 1.0, 8).unwrap()
    }

    #[test]
    fn grid_rejects_bad_bounds() {
        assert!(Grid::new(1.0, 1.0, 3).is_err());
        assert!(Grid::new(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn cell_lookup() {
        let g = unit();
        assert_eq!(g.cell_of(0.0), Some(0));
        assert_eq!(g.cell_of(0.999), Some(7));
        assert_eq!(g.cell_of(1.0), None);
        assert!(g.midpoints().iter().all(|&m| m > 0.0 && m < 1.0));
    }

    #[test]
    fn tv_of_simple_measures() {
        let g = unit();
        assert_eq!(tv_norm(&HybridMeasure::zero(&g)), 0.0);
        let d = HybridMeasure::dirac(&g, 0.1).unwrap().sub(&HybridMeasure::dirac(&g, 0.7).unwrap()).unwrap();
        assert_eq!(tv_norm(&d), 2.0);
        assert!((tv_norm(&HybridMeasure::uniform(&g)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn shared_atoms_cancel() {
        let g = unit();
        let mut mu = HybridMeasure::zero(&g);
        mu.push_atom(0.3, 1.0).unwrap();
        mu.push_atom(0.3, -1.0).unwrap();
        assert_eq!(tv_norm(&mu), 0.0);
    }

    #[test]
    fn pairing_uses_boundary_sample_at_zero() {
        let g = unit();
        let f = GridFunction::new(&g, vec![2.0; 8], 5.0).unwrap();
        let d0 = HybridMeasure::dirac(&g, 0.0).unwrap();
        assert_eq!(pair(&d0, &f).unwrap(), 5.0);
        assert!((pair(&HybridMeasure::uniform(&g), &GridFunction::constant(&g, 1.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pairing_rejects_other_grid() {
        let mu = HybridMeasure::uniform(&unit());
        let f = GridFunction::constant(&Grid::new(0.0, 2.0, 8).unwrap(), 1.0);
        assert!(matches!(pair(&mu, &f), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn jordan_of_signed_measure() {
        let g = unit();
        let mu = HybridMeasure::from_cells(&g, vec![1.0, -2.0, 0.0, 0.5, -0.25, 0.0, 0.0, 3.0]).unwrap();
        let (p, m) = jordan(&mu);
        assert!(p.is_nonnegative() && m.is_nonnegative());
        let direct: f64 = mu.density_weights().iter().map(|w| w.abs()).sum();
        assert!((tv_norm(&mu) - direct).abs() < 1e-15);
        assert!((p.mass() + m.mass() - direct).abs() < 1e-15);
        let (p2, m2) = jordan(&mu.scaled(-1.0));
        assert_eq!(p2, m);
        assert_eq!(m2, p);
    }

    #[test]
    fn csv_roundtrip() {
        let g = unit();
        let mut mu = HybridMeasure::from_cells(&g, (0..8).map(|j| j as f64 * 0.1).collect()).unwrap();
        mu.push_atom(0.0, 0.25).unwrap();
        let mut buf = Vec::new();
        mu.write_csv(&mut buf).unwrap();
        let back = HybridMeasure::read_csv(&g, buf.as_slice()).unwrap();
        assert!(tv_norm(&back.sub(&mu).unwrap()) < 1e-11);

        let f = GridFunction::from_fn(&g, |x| x * x);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = GridFunction::read_csv(&g, buf.as_slice()).unwrap();
        assert_eq!(back.value_at_boundary_0(), 0.0);
        assert!((back.values()[3] - f.values()[3]).abs() < 1e-12);
    }
}
