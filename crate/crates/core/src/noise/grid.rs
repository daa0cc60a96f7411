use serde::{Deserialize, Serialize};

use crate::error::{ensure, invalid, Result};

/// Time grid `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    /// Uniform grid with `cells` cells over `[0, horizon]`.
    pub fn uniform(horizon: f64, cells: usize) -> Result<Self> {
        ensure(horizon.is_finite() && horizon > 0.0, || {
            format!("horizon must be positive and finite, got {horizon}")
        })?;
        ensure(cells >= 1, || "grid needs at least one cell".to_string())?;
        let h = horizon / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|i| i as f64 * h).collect();
        nodes[cells] = horizon;
        Ok(Self { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        ensure(nodes.len() >= 2, || "grid needs at least two nodes".to_string())?;
        if nodes[0] != 0.0 {
            return Err(invalid(format!("first node must be 0, got {}", nodes[0])));
        }
        for w in nodes.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(invalid(format!(
                    "nodes must be strictly increasing and finite ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { nodes })
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().expect("grid has nodes")
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    #[inline]
    pub fn width(&self, j: usize) -> f64 {
        self.nodes[j + 1] - self.nodes[j]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the node nearest to `t`.
    pub fn nearest_node(&self, t: f64) -> usize {
        let mut best = 0;
        let mut gap = f64::INFINITY;
        for (i, n) in self.nodes.iter().enumerate() {
            let d = (n - t).abs();
            if d < gap {
                gap = d;
                best = i;
            }
        }
        best
    }
}

/// Build a uniform grid with `cells` cells on `[0, horizon]`.
pub fn build_grid(horizon: f64, cells: usize) -> Result<TimeGrid> {
    TimeGrid::uniform(horizon, cells)
}

/// One jump mark of the discretised Levy measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpMark {
    pub size: f64,
    pub mass: f64,
}

/// Mark space: index 0 is the Brownian component, indices `1..=M` are jump
/// sizes carrying finite Levy mass.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarkSet {
    jumps: Vec<JumpMark>,
}

impl MarkSet {
    pub fn brownian_only() -> Self {
        Self { jumps: Vec::new() }
    }

    pub fn new(jumps: Vec<JumpMark>) -> Result<Self> {
        for (i, m) in jumps.iter().enumerate() {
            if m.size == 0.0 || !m.size.is_finite() {
                return Err(invalid(format!("jump mark {} must have a nonzero finite size", i + 1)));
            }
            if !(m.mass >= 0.0) || !m.mass.is_finite() {
                return Err(invalid(format!(
                    "jump mark {} must have a nonnegative finite mass, got {}",
                    i + 1,
                    m.mass
                )));
            }
        }
        Ok(Self { jumps })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(size, mass)| JumpMark { size, mass })
                .collect(),
        )
    }

    /// Total number of marks including the Brownian mark 0.
    pub fn len(&self) -> usize {
        self.jumps.len() + 1
    }

    pub fn jump_count(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn jumps(&self) -> &[JumpMark] {
        &self.jumps
    }

    /// Mark value `z_k`; zero for the Brownian mark.
    #[inline]
    pub fn size(&self, k: usize) -> f64 {
        if k == 0 {
            0.0
        } else {
            self.jumps[k - 1].size
        }
    }

    /// Levy mass `nu_k` of jump mark `k >= 1`.
    #[inline]
    pub fn mass(&self, k: usize) -> f64 {
        assert!(k >= 1, "mark 0 carries no Levy mass");
        self.jumps[k - 1].mass
    }

    pub fn total_mass(&self) -> f64 {
        self.jumps.iter().map(|m| m.mass).sum()
    }

    /// `sum_k z_k^2 nu_k`.
    pub fn second_moment(&self) -> f64 {
        self.jumps.iter().map(|m| m.size * m.size * m.mass).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_nodes() {
        let g = build_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = build_grid(2.0, 1).unwrap();
        assert_eq!(g.nodes(), &[0.0, 2.0]);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(build_grid(1.0, 0).is_err());
        assert!(build_grid(0.0, 3).is_err());
        assert!(build_grid(-1.0, 3).is_err());
        assert!(TimeGrid::from_nodes(vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::from_nodes(vec![0.1, 0.5]).is_err());
    }

    #[test]
    fn marks_validate() {
        assert!(MarkSet::from_pairs(&[(0.0, 1.0)]).is_err());
        assert!(MarkSet::from_pairs(&[(0.5, -1.0)]).is_err());
        let m = MarkSet::from_pairs(&[(0.5, 2.0), (-0.25, 4.0)]).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.size(0), 0.0);
        assert!((m.second_moment() - (0.25 * 2.0 + 0.0625 * 4.0)).abs() < 1e-15);
    }
}
