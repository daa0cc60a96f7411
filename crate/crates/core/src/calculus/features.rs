use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::PathEnsemble;
use crate::table::PathTable;

/// Information flow: the noise filtration, or its enlargement by the whole
/// intensity path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flow {
    F,
    G,
}

/// Observable summary statistic at a grid node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "feature", content = "mark")]
pub enum Feature {
    /// `B(t_n)`.
    BrownianLevel,
    /// Compensated jump count of mark `k >= 1` up to `t_n`.
    JumpLevel(usize),
    /// `sum_k z_k H~(t_n, k)`.
    CompoundJumpLevel,
    /// Elapsed Brownian clock `int_0^{t_n} lambda^B`.
    ElapsedClockB,
    ElapsedClockH,
    /// Intensity on the cell starting at `t_n` (predictable).
    IntensityB,
    IntensityH,
    /// Forward state `X(t_n)`.
    State,
    /// `1 / X(t_n)`.
    StateReciprocal,
    /// Total clock `int_0^T lambda^B`; knowable only under G.
    TotalClockB,
    TotalClockH,
}

impl Feature {
    pub fn requires_g(self) -> bool {
        matches!(self, Feature::TotalClockB | Feature::TotalClockH)
    }

    pub fn requires_state(self) -> bool {
        matches!(self, Feature::State | Feature::StateReciprocal)
    }

    /// Value on path `p` at node `n`; `state` is `X(t_n)` when needed.
    pub fn value(self, ens: &PathEnsemble, p: usize, n: usize, state: Option<f64>) -> Result<f64> {
        let big_n = ens.cells();
        Ok(match self {
            Feature::BrownianLevel => ens.brownian_level(p, n),
            Feature::JumpLevel(k) => {
                if k == 0 || k > ens.marks().jump_count() {
                    return Err(invalid(format!("jump level feature for unknown mark {k}")));
                }
                ens.jump_level(p, n, k)
            }
            Feature::CompoundJumpLevel => ens.compound_level(p, n),
            Feature::ElapsedClockB => ens.clock_b(p, n),
            Feature::ElapsedClockH => ens.clock_h(p, n),
            Feature::IntensityB => ens.lambda_at(p, n).0,
            Feature::IntensityH => ens.lambda_at(p, n).1,
            Feature::State => state.ok_or_else(missing_state)?,
            Feature::StateReciprocal => {
                let x = state.ok_or_else(missing_state)?;
                if x == 0.0 {
                    return Err(Error::NumericalBlowup {
                        cell: n,
                        detail: "reciprocal state feature at X = 0".into(),
                    });
                }
                1.0 / x
            }
            Feature::TotalClockB => ens.clock_b(p, big_n),
            Feature::TotalClockH => ens.clock_h(p, big_n),
        })
    }
}

fn missing_state() -> Error {
    invalid("state feature requested but no state table supplied")
}

/// A flow plus the features a regression or a player may observe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationLevel {
    pub flow: Flow,
    pub features: Vec<Feature>,
}

impl InformationLevel {
    pub fn new(flow: Flow, features: Vec<Feature>) -> Result<Self> {
        let level = Self { flow, features };
        level.validate()?;
        Ok(level)
    }

    pub fn validate(&self) -> Result<()> {
        if self.flow == Flow::F {
            if let Some(f) = self.features.iter().find(|f| f.requires_g()) {
                return Err(invalid(format!("feature {f:?} needs the enlarged flow")));
            }
        }
        Ok(())
    }

    /// Deterministic information: only the constant is observed.
    pub fn trivial(flow: Flow) -> Self {
        Self {
            flow,
            features: Vec::new(),
        }
    }

    /// Running noise levels of every mark, optionally with the state.
    pub fn noise_levels(flow: Flow, jump_marks: usize, with_state: bool) -> Self {
        let mut features = vec![Feature::BrownianLevel];
        features.extend((1..=jump_marks).map(Feature::JumpLevel));
        if with_state {
            features.push(Feature::State);
        }
        if flow == Flow::G {
            features.extend([Feature::TotalClockB, Feature::TotalClockH]);
        }
        Self { flow, features }
    }

    /// Features generating the intensity sigma-field.
    pub fn intensity_path() -> Self {
        Self {
            flow: Flow::G,
            features: vec![Feature::TotalClockB, Feature::TotalClockH],
        }
    }

    /// Sub-level observing only `subset`, which must be contained in this
    /// level's features.
    pub fn restrict(&self, subset: &[Feature]) -> Result<Self> {
        if let Some(f) = subset.iter().find(|f| !self.features.contains(f)) {
            return Err(invalid(format!("feature {f:?} is not observable at the parent level")));
        }
        Ok(Self {
            flow: self.flow,
            features: subset.to_vec(),
        })
    }

    /// Enlargement by the intensity path.
    pub fn enlarge(&self) -> Self {
        let mut features = self.features.clone();
        for f in [Feature::TotalClockB, Feature::TotalClockH] {
            if !features.contains(&f) {
                features.push(f);
            }
        }
        Self {
            flow: Flow::G,
            features,
        }
    }

    pub fn is_subset_of(&self, other: &InformationLevel) -> bool {
        self.features.iter().all(|f| other.features.contains(f))
            && !(self.flow == Flow::G && other.flow == Flow::F)
    }

    pub fn uses_state(&self) -> bool {
        self.features.iter().any(|f| f.requires_state())
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    /// Fill `out` with the features of path `p` at node `n`.
    pub fn row(
        &self,
        ens: &PathEnsemble,
        p: usize,
        n: usize,
        state: Option<f64>,
        out: &mut [f64],
    ) -> Result<()> {
        for (slot, f) in out.iter_mut().zip(&self.features) {
            *slot = f.value(ens, p, n, state)?;
        }
        Ok(())
    }

    /// Feature matrix at node `n`, row-major `paths x dim`.
    pub fn matrix(&self, ens: &PathEnsemble, n: usize, state: Option<&PathTable>) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut out = vec![0.0; ens.paths() * d];
        for p in 0..ens.paths() {
            let x = state.map(|s| s.get(p, n));
            if self.uses_state() && x.is_none() {
                return Err(missing_state());
            }
            self.row(ens, p, n, x, &mut out[p * d..(p + 1) * d])?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f_level_rejects_total_clock() {
        assert!(InformationLevel::new(Flow::F, vec![Feature::TotalClockB]).is_err());
        assert!(InformationLevel::new(Flow::G, vec![Feature::TotalClockB]).is_ok());
    }

    #[test]
    fn restriction_must_be_subset() {
        let parent = InformationLevel::noise_levels(Flow::F, 1, true);
        assert!(parent.restrict(&[Feature::State]).is_ok());
        assert!(parent.restrict(&[Feature::CompoundJumpLevel]).is_err());
        let child = parent.restrict(&[Feature::BrownianLevel]).unwrap();
        assert!(child.is_subset_of(&parent));
        assert!(parent.is_subset_of(&parent.enlarge()));
        assert!(!parent.enlarge().is_subset_of(&parent));
    }
}
