use serde::{Deserialize, Serialize};

use super::testfn::FinitelyBasedFunction;

/// Parameters of the bump lattice used as measure-separating family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    /// Coordinates `1..=d_max` carry bumps.
    pub d_max: usize,
    /// Number of centres per coordinate on the finest lattice level.
    pub per_dim: usize,
    /// Half-width of the box `[-R, R]^d_max` in which atoms are separated.
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    4.0
}

impl FamilySpec {
    pub fn new(d_max: usize, per_dim: usize) -> Self {
        FamilySpec {
            d_max,
            per_dim,
            radius: default_radius(),
        }
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    /// Bumps `psi((y^j - c)/s)` for `j <= d_max` over a dyadic hierarchy of
    /// lattices: the finest level has `max(per_dim, 2)` centres with spacing
    /// `h = 2R/m` and scale `s = h`, each coarser level halves the count down
    /// to a single centre. Bumps in coordinate `j > 1` are multiplied by an
    /// envelope of radius `2R` in the earlier coordinates so every member is
    /// compactly supported in its base coordinates.
    pub fn build(&self) -> Vec<FinitelyBasedFunction> {
        let r = self.radius;
        let mut levels = Vec::new();
        let mut m = self.per_dim.max(2);
        loop {
            levels.push(m);
            if m == 1 {
                break;
            }
            m = m.div_ceil(2);
        }
        let mut out = Vec::new();
        for coord in 0..self.d_max {
            for &m in &levels {
                let h = 2.0 * r / m as f64;
                for k in 0..m {
                    let c = -r + (k as f64 + 0.5) * h;
                    let f = if coord == 0 {
                        FinitelyBasedFunction::bump(coord, c, h)
                    } else {
                        FinitelyBasedFunction::enveloped_bump(coord, c, h, 2.0 * r)
                    };
                    let f = f.expect("lattice parameters are positive and finite");
                    out.push(f.with_label(format!("psi[{}|m={m},k={k}]", coord + 1)));
                }
            }
        }
        out
    }
}

/// Separating family over coordinates `1..=d_max` with `per_dim` centres on
/// the finest level, on the default box `[-4, 4]^d_max`.
pub fn separating_family(d_max: usize, per_dim: usize) -> Vec<FinitelyBasedFunction> {
    FamilySpec::new(d_max.max(1), per_dim.max(1)).build()
}
