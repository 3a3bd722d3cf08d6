use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PathEnsemble;
use crate::coefficients::{half_outer, CoefficientModel};
use crate::error::{Error, Result};
use crate::space::{apply_l_raw, FinitelyBasedFunction};

/// Bounded `F_s`-measurable functional `g(x) = prod_i f_i(x(s_i))`, at most
/// three factors; the empty product is `g = 1`.
#[derive(Debug, Clone)]
pub struct Conditioner {
    label: String,
    factors: Vec<(f64, FinitelyBasedFunction)>,
}

impl Conditioner {
    pub fn new(factors: Vec<(f64, FinitelyBasedFunction)>) -> Result<Self> {
        if factors.len() > 3 {
            return Err(Error::InvalidParameter(format!("{} conditioning factors (at most 3)", factors.len())));
        }
        let label = if factors.is_empty() {
            "1".to_string()
        } else {
            factors
                .iter()
                .map(|(t, f)| format!("{}@{t}", f.label()))
                .collect::<Vec<_>>()
                .join("*")
        };
        Ok(Conditioner { label, factors })
    }

    pub fn one() -> Self {
        Conditioner {
            label: "1".into(),
            factors: Vec::new(),
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Latest time the functional looks at.
    pub fn horizon(&self) -> f64 {
        self.factors.iter().map(|(t, _)| *t).fold(0.0, f64::max)
    }

    fn resolve(&self, ens: &PathEnsemble) -> Result<Vec<(usize, &FinitelyBasedFunction)>> {
        self.factors
            .iter()
            .map(|(t, f)| {
                if f.base_dim() > ens.dim() {
                    return Err(Error::Dimension(format!("conditioner {} on H_{}", f.label(), ens.dim())));
                }
                Ok((ens.index_of(*t)?, f))
            })
            .collect()
    }
}

/// One Monte Carlo estimate of `E[(M^f(t) - M^f(s)) g]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleStat {
    pub f: String,
    pub s: f64,
    pub t: f64,
    pub g: String,
    pub stat: f64,
    pub se: f64,
    pub z: f64,
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Increment `M^f(t) - M^f(s) = f(x(t)) - f(x(s)) - int_s^t Lf(r, x(r)) dr`
/// of every path, the integral by trapezoid on the recorded grid.
fn increments(ens: &PathEnsemble, f: &FinitelyBasedFunction, model: &dyn CoefficientModel, ks: usize, kt: usize) -> Vec<f64> {
    let (n, m, d) = (ens.dim(), model.noise_dim(), f.base_dim());
    let times = ens.times();
    (0..ens.paths())
        .into_par_iter()
        .map(|p| {
            let mut b = vec![0.0; n];
            let mut s = vec![0.0; n * m];
            let mut a = vec![0.0; n * n];
            let mut g = vec![0.0; d];
            let mut h = vec![0.0; d * d];
            let mut lf = |k: usize| {
                let y = ens.state(k, p);
                model.drift_into(times[k], y, &mut b);
                model.sigma_into(times[k], y, &mut s);
                half_outer(&s, n, m, &mut a);
                apply_l_raw(f, y, &a, &b, &mut g, &mut h)
            };
            let mut integral = 0.0;
            let mut prev = lf(ks);
            for k in ks + 1..=kt {
                let cur = lf(k);
                integral += 0.5 * (times[k] - times[k - 1]) * (prev + cur);
                prev = cur;
            }
            f.value(ens.state(kt, p)) - f.value(ens.state(ks, p)) - integral
        })
        .collect()
}

/// Estimates `E[(M^f(t) - M^f(s)) g(x|[0,s])]` for each conditioner `g`,
/// with standard error and z-score (`0/0` is reported as `z = 0`).
pub fn martingale_test(
    ens: &PathEnsemble,
    f: &FinitelyBasedFunction,
    model: &dyn CoefficientModel,
    s: f64,
    t: f64,
    conds: &[Conditioner],
) -> Result<Vec<MartingaleStat>> {
    if conds.is_empty() {
        return Err(Error::InvalidParameter("empty conditioning set".into()));
    }
    if model.dim() != ens.dim() || f.base_dim() > ens.dim() {
        return Err(Error::Dimension(format!(
            "model on H_{}, test function of base dimension {}, ensemble on H_{}",
            model.dim(),
            f.base_dim(),
            ens.dim()
        )));
    }
    let (ks, kt) = (ens.index_of(s)?, ens.index_of(t)?);
    if ks >= kt {
        return Err(Error::InvalidParameter(format!("need s < t, got s = {s}, t = {t}")));
    }
    let resolved = conds
        .iter()
        .map(|c| {
            let r = c.resolve(ens)?;
            if r.iter().any(|(k, _)| *k > ks) {
                return Err(Error::InvalidParameter(format!("conditioner {} looks beyond s = {s}", c.label())));
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let dm = increments(ens, f, model, ks, kt);
    Ok(conds
        .iter()
        .zip(&resolved)
        .map(|(c, factors)| {
            let values: Vec<f64> = dm
                .iter()
                .enumerate()
                .map(|(p, v)| v * factors.iter().map(|(k, g)| g.value(ens.state(*k, p))).product::<f64>())
                .collect();
            let (stat, se) = mean_se(&values);
            let z = if se > 0.0 {
                stat / se
            } else if stat == 0.0 {
                0.0
            } else {
                stat.signum() * f64::INFINITY
            };
            MartingaleStat {
                f: f.label().to_string(),
                s: ens.times()[ks],
                t: ens.times()[kt],
                g: c.label().to_string(),
                stat,
                se,
                z,
            }
        })
        .collect())
}

/// CSV with columns `f, s, t, g, stat, se, z`.
pub fn write_stats_csv<W: Write>(out: W, stats: &[MartingaleStat]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in stats {
        w.serialize(s).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::LinearSde;
    use crate::martingale::{simulate_em, SimConfig};

    fn ou_ensemble(paths: usize) -> (LinearSde, PathEnsemble) {
        let model = LinearSde::ou(1, 1.0, 2f64.sqrt(), 1.0).unwrap();
        let ens = simulate_em(&model, &[1.0], &SimConfig::new(200, paths, 9).with_record_every(4)).unwrap();
        (model, ens)
    }

    #[test]
    fn constant_function_gives_zero() {
        let (model, ens) = ou_ensemble(200);
        let f = FinitelyBasedFunction::constant(2.5);
        let g = FinitelyBasedFunction::bump(0, 0.5, 2.0).unwrap();
        let conds = [Conditioner::one(), Conditioner::new(vec![(0.2, g)]).unwrap()];
        for st in martingale_test(&ens, &f, &model, 0.2, 0.6, &conds).unwrap() {
            assert_eq!((st.stat, st.se, st.z), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn deterministic_defect_shrinks_with_the_step() {
        let model = LinearSde::ou(1, 1.0, 0.0, 1.0).unwrap();
        let f = FinitelyBasedFunction::bump(0, 0.5, 1.0).unwrap();
        let defect = |steps: usize| {
            let ens = simulate_em(&model, &[1.0], &SimConfig::new(steps, 1, 0)).unwrap();
            martingale_test(&ens, &f, &model, 0.0, 1.0, &[Conditioner::one()]).unwrap()[0].stat.abs()
        };
        let (coarse, fine) = (defect(50), defect(100));
        assert!(fine < 0.6 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn input_validation() {
        let (model, ens) = ou_ensemble(10);
        let f = FinitelyBasedFunction::bump(0, 0.0, 1.0).unwrap();
        assert!(martingale_test(&ens, &f, &model, 0.2, 0.6, &[]).is_err());
        assert!(martingale_test(&ens, &f, &model, 0.6, 0.2, &[Conditioner::one()]).is_err());
        let late = Conditioner::new(vec![(0.8, f.clone())]).unwrap();
        assert!(martingale_test(&ens, &f, &model, 0.2, 0.6, &[late]).is_err());
        assert!(Conditioner::new(vec![(0.0, f.clone()); 4]).is_err());
    }

    #[test]
    fn csv_columns() {
        let stat = MartingaleStat {
            f: "f".into(),
            s: 0.25,
            t: 0.5,
            g: "1".into(),
            stat: 0.1,
            se: 0.2,
            z: 0.5,
        };
        let mut buf = Vec::new();
        write_stats_csv(&mut buf, &[stat]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "f,s,t,g,stat,se,z");
        assert_eq!(text.lines().nth(1).unwrap(), "f,0.25,0.5,1,0.1,0.2,0.5");
    }
}
