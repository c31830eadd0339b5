use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ParameterBox;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    Uniform,
    /// Uniform in log₁₀ per coordinate.
    LogUniform,
    /// Tensor lattice equispaced in log₁₀, raster order.
    LogEquispaced,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingPlan {
    pub distribution: Distribution,
    pub size: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Draws `plan.size` parameters from the box. Deterministic in the seed.
pub fn sample_parameters(pbox: &ParameterBox, plan: &SamplingPlan) -> Result<Vec<Vec<f64>>> {
    if plan.size == 0 {
        return Err(Error::Config("sample size must be at least 1".into()));
    }
    if plan.distribution != Distribution::Uniform {
        if let Some([lo, _]) = pbox.bounds.iter().find(|[lo, _]| *lo <= 0.0) {
            return Err(Error::Domain(format!(
                "log-scaled sampling needs positive bounds, found lower bound {lo}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let points = match plan.distribution {
        Distribution::Uniform => (0..plan.size)
            .map(|_| {
                pbox.bounds
                    .iter()
                    .map(|&[lo, hi]| draw(&mut rng, lo, hi))
                    .collect()
            })
            .collect(),
        Distribution::LogUniform => (0..plan.size)
            .map(|_| {
                pbox.bounds
                    .iter()
                    .map(|&[lo, hi]| {
                        10f64
                            .powf(draw(&mut rng, lo.log10(), hi.log10()))
                            .clamp(lo, hi)
                    })
                    .collect()
            })
            .collect(),
        Distribution::LogEquispaced => log_lattice(pbox, plan.size),
    };
    Ok(points)
}

fn log_lattice(pbox: &ParameterBox, size: usize) -> Vec<Vec<f64>> {
    let counts = balanced_factorization(size, pbox.dim());
    let axes: Vec<Vec<f64>> = pbox
        .bounds
        .iter()
        .zip(&counts)
        .map(|(&[lo, hi], &c)| {
            let (a, b) = (lo.log10(), hi.log10());
            (0..c)
                .map(|i| {
                    let t = if c == 1 {
                        0.5
                    } else {
                        i as f64 / (c - 1) as f64
                    };
                    10f64.powf(a + t * (b - a)).clamp(lo, hi)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(size);
    let mut idx = vec![0usize; counts.len()];
    for _ in 0..size {
        out.push(idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect());
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Factors `m` into `d` positive integers with the smallest spread
/// (max − min), returned in nonincreasing order: 100 over 3 axes → [5, 5, 4].
pub fn balanced_factorization(m: usize, d: usize) -> Vec<usize> {
    fn search(
        m: usize,
        d: usize,
        min_factor: usize,
        prefix: &mut Vec<usize>,
        best: &mut Option<Vec<usize>>,
    ) {
        if d == 1 {
            if m >= min_factor {
                prefix.push(m);
                let spread = prefix.last().unwrap() - prefix[0];
                let better = best
                    .as_ref()
                    .is_none_or(|b| spread < b.last().unwrap() - b[0]);
                if better {
                    *best = Some(prefix.clone());
                }
                prefix.pop();
            }
            return;
        }
        let mut f = min_factor;
        while f.pow(d as u32) <= m {
            if m.is_multiple_of(f) {
                prefix.push(f);
                search(m / f, d - 1, f, prefix, best);
                prefix.pop();
            }
            f += 1;
        }
    }
    assert!(m >= 1 && d >= 1);
    let mut best = None;
    search(m, d, 1, &mut Vec::new(), &mut best);
    let mut f = best.expect("m = m·1·…·1 always factors");
    f.reverse();
    f
}
