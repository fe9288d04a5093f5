//! Shared EM driver: deterministic parallel accumulation and the iteration
//! loop with convergence trace.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Speakers per accumulation chunk. Fixed so reductions do not depend on the
/// worker count.
const CHUNK: usize = 32;

/// Folds `items` in fixed-size chunks on the rayon pool, then merges the
/// chunk accumulators sequentially in input order.
pub(crate) fn ordered_reduce<T, A, I, F, M>(items: &[T], init: I, fold: F, merge: M) -> Result<A>
where
    T: Sync,
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &T) -> Result<()> + Sync,
    M: Fn(&mut A, A),
{
    let partials: Vec<Result<A>> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = init();
            for item in chunk {
                fold(&mut acc, item)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = init();
    for p in partials {
        merge(&mut total, p?);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EmMode {
    /// M-step accumulators include posterior covariances.
    #[default]
    Exact,
    /// Posterior covariances are dropped; only posterior-mean outer products.
    Approx,
}

impl std::str::FromStr for EmMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(EmMode::Exact),
            "approx" => Ok(EmMode::Approx),
            other => Err(Error::InvalidArgument(format!(
                "unknown EM mode `{other}` (expected exact|approx)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub iterations: usize,
    /// Stop early once `|ℓ_t − ℓ_{t−1}| ≤ rel_tol · |ℓ_t|`.
    pub rel_tol: Option<f64>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: 20,
            rel_tol: None,
        }
    }
}

impl TrainOptions {
    pub fn iterations(iterations: usize) -> Self {
        Self {
            iterations,
            rel_tol: None,
        }
    }
}

/// Log-likelihood of each model visited; entry 0 is the initial model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub loglik: Vec<f64>,
}

impl Trace {
    pub fn neg_loglik(&self) -> impl Iterator<Item = f64> + '_ {
        self.loglik.iter().map(|v| -v)
    }

    pub fn last(&self) -> Option<f64> {
        self.loglik.last().copied()
    }

    /// Largest single-step decrease of the log-likelihood (0 when monotone).
    pub fn worst_decrease(&self) -> f64 {
        self.loglik
            .windows(2)
            .map(|w| w[0] - w[1])
            .fold(0.0, f64::max)
    }

    /// First iteration whose log-likelihood is within `rel` of the final one.
    pub fn first_within(&self, rel: f64) -> Option<usize> {
        let last = self.last()?;
        self.loglik
            .iter()
            .position(|v| (v - last).abs() <= rel * last.abs())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut text = String::from("iteration,neg_loglik\n");
        for (k, v) in self.neg_loglik().enumerate() {
            text.push_str(&format!("{k},{v:?}\n"));
        }
        f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Runs `step` repeatedly. `step` returns the updated model and the
/// log-likelihood of the model it was given; `loglik` scores the final one.
pub(crate) fn run_em<M, S, L>(
    init: M,
    options: TrainOptions,
    step: S,
    loglik: L,
) -> Result<(M, Trace)>
where
    S: Fn(&M) -> Result<(M, f64)>,
    L: Fn(&M) -> Result<f64>,
{
    let mut model = init;
    let mut trace = Trace::default();
    for _ in 0..options.iterations {
        let (next, before) = step(&model)?;
        trace.loglik.push(before);
        model = next;
        if let (Some(tol), [.., a, b]) = (options.rel_tol, trace.loglik.as_slice()) {
            if (b - a).abs() <= tol * b.abs() {
                break;
            }
        }
    }
    trace.loglik.push(loglik(&model)?);
    Ok((model, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_reduce_matches_sequential() {
        let items: Vec<f64> = (0..1000).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        let seq: f64 = items.chunks(CHUNK).map(|c| c.iter().sum::<f64>()).sum();
        let par = ordered_reduce(
            &items,
            || 0.0,
            |a, x| {
                *a += x;
                Ok(())
            },
            |a, b| *a += b,
        )
        .unwrap();
        assert_eq!(seq.to_bits(), par.to_bits());
    }

    #[test]
    fn trace_helpers() {
        let t = Trace {
            loglik: vec![-100.0, -50.0, -49.0, -49.5],
        };
        assert_eq!(t.worst_decrease(), 0.5);
        assert_eq!(t.first_within(0.05), Some(1));
        assert_eq!(t.neg_loglik().next(), Some(100.0));
    }

    #[test]
    fn run_em_records_initial_and_final() {
        let (m, t) = run_em(0.0f64, TrainOptions::iterations(3), |x| Ok((x + 1.0, *x)), |x| Ok(*x))
            .unwrap();
        assert_eq!(m, 3.0);
        assert_eq!(t.loglik, vec![0.0, 1.0, 2.0, 3.0]);
    }
}
