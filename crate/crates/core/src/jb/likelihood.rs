//! Structured likelihood of a speaker's session set under the two-covariance
//! Gaussian `x_j = μ + ε_j`, `μ ~ N(0, S_μ)`, `ε_j ~ N(0, S_ε)`.
//!
//! The stacked covariance `I_m ⊗ S_ε + 1 1ᵀ ⊗ S_μ` splits into the mean
//! direction (covariance `S_ε + m S_μ`) and its orthogonal complement
//! (covariance `S_ε` on each of `m − 1` copies), so
//!
//! ```text
//! log det Σ = (m − 1) log det S_ε + log det(S_ε + m S_μ)
//! xᵀ Σ⁻¹ x  = Σ_j (x_j − x̄)ᵀ S_ε⁻¹ (x_j − x̄) + m x̄ᵀ (S_ε + m S_μ)⁻¹ x̄
//! ```
//!
//! and only `d × d` factorizations are ever formed.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};

use crate::dataset::row_sum;
use crate::error::{Error, Result};
use crate::linalg::{symmetrized, SpdFactor, LN_2PI};

/// Factor of `S_ε + m S_μ` for one session count `m`.
#[derive(Debug, Clone)]
pub struct SessionFactor {
    m: usize,
    total: SpdFactor,
}

impl SessionFactor {
    pub fn sessions(&self) -> usize {
        self.m
    }

    pub fn total(&self) -> &SpdFactor {
        &self.total
    }
}

#[derive(Debug, Clone)]
pub struct BlockGaussian {
    s_mu: DMatrix<f64>,
    s_eps: DMatrix<f64>,
    eps: SpdFactor,
}

impl BlockGaussian {
    pub fn new(s_mu: &DMatrix<f64>, s_eps: &DMatrix<f64>) -> Result<Self> {
        if s_mu.shape() != s_eps.shape() {
            return Err(Error::DimensionMismatch {
                expected: s_eps.nrows(),
                found: s_mu.nrows(),
            });
        }
        let eps = SpdFactor::new(s_eps, "within-speaker covariance")?;
        Ok(Self {
            s_mu: symmetrized(s_mu.clone()),
            s_eps: symmetrized(s_eps.clone()),
            eps,
        })
    }

    pub fn dim(&self) -> usize {
        self.s_eps.nrows()
    }

    pub fn s_mu(&self) -> &DMatrix<f64> {
        &self.s_mu
    }

    pub fn eps_factor(&self) -> &SpdFactor {
        &self.eps
    }

    pub fn session_factor(&self, m: usize) -> Result<SessionFactor> {
        if m == 0 {
            return Err(Error::EmptySet);
        }
        let total = &self.s_eps + &self.s_mu * m as f64;
        Ok(SessionFactor {
            m,
            total: SpdFactor::new(&total, "S_eps + m S_mu")?,
        })
    }

    /// One factor per distinct session count.
    pub fn factors_for<I>(&self, counts: I) -> Result<BTreeMap<usize, SessionFactor>>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut out = BTreeMap::new();
        for m in counts {
            if let std::collections::btree_map::Entry::Vacant(e) = out.entry(m) {
                e.insert(self.session_factor(m)?);
            }
        }
        Ok(out)
    }

    /// `log N(vec(X); 0, Σ_m)` for the `m × d` row set `X`, given the
    /// matching session factor.
    pub fn set_loglik_with(&self, factor: &SessionFactor, vectors: &DMatrix<f64>) -> f64 {
        let m = vectors.nrows();
        debug_assert_eq!(m, factor.m);
        let d = self.dim() as f64;
        let mean = row_sum(vectors) / m as f64;
        let mut within = 0.0;
        for row in vectors.row_iter() {
            let dev = row.transpose() - &mean;
            within += self.eps.quad_form(&dev);
        }
        let between = m as f64 * factor.total.quad_form(&mean);
        let logdet = (m as f64 - 1.0) * self.eps.logdet() + factor.total.logdet();
        -0.5 * (m as f64 * d * LN_2PI + logdet + within + between)
    }

    pub fn set_loglik(&self, vectors: &DMatrix<f64>) -> Result<f64> {
        self.check_set(vectors)?;
        let factor = self.session_factor(vectors.nrows())?;
        Ok(self.set_loglik_with(&factor, vectors))
    }

    pub(crate) fn check_set(&self, vectors: &DMatrix<f64>) -> Result<()> {
        if vectors.nrows() == 0 {
            return Err(Error::EmptySet);
        }
        if vectors.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: vectors.ncols(),
            });
        }
        Ok(())
    }

    /// Posterior covariance of `μ` after `m` sessions,
    /// `P = S_μ − m S_μ (S_ε + m S_μ)⁻¹ S_μ`; valid for singular `S_μ`.
    pub fn posterior_cov(&self, factor: &SessionFactor) -> DMatrix<f64> {
        let solved = factor.total.solve(&self.s_mu);
        symmetrized(&self.s_mu - &self.s_mu * solved * factor.m as f64)
    }

    /// Posterior mean of `μ` given the session sum `s`,
    /// `S_μ (S_ε + m S_μ)⁻¹ s`.
    pub fn posterior_mean(&self, factor: &SessionFactor, sum: &DVector<f64>) -> DVector<f64> {
        &self.s_mu * factor.total.solve_vec(sum)
    }
}

/// Orders two sets canonically so a symmetric score is computed identically
/// for `(a, b)` and `(b, a)`.
pub(crate) fn canonical_pair<'a>(
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
) -> (&'a DMatrix<f64>, &'a DMatrix<f64>) {
    use std::cmp::Ordering;
    let key = a.nrows().cmp(&b.nrows()).then_with(|| {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            match x.total_cmp(y) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        Ordering::Equal
    });
    if key == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

pub(crate) fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.rows_mut(0, a.nrows()).copy_from(a);
    out.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    out
}

/// Set-vs-set log-likelihood ratio with session factors cached by count.
#[derive(Debug)]
pub struct SetScorer {
    gauss: BlockGaussian,
    cache: Mutex<HashMap<usize, Arc<SessionFactor>>>,
}

impl SetScorer {
    pub fn new(gauss: BlockGaussian) -> Self {
        Self {
            gauss,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn gaussian(&self) -> &BlockGaussian {
        &self.gauss
    }

    fn factor(&self, m: usize) -> Result<Arc<SessionFactor>> {
        if let Some(f) = self.cache.lock().expect("cache lock").get(&m) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(self.gauss.session_factor(m)?);
        self.cache
            .lock()
            .expect("cache lock")
            .entry(m)
            .or_insert_with(|| Arc::clone(&f));
        Ok(f)
    }

    fn loglik(&self, x: &DMatrix<f64>) -> Result<f64> {
        let f = self.factor(x.nrows())?;
        Ok(self.gauss.set_loglik_with(&f, x))
    }

    /// `log p(x1 ∪ x2) − log p(x1) − log p(x2)`.
    pub fn score(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<f64> {
        self.gauss.check_set(x1)?;
        self.gauss.check_set(x2)?;
        if self.gauss.s_mu.iter().all(|&v| v == 0.0) {
            // the joint density factorizes exactly
            return Ok(0.0);
        }
        let (a, b) = canonical_pair(x1, x2);
        let joint = self.loglik(&stack_rows(a, b))?;
        Ok(joint - self.loglik(a)? - self.loglik(b)?)
    }
}
