use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{penalty_value, PenaltySpec};
use crate::error::{EmotError, Result};
use crate::lattice::{cone_membership, ConeSpec, MarketGrid, PathMeasure, RESIDUAL_TOL};
use crate::scalar::Scalar;

type Builder<S> = dyn Fn(usize) -> Result<(PenaltySpec<S>, ConeSpec<S>)> + Send + Sync;

/// A sequence `n -> (D_n, A_n)` with a declared limit.
#[derive(Clone)]
pub struct PenaltySequence<S> {
    builder: Arc<Builder<S>>,
    limit: (PenaltySpec<S>, ConeSpec<S>),
}

impl<S> std::fmt::Debug for PenaltySequence<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PenaltySequence").finish_non_exhaustive()
    }
}

/// Wraps a builder; monotonicity is checked on demand with
/// [`PenaltySequence::check_monotone`].
pub fn monotone_sequence<S, F>(builder: F, limit: (PenaltySpec<S>, ConeSpec<S>)) -> PenaltySequence<S>
where
    S: Scalar,
    F: Fn(usize) -> Result<(PenaltySpec<S>, ConeSpec<S>)> + Send + Sync + 'static,
{
    PenaltySequence {
        builder: Arc::new(builder),
        limit,
    }
}

impl<S: Scalar> PenaltySequence<S> {
    pub fn at(&self, n: usize) -> Result<(PenaltySpec<S>, ConeSpec<S>)> {
        (self.builder)(n)
    }

    pub fn limit(&self) -> &(PenaltySpec<S>, ConeSpec<S>) {
        &self.limit
    }

    /// `D(Q) + sigma_A(Q)`.
    pub fn objective(grid: &MarketGrid<S>, spec: &(PenaltySpec<S>, ConeSpec<S>), q: &PathMeasure<S>) -> Result<S> {
        if !cone_membership(grid, &spec.1, q, S::c(RESIDUAL_TOL))?.is_member() {
            return Ok(S::infinity());
        }
        penalty_value(grid, &spec.0, q)
    }

    /// Spot-checks `D_{n+1} + sigma_{n+1} >= D_n + sigma_n` at consecutive
    /// indices on `samples` random measures (half of them mixtures with
    /// the uniform measure, to hit finite penalties).
    pub fn check_monotone(&self, grid: &MarketGrid<S>, indices: &[usize], samples: usize, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniform = PathMeasure::uniform(grid);
        let qs: Vec<PathMeasure<S>> = (0..samples)
            .map(|k| {
                let w: Vec<S> = (0..grid.path_count()).map(|_| S::c(rng.gen_range(0.0..1.0))).collect();
                let total: S = w.iter().copied().sum();
                let q = PathMeasure::from_solver(w.into_iter().map(|v| v / total).collect());
                if k % 2 == 0 {
                    q
                } else {
                    uniform.mix(&q, S::c(rng.gen_range(0.9..1.0)))
                }
            })
            .collect();
        for pair in indices.windows(2) {
            let (a, b) = (self.at(pair[0])?, self.at(pair[1])?);
            for q in &qs {
                let va = Self::objective(grid, &a, q)?;
                let vb = Self::objective(grid, &b, q)?;
                if vb < va - S::c(1e-9) * (S::one() + va.abs()) {
                    return Err(EmotError::NotMonotone {
                        index: pair[1],
                        detail: format!("penalty dropped from {va} to {vb}"),
                    });
                }
            }
        }
        Ok(())
    }
}
