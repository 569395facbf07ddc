//! The shared feature-mapping and enhancement layers.
//!
//! Every feature group projects the input through fixed random weights,
//! accumulates `z^T X` and `z^T z` over the whole stream, and refreshes its
//! sparse map `mu` from those running sums with ADMM. Because the sums are
//! plain additions of per-chunk products, the accumulated matrices equal the
//! products computed on the concatenation of every chunk seen so far.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BelsError, Result};
use crate::linalg::{admm_sparse_map, AdmmState, Matrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGroupState {
    /// d x g projection.
    pub w_e: Matrix,
    /// 1 x g bias, broadcast over rows.
    pub beta_e: Matrix,
    /// Running `z^T X`, g x d.
    pub t1_acc: Matrix,
    /// Running `z^T z`, g x g.
    pub t2_acc: Matrix,
    /// Sparse map, d x g.
    pub mu: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnhancementGroupState {
    /// (n*g) x h weights.
    pub w_h: Matrix,
    /// 1 x h bias.
    pub beta_h: Matrix,
}

/// When the sparse maps are refreshed from the accumulators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MuPolicy {
    /// Accumulate and re-solve after every chunk.
    EveryChunk,
    /// Solve once from the first chunk and keep the map fixed afterwards.
    FirstChunkOnly,
}

/// Solver settings for the sparse maps and enhancement nodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpaceParams {
    pub rho: f64,
    pub kappa: f64,
    pub admm_iters: usize,
    pub shrink: f64,
    pub mu_policy: MuPolicy,
}

impl Default for FeatureSpaceParams {
    fn default() -> Self {
        Self {
            rho: 1.0,
            kappa: 0.001,
            admm_iters: 50,
            shrink: 1.0,
            mu_policy: MuPolicy::EveryChunk,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub groups: Vec<FeatureGroupState>,
    pub enhancers: Vec<EnhancementGroupState>,
    pub d: usize,
    pub g: usize,
    pub h: usize,
    pub rng_seed: u64,
    pub params: FeatureSpaceParams,
    pub chunks_seen: usize,
}

impl FeatureSpace {
    /// Draws every random weight uniformly on [-1, 1] from a generator
    /// seeded with `seed`. Accumulators and sparse maps start at zero.
    pub fn new(
        d: usize,
        n: usize,
        m: usize,
        g: usize,
        h: usize,
        seed: u64,
        params: FeatureSpaceParams,
    ) -> Result<Self> {
        if d == 0 || n == 0 || g == 0 {
            return Err(BelsError::InvalidConfig(format!(
                "feature space needs d, n, g >= 1 (got d={d}, n={n}, g={g})"
            )));
        }
        if m > 0 && h == 0 {
            return Err(BelsError::InvalidConfig(
                "enhancement groups need h >= 1".into(),
            ));
        }
        if !(params.rho > 0.0) || params.admm_iters == 0 || !(params.kappa >= 0.0) {
            return Err(BelsError::InvalidConfig(
                "ADMM needs rho > 0, kappa >= 0 and at least one iteration".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut uniform =
            |rows, cols| Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..=1.0));
        let groups = (0..n)
            .map(|_| {
                let w_e = uniform(d, g);
                let beta_e = uniform(1, g);
                FeatureGroupState {
                    w_e,
                    beta_e,
                    t1_acc: Matrix::zeros(g, d),
                    t2_acc: Matrix::zeros(g, g),
                    mu: Matrix::zeros(d, g),
                }
            })
            .collect();
        let enhancers = (0..m)
            .map(|_| {
                let w_h = uniform(n * g, h);
                let beta_h = uniform(1, h);
                EnhancementGroupState { w_h, beta_h }
            })
            .collect();
        Ok(Self {
            groups,
            enhancers,
            d,
            g,
            h,
            rng_seed: seed,
            params,
            chunks_seen: 0,
        })
    }

    /// Number of columns produced by [`transform`](Self::transform).
    pub fn width(&self) -> usize {
        self.groups.len() * self.g + self.enhancers.len() * self.h
    }

    fn check_input(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.cols() != self.d {
            return Err(BelsError::shape(
                op,
                format!("expected {} input columns, got {}", self.d, x.cols()),
            ));
        }
        Ok(())
    }

    /// Folds chunk `x` into the accumulators, refreshes the sparse maps and
    /// returns the chunk's representation `[Z^n | H^m]`.
    pub fn update(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x, "update_feature_space")?;
        if x.rows() == 0 {
            return Err(BelsError::shape("update_feature_space", "empty chunk"));
        }
        let refresh = match self.params.mu_policy {
            MuPolicy::EveryChunk => true,
            MuPolicy::FirstChunkOnly => self.chunks_seen == 0,
        };
        if refresh {
            let lambda_sparse = self.params.kappa * self.params.rho;
            for grp in &mut self.groups {
                let mut z = x.matmul(&grp.w_e)?;
                z.add_row_broadcast(grp.beta_e.data())?;
                grp.t1_acc.add_t_matmul(&z, x)?;
                grp.t2_acc.add_gram(&z)?;
                let mut state = AdmmState::new(self.g, self.d, self.params.rho, self.params.kappa);
                grp.mu = admm_sparse_map(
                    &grp.t2_acc,
                    &grp.t1_acc,
                    &mut state,
                    lambda_sparse,
                    self.params.admm_iters,
                )?;
            }
        }
        self.chunks_seen += 1;
        self.transform(x)
    }

    /// Test-time representation with the current sparse maps. Does not touch
    /// any state.
    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x, "transform")?;
        let zs = self
            .groups
            .iter()
            .map(|grp| x.matmul(&grp.mu))
            .collect::<Result<Vec<_>>>()?;
        let z_refs: Vec<&Matrix> = zs.iter().collect();
        let z_all = Matrix::hstack(&z_refs)?;
        if self.enhancers.is_empty() {
            return Ok(z_all);
        }
        let shrink = self.params.shrink;
        let hs = self
            .enhancers
            .iter()
            .map(|enh| {
                let mut pre = z_all.matmul(&enh.w_h)?;
                pre.add_row_broadcast(enh.beta_h.data())?;
                pre.map_inplace(|v| (shrink * v).tanh());
                Ok(pre)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut parts = vec![&z_all];
        parts.extend(hs.iter());
        Matrix::hstack(&parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn fs(d: usize, n: usize, m: usize, g: usize, h: usize, seed: u64) -> FeatureSpace {
        FeatureSpace::new(d, n, m, g, h, seed, FeatureSpaceParams::default()).unwrap()
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0))
    }

    #[test]
    fn width_and_determinism() {
        let a = fs(3, 2, 1, 3, 4, 7);
        assert_eq!(a.width(), 10);
        let b = fs(3, 2, 1, 3, 4, 7);
        assert_eq!(a, b);
        let c = fs(3, 2, 1, 3, 4, 8);
        assert_ne!(a.groups[0].w_e, c.groups[0].w_e);
        let w = a.transform(&random(6, 3, 1)).unwrap();
        assert_eq!(w.shape(), (6, 10));
    }

    #[test]
    fn rejects_zero_dimensions() {
        for (d, n, g) in [(0, 1, 1), (1, 0, 1), (1, 1, 0)] {
            assert!(matches!(
                FeatureSpace::new(d, n, 1, g, 1, 0, FeatureSpaceParams::default()),
                Err(BelsError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn zero_input_gives_zero_features_and_bias_enhancement() {
        let mut f = fs(3, 2, 2, 2, 3, 4);
        let a = f.update(&Matrix::zeros(5, 3)).unwrap();
        for r in 0..5 {
            assert!(a.row(r)[..4].iter().all(|&v| v == 0.0));
            let expected: Vec<f64> = f
                .enhancers
                .iter()
                .flat_map(|e| e.beta_h.data().iter().map(|b| b.tanh()))
                .collect();
            assert_eq!(&a.row(r)[4..], expected.as_slice());
        }
    }

    #[test]
    fn identity_pass_through() {
        let mut f = fs(4, 1, 0, 4, 0, 2);
        f.groups[0].mu = Matrix::identity(4);
        let a = f.transform(&Matrix::identity(4)).unwrap();
        assert_eq!(a, Matrix::identity(4));
    }

    #[test]
    fn shape_mismatch() {
        let mut f = fs(3, 1, 1, 2, 2, 0);
        assert!(matches!(
            f.update(&Matrix::zeros(2, 4)),
            Err(BelsError::ShapeMismatch { .. })
        ));
        assert!(f.transform(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn transform_is_pure_and_matches_update() {
        let mut f = fs(3, 3, 2, 2, 3, 5);
        let x = random(7, 3, 3);
        let a = f.update(&x).unwrap();
        let before = f.clone();
        let t1 = f.transform(&x).unwrap();
        let t2 = f.transform(&x).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1, a);
        assert_eq!(f, before);
        let other = random(11, 3, 4);
        assert_eq!(f.transform(&other).unwrap().shape(), (11, f.width()));
    }

    #[test]
    fn first_chunk_policy_freezes_maps() {
        let params = FeatureSpaceParams {
            mu_policy: MuPolicy::FirstChunkOnly,
            ..Default::default()
        };
        let mut f = FeatureSpace::new(3, 2, 1, 2, 2, 1, params).unwrap();
        f.update(&random(5, 3, 10)).unwrap();
        let frozen = f.groups.clone();
        f.update(&random(5, 3, 11)).unwrap();
        assert_eq!(f.groups, frozen);
        assert_eq!(f.chunks_seen, 2);
    }

    #[test]
    fn accumulators_are_exact_sums() {
        let x1 = random(4, 3, 20);
        let x2 = random(6, 3, 21);
        let mut inc = fs(3, 2, 1, 2, 2, 9);
        inc.update(&x1).unwrap();
        inc.update(&x2).unwrap();
        let mut batch = fs(3, 2, 1, 2, 2, 9);
        batch.update(&Matrix::vstack(&[&x1, &x2]).unwrap()).unwrap();
        for (a, b) in inc.groups.iter().zip(&batch.groups) {
            let scale = b.t2_acc.max_abs().max(1.0);
            assert!(a.t2_acc.sub(&b.t2_acc).unwrap().max_abs() <= 1e-12 * scale);
            assert!(a.t1_acc.sub(&b.t1_acc).unwrap().max_abs() <= 1e-12 * scale);
            assert!(a.mu.sub(&b.mu).unwrap().max_abs() <= 1e-8);
        }
    }

    proptest! {
        #[test]
        fn enhancement_stays_inside_unit_interval(seed in 0u64..500, rows in 1usize..20) {
            let mut f = fs(3, 2, 3, 2, 2, seed);
            let a = f.update(&random(rows, 3, seed + 1)).unwrap();
            for r in 0..rows {
                for &v in &a.row(r)[4..] {
                    prop_assert!(v.abs() <= 1.0);
                }
            }
            for grp in &f.groups {
                prop_assert_eq!(&grp.t2_acc, &grp.t2_acc.transpose());
            }
        }
    }
}
