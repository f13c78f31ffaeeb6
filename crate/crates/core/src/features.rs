//! Feature-space transforms: per-feature standardisation, PCA and min-max
//! target scaling. All transforms are fitted once and then frozen.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Standard deviations below this are floored and reported.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub means: Array1<f64>,
    pub std_devs: Array1<f64>,
}

impl FeatureScaler {
    /// Fits per-column mean and (population) standard deviation. Columns
    /// with no spread get the floor and are listed in the returned warnings.
    pub fn fit(x: ArrayView2<f64>) -> Result<(Self, Vec<String>)> {
        if x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let means = x.mean_axis(Axis(0)).expect("nonempty");
        let mut std_devs = x.var_axis(Axis(0), 0.0).mapv(f64::sqrt);
        let mut warnings = Vec::new();
        for (j, s) in std_devs.iter_mut().enumerate() {
            if *s < STD_FLOOR {
                warnings.push(format!("feature {j} has zero variance; std floored at {STD_FLOOR:e}"));
                *s = STD_FLOOR;
            }
        }
        Ok((Self { means, std_devs }, warnings))
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.means.len() {
            return Err(Error::Dimension(format!(
                "scaler expects {} features, got {}",
                self.means.len(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&x)?;
        Ok((&x - &self.means) / &self.std_devs)
    }

    pub fn invert(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&z)?;
        Ok(&z * &self.std_devs + &self.means)
    }
}

/// Per-dimension min-max scaling onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetScaler {
    pub mins: Array1<f64>,
    pub maxs: Array1<f64>,
}

impl TargetScaler {
    pub fn fit(y: ArrayView2<f64>) -> Result<Self> {
        if y.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        let mins = y.fold_axis(Axis(0), f64::INFINITY, |m, v| m.min(*v));
        let maxs = y.fold_axis(Axis(0), f64::NEG_INFINITY, |m, v| m.max(*v));
        if let Some(j) = mins.iter().zip(&maxs).position(|(lo, hi)| hi.partial_cmp(lo) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::InvalidInput(format!(
                "target dimension {j} is constant; min-max scaling undefined"
            )));
        }
        Ok(Self { mins, maxs })
    }

    fn check(&self, y: &ArrayView2<f64>) -> Result<()> {
        if y.ncols() != self.mins.len() {
            return Err(Error::Dimension(format!(
                "target scaler expects {} outputs, got {}",
                self.mins.len(),
                y.ncols()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, y: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&y)?;
        Ok((&y - &self.mins) / &(&self.maxs - &self.mins))
    }

    pub fn invert(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(&z)?;
        Ok(&z * &(&self.maxs - &self.mins) + &self.mins)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Array1<f64>,
    /// `k × p`, orthonormal rows.
    pub components: Array2<f64>,
    /// Eigenvalues of the sample covariance, descending.
    pub explained_variance: Array1<f64>,
}

/// Sample covariance (divisor `n - 1`) of the rows of `x`.
pub fn covariance(x: ArrayView2<f64>) -> Array2<f64> {
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let centered = &x - &mean;
    centered.t().dot(&centered) / (x.nrows() as f64 - 1.0)
}

impl PcaBasis {
    /// Top-`k` eigenvectors of the sample covariance. Each component is
    /// signed so that its largest-magnitude entry is positive.
    pub fn fit(x: ArrayView2<f64>, k: usize) -> Result<Self> {
        let (n, p) = x.dim();
        if n < 2 {
            return Err(Error::InvalidInput(format!("PCA needs at least 2 samples, got {n}")));
        }
        if k == 0 || k > (n - 1).min(p) {
            return Err(Error::InvalidInput(format!(
                "cannot extract {k} components from {n} samples of dimension {p} (max {})",
                (n - 1).min(p)
            )));
        }
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let cov = covariance(x);
        let eig = SymmetricEigen::new(DMatrix::from_fn(p, p, |i, j| cov[[i, j]]));

        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let mut components = Array2::zeros((k, p));
        let mut explained_variance = Array1::zeros(k);
        for (row, &idx) in order.iter().take(k).enumerate() {
            let v = eig.eigenvectors.column(idx);
            let pivot = (0..p)
                .max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()).then(j.cmp(&i)))
                .expect("p > 0");
            let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
            for j in 0..p {
                components[[row, j]] = sign * v[j];
            }
            explained_variance[row] = eig.eigenvalues[idx].max(0.0);
        }
        Ok(Self {
            mean,
            components,
            explained_variance,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    /// `(X - mean) · componentsᵀ`
    pub fn transform(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "PCA expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok((&x - &self.mean).dot(&self.components.t()))
    }

    /// `Z · components + mean`
    pub fn inverse(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.n_components() {
            return Err(Error::Dimension(format!(
                "PCA inverse expects {} components, got {}",
                self.n_components(),
                z.ncols()
            )));
        }
        Ok(z.dot(&self.components) + &self.mean)
    }

    /// Fraction of total variance captured by each component, given the
    /// trace of the covariance it was fitted on.
    pub fn explained_ratio(&self, total_variance: f64) -> Array1<f64> {
        &self.explained_variance / total_variance
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, p: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, p), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn constant_feature_is_zeroed_with_warning() {
        let x = array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]];
        let (s, warnings) = FeatureScaler::fit(x.view()).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("feature 1"));
        let z = s.apply(x.view()).unwrap();
        assert!(z.column(1).iter().all(|v| *v == 0.0));
        assert!((z.column(0).mean().unwrap()).abs() < 1e-15);
    }

    #[test]
    fn frozen_statistics_are_reused() {
        let train = random_matrix(30, 4, 1);
        let test = random_matrix(10, 4, 2) + 3.0;
        let (s, _) = FeatureScaler::fit(train.view()).unwrap();
        let before = s.clone();
        let z = s.apply(test.view()).unwrap();
        assert_eq!(s, before);
        let manual = (&test - &before.means) / &before.std_devs;
        assert_eq!(z, manual);
    }

    #[test]
    fn target_scaler_round_trip() {
        let y = random_matrix(40, 5, 3) * 4.0 + 6.0;
        let t = TargetScaler::fit(y.view()).unwrap();
        let z = t.apply(y.view()).unwrap();
        assert!(z.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        let back = t.invert(z.view()).unwrap();
        assert!((&back - &y).iter().all(|d| d.abs() < 1e-12));
        assert!(TargetScaler::fit(array![[1.0], [1.0]].view()).is_err());
    }

    #[test]
    fn rank_one_data_has_one_component() {
        let dir = array![0.6, -0.8, 0.0];
        let x = Array2::from_shape_fn((20, 3), |(i, j)| 1.0 + (i as f64 - 7.0) * dir[j]);
        let pca = PcaBasis::fit(x.view(), 2).unwrap();
        let total: f64 = covariance(x.view()).diag().sum();
        let ratio = pca.explained_ratio(total);
        assert!((ratio[0] - 1.0).abs() < 1e-12);
        assert!(ratio[1].abs() < 1e-12);
        // Sign convention: largest-magnitude entry positive.
        assert!((pca.components[[0, 1]] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn full_rank_reconstruction() {
        let x = random_matrix(20, 6, 4);
        let pca = PcaBasis::fit(x.view(), 6).unwrap();
        let back = pca.inverse(pca.transform(x.view()).unwrap().view()).unwrap();
        assert!((&back - &x).iter().all(|d| d.abs() < 1e-8));
    }

    #[test]
    fn mean_row_maps_to_origin() {
        let x = random_matrix(15, 5, 5);
        let pca = PcaBasis::fit(x.view(), 3).unwrap();
        let m = pca.mean.clone().insert_axis(Axis(0));
        assert!(pca.transform(m.view()).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn component_count_is_bounded() {
        let x = random_matrix(5, 10, 6);
        assert!(PcaBasis::fit(x.view(), 4).is_ok());
        assert!(PcaBasis::fit(x.view(), 5).is_err());
        assert!(PcaBasis::fit(x.slice(s![..1, ..]), 1).is_err());
        let pca = PcaBasis::fit(x.view(), 2).unwrap();
        assert!(matches!(
            pca.transform(random_matrix(2, 9, 1).view()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn curve_width_reduces_to_300() {
        let x = random_matrix(320, 581, 7);
        let pca = PcaBasis::fit(x.view(), 300).unwrap();
        assert_eq!(pca.transform(x.slice(s![..1, ..])).unwrap().dim(), (1, 300));
    }

    #[test]
    fn explained_variance_matches_jacobi_on_50x10() {
        let x = random_matrix(50, 10, 8);
        let pca = PcaBasis::fit(x.view(), 3).unwrap();
        let mut reference = jacobi_eigenvalues(covariance(x.view()));
        reference.sort_by(|a, b| b.total_cmp(a));
        for (got, want) in pca.explained_variance.iter().zip(&reference[..3]) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    /// Cyclic Jacobi rotations on a dense symmetric matrix.
    fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _ in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[[i, j]].powi(2))
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if a[[p, q]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (akp, akq) = (a[[k, p]], a[[k, q]]);
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[[i, i]]).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn pca_invariants(seed in 0u64..1000, n in 12usize..30, p in 3usize..9) {
            let x = random_matrix(n, p, seed);
            let pca = PcaBasis::fit(x.view(), p).unwrap();
            let gram = pca.components.dot(&pca.components.t());
            for i in 0..p {
                for j in 0..p {
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((gram[[i, j]] - want).abs() < 1e-8);
                }
            }
            prop_assert!(pca.explained_variance.windows(2).into_iter().all(|w| w[0] >= w[1]));

            // Reconstruction error non-increasing in k.
            let mut last = f64::INFINITY;
            for k in 1..=p {
                let basis = PcaBasis {
                    mean: pca.mean.clone(),
                    components: pca.components.slice(s![..k, ..]).to_owned(),
                    explained_variance: pca.explained_variance.slice(s![..k]).to_owned(),
                };
                let back = basis.inverse(basis.transform(x.view()).unwrap().view()).unwrap();
                let err: f64 = (&back - &x).mapv(|d| d * d).sum();
                prop_assert!(err <= last + 1e-9);
                last = err;
            }
        }
    }
}
