//! Bounded linear forward operators between weighted grids.
//!
//! Every operator carries the quadrature weights of its domain (X) and range
//! (Y). The adjoint is taken with respect to those weighted inner products,
//! so that `<A x, l>_Y == <x, A* l>_X` holds to rounding error.

mod io;
pub mod projector;
mod vector;

use std::sync::OnceLock;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use self::io::{read_dense_csv, write_triplets_csv};
pub use self::projector::SparseMatrix;
pub use self::vector::{Grid, WeightedVector};
use crate::error::{check_len, Error, Result};

/// Power iterations used for the cached norm estimate.
pub const DEFAULT_NORM_ITERS: usize = 200;
/// Seed used for the cached norm estimate.
pub const DEFAULT_NORM_SEED: u64 = 0;

/// Norm placed on the domain X when measuring `||A||`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainNorm {
    L1,
    L2,
}

impl DomainNorm {
    /// Norm of an element of X.
    pub fn primal(self, x: &WeightedVector) -> f64 {
        match self {
            Self::L1 => x.norm_l1(),
            Self::L2 => x.norm(),
        }
    }

    /// Dual norm of an element of X* under the weighted pairing.
    pub fn dual(self, xi: &WeightedVector) -> f64 {
        match self {
            Self::L1 => xi.norm_max(),
            Self::L2 => xi.norm(),
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    /// `forward` acts on raw values; `adjoint` already folds in both weight sets.
    Dense {
        forward: Array2<f64>,
        adjoint: Array2<f64>,
    },
    /// Quadrature of a kernel: `(A x)_i = sum_j w'_j k(s_i, s'_j) x_j`.
    Integral {
        kernel: Array2<f64>,
        forward: Array2<f64>,
        adjoint: Array2<f64>,
    },
    Projector(SparseMatrix),
}

/// The map `A : X -> Y`.
#[derive(Debug, Clone)]
pub struct ForwardOperator {
    kind: Kind,
    domain: Grid,
    range: Grid,
    norm_l2: OnceLock<f64>,
    norm_l1: OnceLock<f64>,
}

impl ForwardOperator {
    fn from_kind(kind: Kind, domain: Grid, range: Grid) -> Self {
        Self {
            kind,
            domain,
            range,
            norm_l2: OnceLock::new(),
            norm_l1: OnceLock::new(),
        }
    }

    /// Dense matrix acting on plain Euclidean spaces.
    pub fn dense(matrix: Array2<f64>) -> Self {
        let (m, n) = matrix.dim();
        Self::dense_weighted(matrix, Grid::unit(n), Grid::unit(m))
            .expect("unit grids always match the matrix shape")
    }

    /// Dense matrix `M` between weighted grids. The adjoint is
    /// `diag(1/w_X) M^T diag(w_Y)`, so domain weights must be positive.
    pub fn dense_weighted(matrix: Array2<f64>, domain: Grid, range: Grid) -> Result<Self> {
        let (m, n) = matrix.dim();
        check_len(n, domain.len())?;
        check_len(m, range.len())?;
        if domain.weights().iter().any(|w| *w <= 0.0) {
            return Err(Error::InvalidWeights(
                "dense operators need strictly positive domain weights".into(),
            ));
        }
        // row-major copy so that adjoint products take the contiguous dot path
        let mut adjoint = matrix.t().as_standard_layout().into_owned();
        for (mut row, wx) in adjoint.axis_iter_mut(Axis(0)).zip(domain.weights().iter()) {
            row *= range.weights();
            row /= *wx;
        }
        Ok(Self::from_kind(
            Kind::Dense {
                forward: matrix,
                adjoint,
            },
            domain,
            range,
        ))
    }

    /// Integral operator from kernel samples `kernel[[i, j]] = k(s_i, s'_j)`
    /// with quadrature weights `domain` on the s' nodes.
    pub fn integral(kernel: Array2<f64>, domain: Grid, range: Grid) -> Result<Self> {
        let (m, n) = kernel.dim();
        check_len(n, domain.len())?;
        check_len(m, range.len())?;
        let forward = &kernel * &domain.weights().view().insert_axis(Axis(0));
        let adjoint = (&kernel * &range.weights().view().insert_axis(Axis(1)))
            .t()
            .as_standard_layout()
            .into_owned();
        Ok(Self::from_kind(
            Kind::Integral {
                kernel,
                forward,
                adjoint,
            },
            domain,
            range,
        ))
    }

    /// Trapezoidal discretization of `(A x)(s) = int_0^1 k(s, s') x(s') ds'`
    /// on `grid_n` equispaced nodes, used for both X and Y.
    pub fn build_integral_operator(
        kernel: impl Fn(f64, f64) -> f64,
        grid_n: usize,
    ) -> Result<Self> {
        let grid = Grid::trapezoid(grid_n)?;
        let s = Grid::unit_interval_nodes(grid_n);
        let k = Array2::from_shape_fn((grid_n, grid_n), |(i, j)| kernel(s[i], s[j]));
        Self::integral(k, grid.clone(), grid)
    }

    /// Sparse parallel-beam projector on unit-weight spaces.
    pub fn build_parallel_beam(image_n: usize, n_angles: usize, n_detectors: usize) -> Result<Self> {
        if image_n == 0 || n_angles == 0 || n_detectors == 0 {
            return Err(Error::InvalidParameter(
                "projector sizes must be at least 1".into(),
            ));
        }
        let matrix = projector::parallel_beam_matrix(image_n, n_angles, n_detectors);
        Ok(Self::projector(matrix))
    }

    pub fn projector(matrix: SparseMatrix) -> Self {
        let (m, n) = (matrix.rows, matrix.cols);
        Self::from_kind(Kind::Projector(matrix), Grid::unit(n), Grid::unit(m))
    }

    pub fn zero(domain: Grid, range: Grid) -> Self {
        let m = Array2::zeros((range.len(), domain.len()));
        Self::dense_weighted(m, domain, range).expect("zero operator on valid grids")
    }

    /// `(m_out, n_in)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.range.len(), self.domain.len())
    }

    pub fn domain(&self) -> &Grid {
        &self.domain
    }

    pub fn range(&self) -> &Grid {
        &self.range
    }

    pub fn kernel(&self) -> Option<&Array2<f64>> {
        match &self.kind {
            Kind::Integral { kernel, .. } => Some(kernel),
            _ => None,
        }
    }

    pub fn sparse(&self) -> Option<&SparseMatrix> {
        match &self.kind {
            Kind::Projector(m) => Some(m),
            _ => None,
        }
    }

    /// Matrix acting on raw values, materialized densely.
    pub fn to_dense(&self) -> Array2<f64> {
        match &self.kind {
            Kind::Dense { forward, .. } | Kind::Integral { forward, .. } => forward.clone(),
            Kind::Projector(m) => {
                let mut out = Array2::zeros((m.rows, m.cols));
                for (i, j, v) in m.triplets() {
                    out[[i, j]] = v;
                }
                out
            }
        }
    }

    pub fn apply(&self, x: &WeightedVector) -> Result<WeightedVector> {
        check_len(self.domain.len(), x.len())?;
        Ok(WeightedVector::new(self.apply_values(x.values()), self.range.clone())
            .expect("range grid matches output"))
    }

    pub fn adjoint_apply(&self, lambda: &WeightedVector) -> Result<WeightedVector> {
        check_len(self.range.len(), lambda.len())?;
        Ok(
            WeightedVector::new(self.adjoint_values(lambda.values()), self.domain.clone())
                .expect("domain grid matches output"),
        )
    }

    pub(crate) fn apply_values(&self, x: &Array1<f64>) -> Array1<f64> {
        match &self.kind {
            Kind::Dense { forward, .. } | Kind::Integral { forward, .. } => forward.dot(x),
            Kind::Projector(m) => m.matvec(x),
        }
    }

    pub(crate) fn adjoint_values(&self, lambda: &Array1<f64>) -> Array1<f64> {
        match &self.kind {
            Kind::Dense { adjoint, .. } | Kind::Integral { adjoint, .. } => adjoint.dot(lambda),
            // projectors live on unit-weight grids
            Kind::Projector(m) => m.matvec_transpose(lambda),
        }
    }

    /// Power-method estimate of `||A||` from weighted L2(X) to weighted L2(Y).
    ///
    /// Returns the running maximum of `||A x_k|| / ||x_k||` over the iterates
    /// `x_k ~ (A*A)^k x_0`, so it never exceeds the true norm and is
    /// nondecreasing in `iters` for a fixed seed.
    pub fn estimate_norm(&self, iters: usize, seed: u64) -> f64 {
        let iters = iters.max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.domain.len();
        let mut x = WeightedVector::new(
            Array1::from_iter((0..n).map(|_| StandardNormal.sample(&mut rng))),
            self.domain.clone(),
        )
        .expect("domain grid");
        let mut best = 0.0_f64;
        for _ in 0..iters {
            let nx = x.norm();
            if nx == 0.0 || !nx.is_finite() {
                break;
            }
            x = x.scaled(1.0 / nx);
            let ax = self.apply(&x).expect("domain length");
            let est = ax.norm();
            best = best.max(est);
            if est == 0.0 {
                break;
            }
            x = self.adjoint_apply(&ax).expect("range length");
        }
        best
    }

    /// `||A||` from weighted L1(X) to weighted L2(Y): the largest Y-norm of a
    /// column scaled by the inverse domain weight. Exact, since the extreme
    /// points of the L1 ball are scaled unit spikes.
    pub fn norm_from_l1(&self) -> f64 {
        *self.norm_l1.get_or_init(|| {
            let (m, n) = self.shape();
            let wy = self.range.weights();
            let wx = self.domain.weights();
            let mut col_sq = vec![0.0; n];
            match &self.kind {
                Kind::Dense { forward, .. } | Kind::Integral { forward, .. } => {
                    for i in 0..m {
                        for j in 0..n {
                            col_sq[j] += wy[i] * forward[[i, j]] * forward[[i, j]];
                        }
                    }
                }
                Kind::Projector(mat) => {
                    for (i, j, v) in mat.triplets() {
                        col_sq[j] += wy[i] * v * v;
                    }
                }
            }
            col_sq
                .iter()
                .zip(wx.iter())
                .filter(|(_, w)| **w > 0.0)
                .map(|(s, w)| s.sqrt() / w)
                .fold(0.0, f64::max)
        })
    }

    /// Cached `||A||` for the given domain norm (power method with the
    /// default iteration count and seed for L2).
    pub fn norm(&self, domain_norm: DomainNorm) -> f64 {
        match domain_norm {
            DomainNorm::L1 => self.norm_from_l1(),
            DomainNorm::L2 => *self
                .norm_l2
                .get_or_init(|| self.estimate_norm(DEFAULT_NORM_ITERS, DEFAULT_NORM_SEED)),
        }
    }
}
