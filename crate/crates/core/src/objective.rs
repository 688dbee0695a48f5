//! Strongly convex objectives over per-user datasets.
//!
//! The global loss is the data-weighted average of per-user local losses,
//! each itself an average of per-point losses. Two loss families are
//! supported, chosen so that strong convexity and smoothness hold exactly:
//!
//! - quadratic: `l(w, x) = 1/2 ||w - x||^2` (mu = L = 1),
//! - l2-regularized logistic: `l(w, (x, y)) = ln(1 + exp(-y w.x)) +
//!   (lambda/2) ||w||^2` with labels in {-1, +1} (mu = lambda; L bounded via
//!   the empirical feature second moment). The regularizer sits inside the
//!   per-point loss so the pooled and weighted forms of the global loss stay
//!   algebraically identical.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{Purpose, Stream};
use crate::vecops::{axpy, dist, dot, norm, norm_sq};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("optimum solver did not converge within {steps} steps")]
    NonConvergence { steps: usize },
    #[error("invalid objective spec ({field}): {reason}")]
    InvalidSpec { field: &'static str, reason: String },
}

/// Per-point loss family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    Quadratic,
    RegularizedLogistic { lambda: f64 },
}

/// One data record: feature vector plus a {-1, +1} label (ignored by the
/// quadratic loss).
#[derive(Debug, Clone, PartialEq)]
pub struct DataPoint {
    pub features: Vec<f64>,
    pub label: f64,
}

/// One user's local dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    pub user_id: usize,
    pub points: Vec<DataPoint>,
}

impl LocalDataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Curvature and gradient-norm constants of an objective instance.
///
/// `grad_norm_bound` (G) bounds the stochastic-gradient norm over a probed
/// ball around the optimum; `grad_std_bound` (sigma) is the matching bound on
/// the per-user sampling standard deviation. Sigma is reported but no bound
/// consumes it: the error constant of the convergence bound uses G alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    pub mu: f64,
    pub smoothness: f64,
    pub grad_norm_bound: f64,
    pub grad_std_bound: f64,
}

/// How to probe for `ProblemConstants::grad_norm_bound`: gradient norms are
/// maximized over all data points and `directions` points on the sphere of
/// `ball_radius` around the optimum (plus the optimum itself), then inflated
/// by a 1.1 safety factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantsProbe {
    pub ball_radius: f64,
    #[serde(default = "default_directions")]
    pub directions: usize,
}

fn default_directions() -> usize {
    64
}

/// Weighted sum of per-user convex local losses.
#[derive(Debug, Clone)]
pub struct Objective {
    loss: LossKind,
    datasets: Vec<LocalDataset>,
    weights: Vec<f64>,
    dim: usize,
}

impl Objective {
    /// Build an objective; weights are `D_i / D`.
    pub fn new(loss: LossKind, datasets: Vec<LocalDataset>) -> Result<Self, ObjectiveError> {
        if datasets.is_empty() {
            return Err(ObjectiveError::InvalidSpec {
                field: "datasets",
                reason: "need at least one user".into(),
            });
        }
        let dim = datasets
            .first()
            .and_then(|d| d.points.first())
            .map(|p| p.features.len())
            .unwrap_or(0);
        let mut total = 0usize;
        for ds in &datasets {
            if ds.is_empty() {
                return Err(ObjectiveError::InvalidSpec {
                    field: "datasets",
                    reason: format!("user {} has an empty dataset", ds.user_id),
                });
            }
            for p in &ds.points {
                if p.features.len() != dim {
                    return Err(ObjectiveError::DimensionMismatch {
                        expected: dim,
                        got: p.features.len(),
                    });
                }
                if matches!(loss, LossKind::RegularizedLogistic { .. })
                    && p.label != 1.0
                    && p.label != -1.0
                {
                    return Err(ObjectiveError::InvalidSpec {
                        field: "labels",
                        reason: format!("logistic labels must be +/-1, got {}", p.label),
                    });
                }
            }
            total += ds.len();
        }
        if let LossKind::RegularizedLogistic { lambda } = loss {
            if lambda <= 0.0 || !lambda.is_finite() {
                return Err(ObjectiveError::InvalidSpec {
                    field: "lambda",
                    reason: format!("lambda must be positive, got {lambda}"),
                });
            }
        }
        let weights: Vec<f64> = datasets
            .iter()
            .map(|d| d.len() as f64 / total as f64)
            .collect();
        debug_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        Ok(Objective {
            loss,
            datasets,
            weights,
            dim,
        })
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn num_users(&self) -> usize {
        self.datasets.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Data weights `p_i`; they sum to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn datasets(&self) -> &[LocalDataset] {
        &self.datasets
    }

    fn check_dim(&self, w: &[f64]) -> Result<(), ObjectiveError> {
        if w.len() != self.dim {
            return Err(ObjectiveError::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            });
        }
        Ok(())
    }

    /// Per-point loss `l(w, x)`.
    pub fn point_loss(&self, w: &[f64], point: &DataPoint) -> f64 {
        match self.loss {
            LossKind::Quadratic => 0.5 * dist(w, &point.features).powi(2),
            LossKind::RegularizedLogistic { lambda } => {
                let margin = point.label * dot(w, &point.features);
                log1p_exp_neg(margin) + 0.5 * lambda * norm_sq(w)
            }
        }
    }

    /// Per-point gradient `grad_w l(w, x)`.
    pub fn point_gradient(&self, w: &[f64], point: &DataPoint) -> Vec<f64> {
        match self.loss {
            LossKind::Quadratic => w
                .iter()
                .zip(&point.features)
                .map(|(wi, xi)| wi - xi)
                .collect(),
            LossKind::RegularizedLogistic { lambda } => {
                let margin = point.label * dot(w, &point.features);
                // d/dw ln(1 + e^{-m}) = -y sigma(-m) x
                let coeff = -point.label * sigmoid(-margin);
                w.iter()
                    .zip(&point.features)
                    .map(|(wi, xi)| coeff * xi + lambda * wi)
                    .collect()
            }
        }
    }

    /// Local loss `F_i(w)`: average per-point loss over user `i`'s dataset.
    pub fn local_loss(&self, user: usize, w: &[f64]) -> Result<f64, ObjectiveError> {
        self.check_dim(w)?;
        let ds = &self.datasets[user];
        Ok(ds.points.iter().map(|p| self.point_loss(w, p)).sum::<f64>() / ds.len() as f64)
    }

    /// Global loss `F(w) = sum_i p_i F_i(w)`.
    pub fn global_loss(&self, w: &[f64]) -> Result<f64, ObjectiveError> {
        self.check_dim(w)?;
        let mut acc = 0.0;
        for (i, p) in self.weights.iter().enumerate() {
            acc += p * self.local_loss(i, w)?;
        }
        Ok(acc)
    }

    /// Exact local gradient `grad F_i(w)`.
    pub fn local_gradient(&self, user: usize, w: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check_dim(w)?;
        let ds = &self.datasets[user];
        let mut grad = vec![0.0; self.dim];
        for p in &ds.points {
            axpy(1.0, &self.point_gradient(w, p), &mut grad);
        }
        let inv = 1.0 / ds.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        Ok(grad)
    }

    /// Exact global gradient `sum_i p_i grad F_i(w)`.
    pub fn global_gradient(&self, w: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check_dim(w)?;
        let mut grad = vec![0.0; self.dim];
        for (i, p) in self.weights.iter().enumerate() {
            axpy(*p, &self.local_gradient(i, w)?, &mut grad);
        }
        Ok(grad)
    }

    /// Gradient at one uniformly sampled point of user `i`'s dataset; the
    /// draw comes from the supplied data-sampling stream.
    pub fn stochastic_gradient(
        &self,
        user: usize,
        w: &[f64],
        stream: &mut Stream,
    ) -> Result<Vec<f64>, ObjectiveError> {
        self.check_dim(w)?;
        let ds = &self.datasets[user];
        let idx = stream.gen_range(ds.len() as u64) as usize;
        Ok(self.point_gradient(w, &ds.points[idx]))
    }

    /// Strong-convexity modulus mu (uniform over users).
    pub fn strong_convexity(&self) -> f64 {
        match self.loss {
            LossKind::Quadratic => 1.0,
            LossKind::RegularizedLogistic { lambda } => lambda,
        }
    }

    /// Smoothness constant L: for logistic, `lambda + max_i
    /// lambda_max(second moment of user i's features) / 4`.
    pub fn smoothness(&self) -> f64 {
        match self.loss {
            LossKind::Quadratic => 1.0,
            LossKind::RegularizedLogistic { lambda } => {
                let worst = self
                    .datasets
                    .iter()
                    .map(|ds| second_moment_max_eig(ds, self.dim))
                    .fold(0.0, f64::max);
                lambda + worst / 4.0
            }
        }
    }

    /// Minimizer and minimum of the global loss.
    ///
    /// Quadratic objectives use the closed form (the weighted mean of user
    /// means); logistic objectives run deterministic full-batch gradient
    /// descent to gradient norm 1e-10.
    pub fn solve_optimum(&self) -> Result<(Vec<f64>, f64), ObjectiveError> {
        match self.loss {
            LossKind::Quadratic => {
                let mut w = vec![0.0; self.dim];
                for (ds, p) in self.datasets.iter().zip(&self.weights) {
                    let mut mean = vec![0.0; self.dim];
                    for pt in &ds.points {
                        axpy(1.0, &pt.features, &mut mean);
                    }
                    axpy(p / ds.len() as f64, &mean, &mut w);
                }
                let f = self.global_loss(&w)?;
                Ok((w, f))
            }
            LossKind::RegularizedLogistic { .. } => {
                const MAX_STEPS: usize = 1_000_000;
                const GRAD_TOL: f64 = 1e-10;
                let step = 1.0 / self.smoothness();
                let mut w = vec![0.0; self.dim];
                for _ in 0..MAX_STEPS {
                    let grad = self.global_gradient(&w)?;
                    if norm(&grad) <= GRAD_TOL {
                        let f = self.global_loss(&w)?;
                        return Ok((w, f));
                    }
                    axpy(-step, &grad, &mut w);
                }
                Err(ObjectiveError::NonConvergence { steps: MAX_STEPS })
            }
        }
    }

    /// Estimate curvature and gradient-norm constants.
    ///
    /// mu and L are analytic. G maximizes per-point gradient norms over the
    /// probed ball around the optimum; sigma does the same for the per-user
    /// centered second moment of the sampled gradient. Both carry a 1.1
    /// safety factor (applied to the squared bound).
    pub fn estimate_constants(
        &self,
        probe: &ConstantsProbe,
        master_seed: u64,
    ) -> Result<ProblemConstants, ObjectiveError> {
        let (w_star, _) = self.solve_optimum()?;
        let mut probes: Vec<Vec<f64>> = Vec::with_capacity(probe.directions + 1);
        probes.push(w_star.clone());
        for k in 0..probe.directions {
            let mut s = Stream::new(master_seed, u64::MAX, Purpose::ConstantsProbe, k as u64);
            let mut dir: Vec<f64> = (0..self.dim).map(|_| s.gen_normal()).collect();
            let len = norm(&dir);
            if len > 0.0 {
                dir.iter_mut().for_each(|x| *x /= len);
            } else {
                dir[0] = 1.0;
            }
            let w: Vec<f64> = w_star
                .iter()
                .zip(&dir)
                .map(|(c, d)| c + probe.ball_radius * d)
                .collect();
            probes.push(w);
        }

        let mut max_grad_sq = 0.0f64;
        let mut max_var = 0.0f64;
        for w in &probes {
            for (i, ds) in self.datasets.iter().enumerate() {
                let local = self.local_gradient(i, w)?;
                let mut var = 0.0;
                for pt in &ds.points {
                    let g = self.point_gradient(w, pt);
                    max_grad_sq = max_grad_sq.max(norm_sq(&g));
                    let centered: Vec<f64> = g.iter().zip(&local).map(|(a, b)| a - b).collect();
                    var += norm_sq(&centered);
                }
                max_var = max_var.max(var / ds.len() as f64);
            }
        }
        Ok(ProblemConstants {
            mu: self.strong_convexity(),
            smoothness: self.smoothness(),
            grad_norm_bound: (1.1 * max_grad_sq).sqrt(),
            grad_std_bound: (1.1 * max_var).sqrt(),
        })
    }

    /// Dump every data point as CSV: `user_id,x0,...,x{d-1},label`.
    pub fn dump_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "user_id")?;
        for k in 0..self.dim {
            write!(out, ",x{k}")?;
        }
        writeln!(out, ",label")?;
        for ds in &self.datasets {
            for p in &ds.points {
                write!(out, "{}", ds.user_id)?;
                for x in &p.features {
                    write!(out, ",{x}")?;
                }
                writeln!(out, ",{}", p.label)?;
            }
        }
        Ok(())
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + exp(-m))`.
#[inline]
fn log1p_exp_neg(m: f64) -> f64 {
    if m >= 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Largest eigenvalue of `(1/D_i) sum_j x_j x_j^T` by power iteration.
fn second_moment_max_eig(ds: &LocalDataset, dim: usize) -> f64 {
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for p in &ds.points {
            let c = dot(&p.features, v);
            axpy(c, &p.features, &mut out);
        }
        let inv = 1.0 / ds.len() as f64;
        out.iter_mut().for_each(|x| *x *= inv);
        out
    };
    let mut v = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut eig = 0.0;
    for _ in 0..1000 {
        let mv = apply(&v);
        let len = norm(&mv);
        if len == 0.0 {
            return 0.0;
        }
        let next: Vec<f64> = mv.iter().map(|x| x / len).collect();
        let new_eig = dot(&next, &apply(&next));
        let done = (new_eig - eig).abs() <= 1e-12 * new_eig.max(1.0);
        v = next;
        eig = new_eig;
        if done {
            break;
        }
    }
    eig
}

/// Partitioning mode for synthetic data generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    /// Pool all points, shuffle, split evenly.
    #[default]
    Iid,
    /// Give each user group a distinct class mixture so that participation
    /// bias shows up in the trained model.
    GroupLabelSkew,
}

/// Loss family selector for synthetic objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Quadratic,
    Logistic,
}

/// Synthetic-objective description, embeddable in a run config.
///
/// Points are drawn from two class-conditional Gaussians with means at
/// `+/- separation/2` along a seed-derived direction; labels are -1 (class 0)
/// and +1 (class 1). The quadratic loss ignores labels but still sees the
/// group-dependent feature shift under [`PartitionMode::GroupLabelSkew`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: LossName,
    pub dim: usize,
    pub points_per_user: usize,
    #[serde(default)]
    pub mode: PartitionMode,
    /// l2 coefficient for the logistic loss.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Class-0 fraction of group 0 under label skew; the last group gets
    /// `1 - skew` and the groups in between interpolate linearly.
    #[serde(default = "default_skew")]
    pub skew: f64,
    #[serde(default = "default_groups")]
    pub num_groups: usize,
    /// Distance between the two class means.
    #[serde(default = "default_separation")]
    pub separation: f64,
    /// Seed of the data-generation stream; fixed by default so that seed
    /// sweeps vary scheduling and sampling but not the dataset.
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
}

fn default_lambda() -> f64 {
    0.1
}
fn default_skew() -> f64 {
    0.8
}
fn default_groups() -> usize {
    4
}
fn default_separation() -> f64 {
    2.0
}
fn default_data_seed() -> u64 {
    0x5EED_DA7A
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let fail = |field: &'static str, reason: String| {
            Err(ObjectiveError::InvalidSpec { field, reason })
        };
        if self.dim == 0 {
            return fail("dim", "dimension must be at least 1".into());
        }
        if self.points_per_user == 0 {
            return fail("points_per_user", "need at least one point per user".into());
        }
        if matches!(self.kind, LossName::Logistic)
            && (self.lambda <= 0.0 || !self.lambda.is_finite())
        {
            return fail("lambda", format!("must be positive, got {}", self.lambda));
        }
        if !(0.5..=1.0).contains(&self.skew) {
            return fail("skew", format!("must lie in [0.5, 1], got {}", self.skew));
        }
        if self.num_groups == 0 {
            return fail("num_groups", "need at least one group".into());
        }
        if self.separation < 0.0 || !self.separation.is_finite() {
            return fail(
                "separation",
                format!("must be nonnegative, got {}", self.separation),
            );
        }
        Ok(())
    }

    /// Class-0 fraction of group `k`.
    pub fn class0_fraction(&self, group: usize) -> f64 {
        if self.num_groups == 1 {
            0.5
        } else {
            let t = group as f64 / (self.num_groups - 1) as f64;
            self.skew + (1.0 - 2.0 * self.skew) * t
        }
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.kind {
            LossName::Quadratic => LossKind::Quadratic,
            LossName::Logistic => LossKind::RegularizedLogistic {
                lambda: self.lambda,
            },
        }
    }
}

/// Generate a synthetic objective over `num_users` users.
///
/// Deterministic given its arguments (one sequential counter-based stream
/// keyed by `data_seed` drives all draws).
pub fn make_synthetic(num_users: usize, spec: &SyntheticSpec) -> Result<Objective, ObjectiveError> {
    spec.validate()?;
    if num_users == 0 {
        return Err(ObjectiveError::InvalidSpec {
            field: "num_users",
            reason: "need at least one user".into(),
        });
    }
    let mut stream = Stream::new(spec.data_seed, u64::MAX, Purpose::DataGen, 0);

    // Class-mean direction, scaled to separation/2 per class.
    let mut dir: Vec<f64> = (0..spec.dim).map(|_| stream.gen_normal()).collect();
    let len = norm(&dir);
    if len > 0.0 {
        dir.iter_mut()
            .for_each(|x| *x *= spec.separation / 2.0 / len);
    } else {
        dir[0] = spec.separation / 2.0;
    }
    let sample_point = |label: f64, stream: &mut Stream| -> DataPoint {
        let features = dir
            .iter()
            .map(|&m| label * m + stream.gen_normal())
            .collect();
        DataPoint { features, label }
    };

    let ppu = spec.points_per_user;
    let datasets: Vec<LocalDataset> = match spec.mode {
        PartitionMode::Iid => {
            // Exactly balanced pooled classes, shuffled, split evenly.
            let total = num_users * ppu;
            let mut pool: Vec<DataPoint> = (0..total)
                .map(|j| {
                    let label = if j < total / 2 { -1.0 } else { 1.0 };
                    sample_point(label, &mut stream)
                })
                .collect();
            for i in (1..pool.len()).rev() {
                pool.swap(i, stream.gen_range(i as u64 + 1) as usize);
            }
            pool.chunks(ppu)
                .enumerate()
                .map(|(user_id, chunk)| LocalDataset {
                    user_id,
                    points: chunk.to_vec(),
                })
                .collect()
        }
        PartitionMode::GroupLabelSkew => (0..num_users)
            .map(|user_id| {
                let group = user_id % spec.num_groups;
                // Exact class counts so the mixture is deterministic.
                let n_class0 = (spec.class0_fraction(group) * ppu as f64).round() as usize;
                let mut points: Vec<DataPoint> = (0..ppu)
                    .map(|j| {
                        let label = if j < n_class0 { -1.0 } else { 1.0 };
                        sample_point(label, &mut stream)
                    })
                    .collect();
                for i in (1..points.len()).rev() {
                    points.swap(i, stream.gen_range(i as u64 + 1) as usize);
                }
                LocalDataset { user_id, points }
            })
            .collect(),
    };
    Objective::new(spec.loss_kind(), datasets)
}
