//! Weighting schemes `{p_k}` and weighted iterate averages
//! `w̃_k = P_k⁻¹ Σ_{i≤k} p_i w_i`.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::SymEigen;
use crate::optimizers::{coupled, LrSchedule};
use crate::problems::KernelProblem;

/// Below this the final cumulative weight is considered too small to divide by.
pub const ILL_CONDITIONED_P: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    SgdAdaptive,
    Nsgd,
    GeneralGd,
    Kernel,
    Geometric,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    /// Cumulative weights `P_0..P_K`.
    Scalar(Vec<f64>),
    /// One cumulative sequence per eigenvalue of a shared basis: entry `k`
    /// holds `(P_k^{(1)}, ..., P_k^{(n)})`.
    Spectral {
        basis: Arc<SymEigen>,
        cumulative: Vec<DVector<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightScheme {
    pub kind: SchemeKind,
    pub weights: Weights,
    /// Set when `P_K` is so small that the average is numerically meaningless.
    pub ill_conditioned: bool,
}

impl WeightScheme {
    fn scalar(kind: SchemeKind, cumulative: Vec<f64>) -> Self {
        let last = cumulative.last().copied().unwrap_or(0.0);
        Self {
            kind,
            weights: Weights::Scalar(cumulative),
            ill_conditioned: last < ILL_CONDITIONED_P,
        }
    }

    /// Scalar scheme from explicit cumulative weights, checked for range and
    /// monotonicity.
    pub fn from_cumulative(kind: SchemeKind, cumulative: Vec<f64>) -> Result<Self> {
        let s = Self::scalar(kind, cumulative);
        s.validate()?;
        Ok(s)
    }

    /// Number of weights, `K + 1`.
    pub fn len(&self) -> usize {
        match &self.weights {
            Weights::Scalar(v) => v.len(),
            Weights::Spectral { cumulative, .. } => cumulative.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self.weights, Weights::Spectral { .. })
    }

    /// Scalar `P_k`. Panics for spectral schemes.
    pub fn cumulative(&self, k: usize) -> f64 {
        match &self.weights {
            Weights::Scalar(v) => v[k],
            Weights::Spectral { .. } => panic!("spectral scheme has no scalar P_k"),
        }
    }

    /// Scalar `p_k = P_k − P_{k−1}` with `p_0 = P_0`.
    pub fn increment(&self, k: usize) -> f64 {
        let cur = self.cumulative(k);
        if k == 0 {
            cur
        } else {
            cur - self.cumulative(k - 1)
        }
    }

    /// `P_k` per eigenvalue; scalar schemes are broadcast to `dim` entries.
    pub fn cumulative_vec(&self, k: usize, dim: usize) -> DVector<f64> {
        match &self.weights {
            Weights::Scalar(v) => DVector::from_element(dim, v[k]),
            Weights::Spectral { cumulative, .. } => cumulative[k].clone(),
        }
    }

    pub fn increment_vec(&self, k: usize, dim: usize) -> DVector<f64> {
        let cur = self.cumulative_vec(k, dim);
        if k == 0 {
            cur
        } else {
            cur - self.cumulative_vec(k - 1, dim)
        }
    }

    pub fn basis(&self) -> Option<&Arc<SymEigen>> {
        match &self.weights {
            Weights::Spectral { basis, .. } => Some(basis),
            Weights::Scalar(_) => None,
        }
    }

    /// Checks `0 ≤ P_k ≤ 1` and monotonicity entry-wise.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let dim = match &self.weights {
            Weights::Scalar(_) => 1,
            Weights::Spectral { basis, .. } => basis.dim(),
        };
        let mut prev = DVector::zeros(dim);
        for k in 0..n {
            let cur = self.cumulative_vec(k, dim);
            if cur.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::precondition(
                    "weights_in_unit_interval",
                    format!("P_{k} outside [0, 1]"),
                ));
            }
            if cur.iter().zip(prev.iter()).any(|(c, p)| c < p) {
                return Err(Error::precondition(
                    "weights_monotone",
                    format!("P_{k} < P_{}", k.saturating_sub(1)),
                ));
            }
            prev = cur;
        }
        Ok(())
    }

    /// Writes `k, p_k, P_k` rows (spectral schemes add the eigen index `j`).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        match &self.weights {
            Weights::Scalar(_) => {
                w.write_record(["k", "p_k", "P_k"])?;
                for k in 0..self.len() {
                    w.serialize((k, self.increment(k), self.cumulative(k)))?;
                }
            }
            Weights::Spectral { basis, .. } => {
                w.write_record(["k", "j", "p_k", "P_k"])?;
                for k in 0..self.len() {
                    let p = self.increment_vec(k, basis.dim());
                    let c = self.cumulative_vec(k, basis.dim());
                    for j in 0..basis.dim() {
                        w.serialize((k, j, p[j], c[j]))?;
                    }
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn require_lambda(lambda: f64) -> Result<()> {
    if lambda == 0.0 {
        Err(Error::ZeroLambda)
    } else if !(lambda > 0.0 && lambda.is_finite()) {
        Err(Error::precondition(
            "lambda_nonnegative",
            format!("lambda must be > 0, got {lambda}"),
        ))
    } else {
        Ok(())
    }
}

/// `P_k = 1 − Π_{i≤k} γ_i/η_i` with `γ_i = η_i/(1 + λη_i)`.
pub fn weights_sgd_adaptive(
    schedule: &LrSchedule,
    lambda: f64,
    k_max: usize,
) -> Result<WeightScheme> {
    require_lambda(lambda)?;
    schedule.require(k_max + 1)?;
    let mut prod = 1.0;
    let cumulative = (0..=k_max)
        .map(|i| {
            let eta = schedule.eta(i);
            prod *= coupled(eta, lambda) / eta;
            1.0 - prod
        })
        .collect();
    Ok(WeightScheme::scalar(SchemeKind::SgdAdaptive, cumulative))
}

/// Decay ratio `C = (1 − √(γ(α+λ))) / (1 − √(ηα))` of the Nesterov scheme.
pub fn nsgd_ratio(eta: f64, lambda: f64, alpha: f64) -> f64 {
    let gamma = coupled(eta, lambda);
    (1.0 - (gamma * (alpha + lambda)).sqrt()) / (1.0 - (eta * alpha).sqrt())
}

/// `P_k = 1 − (γ/η) C^{k−1}` for `k ≥ 1` and `P_0 = 0` (the first two
/// Nesterov iterates are both zero, so index 0 carries no information).
pub fn weights_nsgd(eta: f64, lambda: f64, alpha: f64, k_max: usize) -> Result<WeightScheme> {
    require_lambda(lambda)?;
    if !(eta > 0.0 && alpha > 0.0 && eta * alpha < 1.0) {
        return Err(Error::precondition(
            "eta_alpha_below_one",
            format!("need 0 < eta*alpha < 1, got eta={eta}, alpha={alpha}"),
        ));
    }
    let gamma = coupled(eta, lambda);
    let c = nsgd_ratio(eta, lambda, alpha);
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::precondition(
            "nsgd_ratio_in_unit_interval",
            format!("decay ratio C = {c} is not in (0, 1)"),
        ));
    }
    let r = gamma / eta;
    let cumulative = (0..=k_max)
        .map(|k| {
            if k == 0 {
                0.0
            } else {
                1.0 - r * c.powi(k as i32 - 1)
            }
        })
        .collect();
    Ok(WeightScheme::scalar(SchemeKind::Nsgd, cumulative))
}

/// `P_k = 1 − (γ/η)^{k+1}`.
pub fn weights_general(eta: f64, gamma: f64, k_max: usize) -> Result<WeightScheme> {
    if !(gamma > 0.0 && gamma < eta) {
        return Err(Error::precondition(
            "gamma_below_eta",
            format!("need 0 < gamma < eta, got gamma={gamma}, eta={eta}"),
        ));
    }
    let r = gamma / eta;
    let mut prod = 1.0;
    let cumulative = (0..=k_max)
        .map(|_| {
            prod *= r;
            1.0 - prod
        })
        .collect();
    Ok(WeightScheme::scalar(SchemeKind::GeneralGd, cumulative))
}

/// Matrix weights of kernel ridge regression, one sequence per eigenvalue
/// `μ_j` of `K`: `P_k^{(j)} = 1 − Π_{i≤k} 1/(1 + (λ̂ − λ)η_i μ_j)`.
pub fn weights_kernel(
    kernel: &KernelProblem,
    schedule: &LrSchedule,
    lambda: f64,
    lambda_hat: f64,
    k_max: usize,
) -> Result<WeightScheme> {
    if !(lambda >= 0.0 && lambda_hat > lambda) {
        return Err(Error::precondition(
            "lambda_hat_above_lambda",
            format!("need lambda_hat > lambda >= 0, got lambda={lambda}, lambda_hat={lambda_hat}"),
        ));
    }
    schedule.require(k_max + 1)?;
    let eig = kernel.eigen();
    let shift = lambda_hat - lambda;
    let mut prod = DVector::from_element(eig.dim(), 1.0);
    let cumulative: Vec<DVector<f64>> = (0..=k_max)
        .map(|i| {
            let eta = schedule.eta(i);
            for (p, mu) in prod.iter_mut().zip(eig.values.iter()) {
                *p /= 1.0 + shift * eta * mu;
            }
            prod.map(|p| 1.0 - p)
        })
        .collect();
    let last_max = cumulative.last().map_or(0.0, |c| c.max());
    Ok(WeightScheme {
        kind: SchemeKind::Kernel,
        weights: Weights::Spectral {
            basis: Arc::new(eig.clone()),
            cumulative,
        },
        ill_conditioned: last_max < ILL_CONDITIONED_P,
    })
}

/// Truncated geometric weights `p_k ∝ p(1−p)^k`, renormalized so `P_K = 1`.
pub fn weights_geometric(p_success: f64, k_max: usize) -> Result<WeightScheme> {
    if !(p_success > 0.0 && p_success < 1.0) {
        return Err(Error::precondition(
            "p_success_in_unit_interval",
            format!("success probability must be in (0, 1), got {p_success}"),
        ));
    }
    let raw: Vec<f64> = (0..=k_max)
        .map(|k| p_success * (1.0 - p_success).powi(k as i32))
        .collect();
    let total: f64 = raw.iter().sum();
    let mut acc = 0.0;
    let mut cumulative: Vec<f64> = raw
        .iter()
        .map(|p| {
            acc += p / total;
            acc.min(1.0)
        })
        .collect();
    *cumulative.last_mut().unwrap() = 1.0;
    Ok(WeightScheme::scalar(SchemeKind::Geometric, cumulative))
}

/// Streaming `S_k = Σ p_i w_i`, `P_k = Σ p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningAverage {
    sum: DVector<f64>,
    cumulative: f64,
    count: usize,
}

impl RunningAverage {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: DVector::zeros(dim),
            cumulative: 0.0,
            count: 0,
        }
    }

    /// Consumes iterate `k` with weight `p_k`; indices must arrive in order.
    pub fn update(&mut self, k: usize, w: &DVector<f64>, p: f64) -> Result<()> {
        if k != self.count {
            return Err(Error::OutOfOrder {
                expected: self.count,
                got: k,
            });
        }
        check_dim("running average", self.sum.len(), w.len())?;
        self.sum.axpy(p, w, 1.0);
        self.cumulative += p;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn weighted_sum(&self) -> &DVector<f64> {
        &self.sum
    }

    pub fn cumulative(&self) -> f64 {
        self.cumulative
    }

    pub fn finalize(&self) -> Result<DVector<f64>> {
        if self.cumulative == 0.0 {
            return Err(Error::precondition(
                "cumulative_weight_positive",
                "P_k = 0: nothing to average",
            ));
        }
        Ok(&self.sum / self.cumulative)
    }
}

/// Matrix-weighted running average carried out in a fixed eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRunningAverage {
    basis: Arc<SymEigen>,
    sum: DVector<f64>,
    cumulative: DVector<f64>,
    count: usize,
}

impl SpectralRunningAverage {
    pub fn new(basis: Arc<SymEigen>) -> Self {
        let n = basis.dim();
        Self {
            basis,
            sum: DVector::zeros(n),
            cumulative: DVector::zeros(n),
            count: 0,
        }
    }

    pub fn update(&mut self, k: usize, w: &DVector<f64>, p: &DVector<f64>) -> Result<()> {
        if k != self.count {
            return Err(Error::OutOfOrder {
                expected: self.count,
                got: k,
            });
        }
        check_dim("spectral running average", self.sum.len(), w.len())?;
        check_dim("spectral weights", self.sum.len(), p.len())?;
        let z = self.basis.to_eigenbasis(w);
        self.sum += p.component_mul(&z);
        self.cumulative += p;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `S_k = Σ p_i w_i` in the original coordinates.
    pub fn weighted_sum(&self) -> DVector<f64> {
        self.basis.from_eigenbasis(&self.sum)
    }

    /// `P_k⁺ S_k`; eigendirections whose weight is still zero map to zero.
    pub fn finalize(&self) -> Result<DVector<f64>> {
        if self.cumulative.iter().all(|&c| c == 0.0) {
            return Err(Error::precondition(
                "cumulative_weight_positive",
                "P_k = 0: nothing to average",
            ));
        }
        let z = self
            .sum
            .zip_map(&self.cumulative, |s, c| if c == 0.0 { 0.0 } else { s / c });
        Ok(self.basis.from_eigenbasis(&z))
    }
}

/// Weighted sums `S_k = P_k w̃_k` for every prefix of `iterates`.
pub fn weighted_sums(
    scheme: &WeightScheme,
    iterates: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    check_dim(
        "scheme length vs path",
        iterates.len(),
        scheme.len().min(iterates.len()),
    )?;
    let dim = iterates.first().map_or(0, |w| w.len());
    let mut out = Vec::with_capacity(iterates.len());
    match &scheme.weights {
        Weights::Scalar(_) => {
            let mut avg = RunningAverage::new(dim);
            for (k, w) in iterates.iter().enumerate() {
                avg.update(k, w, scheme.increment(k))?;
                out.push(avg.weighted_sum().clone());
            }
        }
        Weights::Spectral { basis, .. } => {
            let mut avg = SpectralRunningAverage::new(basis.clone());
            for (k, w) in iterates.iter().enumerate() {
                avg.update(k, w, &scheme.increment_vec(k, dim))?;
                out.push(avg.weighted_sum());
            }
        }
    }
    Ok(out)
}

/// Averaged iterates `w̃_k` for every prefix. Where the cumulative weight is
/// still zero (the leading zero iterates of a Nesterov path) the average is
/// reported as the zero vector.
pub fn averaged_path(
    scheme: &WeightScheme,
    iterates: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    check_dim(
        "scheme length vs path",
        iterates.len(),
        scheme.len().min(iterates.len()),
    )?;
    let dim = iterates.first().map_or(0, |w| w.len());
    let mut out = Vec::with_capacity(iterates.len());
    match &scheme.weights {
        Weights::Scalar(_) => {
            let mut avg = RunningAverage::new(dim);
            for (k, w) in iterates.iter().enumerate() {
                avg.update(k, w, scheme.increment(k))?;
                out.push(if avg.cumulative() == 0.0 {
                    DVector::zeros(dim)
                } else {
                    avg.finalize()?
                });
            }
        }
        Weights::Spectral { basis, .. } => {
            let mut avg = SpectralRunningAverage::new(basis.clone());
            for (k, w) in iterates.iter().enumerate() {
                avg.update(k, w, &scheme.increment_vec(k, dim))?;
                out.push(avg.finalize().unwrap_or_else(|_| DVector::zeros(dim)));
            }
        }
    }
    Ok(out)
}

/// Inputs a scheme builder may draw on.
#[derive(Debug, Clone, Default)]
pub struct SchemeParams<'a> {
    pub steps: usize,
    pub lambda: f64,
    pub schedule: Option<&'a LrSchedule>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub p_success: Option<f64>,
    pub kernel: Option<&'a KernelProblem>,
    pub lambda_hat: Option<f64>,
}

impl SchemeParams<'_> {
    fn schedule(&self) -> Result<&LrSchedule> {
        self.schedule.ok_or_else(|| {
            Error::precondition("schedule_present", "scheme needs a learning-rate schedule")
        })
    }

    fn constant_eta(&self) -> Result<f64> {
        self.schedule()?.constant_eta().ok_or_else(|| {
            Error::precondition("constant_rate", "scheme needs a constant learning rate")
        })
    }

    fn need(&self, v: Option<f64>, name: &'static str) -> Result<f64> {
        v.ok_or_else(|| Error::precondition(name, format!("scheme needs `{name}`")))
    }
}

/// A weighting scheme constructor selectable by name.
pub trait SchemeBuilder: Send + Sync {
    fn name(&self) -> &'static str;
    fn build(&self, params: &SchemeParams) -> Result<WeightScheme>;
}

struct SgdBuilder;
struct NsgdBuilder;
struct GeneralBuilder;
struct KernelBuilder;
struct GeometricBuilder;

impl SchemeBuilder for SgdBuilder {
    fn name(&self) -> &'static str {
        "sgd"
    }
    fn build(&self, p: &SchemeParams) -> Result<WeightScheme> {
        weights_sgd_adaptive(p.schedule()?, p.lambda, p.steps)
    }
}

impl SchemeBuilder for NsgdBuilder {
    fn name(&self) -> &'static str {
        "nsgd"
    }
    fn build(&self, p: &SchemeParams) -> Result<WeightScheme> {
        weights_nsgd(
            p.constant_eta()?,
            p.lambda,
            p.need(p.alpha, "alpha")?,
            p.steps,
        )
    }
}

impl SchemeBuilder for GeneralBuilder {
    fn name(&self) -> &'static str {
        "general"
    }
    fn build(&self, p: &SchemeParams) -> Result<WeightScheme> {
        weights_general(p.constant_eta()?, p.need(p.gamma, "gamma")?, p.steps)
    }
}

impl SchemeBuilder for KernelBuilder {
    fn name(&self) -> &'static str {
        "kernel"
    }
    fn build(&self, p: &SchemeParams) -> Result<WeightScheme> {
        let kernel = p.kernel.ok_or_else(|| {
            Error::precondition("kernel_present", "kernel scheme needs a kernel problem")
        })?;
        weights_kernel(
            kernel,
            p.schedule()?,
            p.lambda,
            p.need(p.lambda_hat, "lambda_hat")?,
            p.steps,
        )
    }
}

impl SchemeBuilder for GeometricBuilder {
    fn name(&self) -> &'static str {
        "geometric"
    }
    fn build(&self, p: &SchemeParams) -> Result<WeightScheme> {
        weights_geometric(p.need(p.p_success, "p_success")?, p.steps)
    }
}

fn registry() -> &'static BTreeMap<&'static str, Box<dyn SchemeBuilder>> {
    static REG: OnceLock<BTreeMap<&'static str, Box<dyn SchemeBuilder>>> = OnceLock::new();
    REG.get_or_init(|| {
        let all: Vec<Box<dyn SchemeBuilder>> = vec![
            Box::new(SgdBuilder),
            Box::new(NsgdBuilder),
            Box::new(GeneralBuilder),
            Box::new(KernelBuilder),
            Box::new(GeometricBuilder),
        ];
        all.into_iter().map(|b| (b.name(), b)).collect()
    })
}

pub fn scheme_builder(name: &str) -> Option<&'static dyn SchemeBuilder> {
    registry().get(name).map(|b| b.as_ref())
}

pub fn scheme_names() -> Vec<&'static str> {
    registry().keys().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::RateKind;
    use nalgebra::DMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn sgd_constant_rate_values() {
        let s = weights_sgd_adaptive(&LrSchedule::constant(0.1), 0.1, 9).unwrap();
        let lg = 0.1 * 0.1 / 1.01;
        assert!(close(s.cumulative(0), lg, 1e-16));
        assert!(close(s.cumulative(0), 0.0099010, 1e-7));
        assert!(close(s.cumulative(9), 1.0 - (1.0 - lg).powi(10), 1e-15));
        assert!(close(s.cumulative(9), 0.09471, 1e-5));
    }

    #[test]
    fn sgd_alternating_rates() {
        let sched = LrSchedule::new(RateKind::Sequence(vec![0.1, 0.05]), 0.0, 1.0).unwrap();
        let s = weights_sgd_adaptive(&sched, 0.1, 1).unwrap();
        let (g0, g1) = (0.1 / 1.01, 0.05 / 1.005);
        assert!(close(g0, 0.0990099, 1e-7) && close(g1, 0.0497512, 1e-7));
        let want = 1.0 - (1.0 - 0.1 * g0) * (1.0 - 0.1 * g1);
        assert!(close(s.cumulative(1), want, 1e-15));
        assert!(close(s.cumulative(1), 0.0148269, 1e-7));
        assert!(weights_sgd_adaptive(&sched, 0.1, 2).is_err());
    }

    #[test]
    fn sgd_heavy_regularization_puts_mass_first() {
        let s = weights_sgd_adaptive(&LrSchedule::constant(0.1), 1e9, 3).unwrap();
        assert!(s.cumulative(0) > 1.0 - 1e-7);
    }

    #[test]
    fn zero_lambda_rejected() {
        assert!(matches!(
            weights_sgd_adaptive(&LrSchedule::constant(0.1), 0.0, 5),
            Err(Error::ZeroLambda)
        ));
        assert!(matches!(
            weights_nsgd(0.1, 0.0, 0.05, 5),
            Err(Error::ZeroLambda)
        ));
    }

    #[test]
    fn nsgd_toy_values() {
        let gamma: f64 = 0.1 / 1.01;
        let c = (1.0 - (gamma * 0.15).sqrt()) / (1.0 - (0.1f64 * 0.05).sqrt());
        assert!(close(nsgd_ratio(0.1, 0.1, 0.05), c, 1e-15));
        assert!(close(c, 0.944951, 1e-6));
        let s = weights_nsgd(0.1, 0.1, 0.05, 600).unwrap();
        assert_eq!(s.cumulative(0), 0.0);
        assert!(close(s.cumulative(1), 1.0 - gamma / 0.1, 1e-15));
        assert!(close(s.cumulative(1), 0.009901, 1e-6));
        assert!(close(s.cumulative(2), 0.064404, 1e-6));
        assert!(s.cumulative(600) > 1.0 - 1e-13);
        // small λ: C → 1 and P_k → 1 − γ/η
        let s = weights_nsgd(0.1, 1e-9, 0.05, 10).unwrap();
        assert!(s.cumulative(10) < 1e-7);
    }

    #[test]
    fn nsgd_rejects_ratio_outside_unit_interval() {
        assert!(matches!(
            weights_nsgd(0.1, 0.1, 20.0, 5),
            Err(Error::Precondition {
                name: "eta_alpha_below_one",
                ..
            })
        ));
    }

    #[test]
    fn general_powers_of_half() {
        let s = weights_general(0.2, 0.1, 2).unwrap();
        assert_eq!(
            [s.cumulative(0), s.cumulative(1), s.cumulative(2)],
            [0.5, 0.75, 0.875]
        );
        assert!(!s.ill_conditioned);
        assert!(weights_general(0.1, 1e-12, 0).unwrap().cumulative(0) > 1.0 - 1e-10);
        assert!(
            weights_general(0.1, 0.1 * (1.0 - 1e-9), 100)
                .unwrap()
                .ill_conditioned
        );
        assert!(weights_general(0.1, 0.1, 5).is_err());
    }

    #[test]
    fn kernel_first_weights() {
        let u = crate::linalg::rotation2(0.4);
        let k = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0])) * u.transpose();
        let k = (&k + k.transpose()) * 0.5;
        let kp = KernelProblem::new(k.clone(), DVector::zeros(2)).unwrap();
        let s = weights_kernel(&kp, &LrSchedule::constant(0.1), 0.0, 1.0, 5).unwrap();
        let p0 = s.cumulative_vec(0, 2);
        // ascending eigenvalue order: μ = 1 then μ = 3
        assert!(close(p0[1], 0.230769, 1e-6) && close(p0[0], 0.0909091, 1e-7));
        assert!(close(p0[1], 1.0 - 1.0 / 1.3, 1e-12));
        // P_k K = K P_k
        let basis = s.basis().unwrap();
        for step in 0..6 {
            let pk = &basis.vectors
                * DMatrix::from_diagonal(&s.cumulative_vec(step, 2))
                * basis.vectors.transpose();
            assert!((&pk * &k - &k * &pk).amax() < 1e-10);
        }
        assert!(weights_kernel(&kp, &LrSchedule::constant(0.1), 1.0, 1.0, 5).is_err());
        let big = weights_kernel(&kp, &LrSchedule::constant(0.1), 0.0, 1e12, 0).unwrap();
        assert!(big.cumulative_vec(0, 2).min() > 1.0 - 1e-9);
    }

    #[test]
    fn kernel_null_space_never_regularizes() {
        let kp = KernelProblem::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let s = weights_kernel(&kp, &LrSchedule::constant(0.1), 0.0, 1.0, 50).unwrap();
        for k in 0..=50 {
            assert!(s.cumulative_vec(k, 2)[0].abs() < 1e-14);
        }
    }

    #[test]
    fn geometric_small_case() {
        let s = weights_geometric(0.5, 2).unwrap();
        let p: Vec<f64> = (0..3).map(|k| s.increment(k)).collect();
        for (a, b) in p.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!(close(*a, b, 1e-15));
        }
        assert_eq!(s.cumulative(2), 1.0);
        assert!(weights_geometric(1.0 - 1e-12, 5).unwrap().cumulative(0) > 1.0 - 1e-11);
        for p in [0.9999, 0.999, 0.99, 0.9] {
            weights_geometric(p, 100).unwrap().validate().unwrap();
        }
        assert!(weights_geometric(1.0, 3).is_err());
        assert!(weights_geometric(0.0, 3).is_err());
    }

    #[test]
    fn running_average_basics() {
        let w = DVector::from_vec(vec![1.0, -2.0]);
        let mut a = RunningAverage::new(2);
        a.update(0, &w, 0.3).unwrap();
        assert_eq!(a.finalize().unwrap(), w);

        let mut a = RunningAverage::new(2);
        a.update(0, &DVector::zeros(2), 0.5).unwrap();
        a.update(1, &w, 0.5).unwrap();
        assert_eq!(a.finalize().unwrap(), &w / 2.0);

        assert!(matches!(
            a.update(3, &w, 0.1),
            Err(Error::OutOfOrder {
                expected: 2,
                got: 3
            })
        ));
        assert!(RunningAverage::new(2).finalize().is_err());
    }

    #[test]
    fn uniform_weights_give_arithmetic_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ws: Vec<DVector<f64>> = (0..37)
            .map(|_| DVector::from_fn(3, |_, _| rng.random_range(-5.0..5.0)))
            .collect();
        let mut a = RunningAverage::new(3);
        for (k, w) in ws.iter().enumerate() {
            a.update(k, w, 1.0 / 37.0).unwrap();
        }
        let mean = ws.iter().fold(DVector::zeros(3), |acc, w| acc + w) / 37.0;
        assert!((a.finalize().unwrap() - mean).amax() < 1e-12);
    }

    #[test]
    fn scheme_registry() {
        assert_eq!(
            scheme_names(),
            vec!["general", "geometric", "kernel", "nsgd", "sgd"]
        );
        let sched = LrSchedule::constant(0.1);
        let params = SchemeParams {
            steps: 4,
            lambda: 0.1,
            schedule: Some(&sched),
            alpha: Some(0.05),
            ..Default::default()
        };
        let s = scheme_builder("nsgd").unwrap().build(&params).unwrap();
        assert_eq!(s, weights_nsgd(0.1, 0.1, 0.05, 4).unwrap());
        assert!(scheme_builder("geometric").unwrap().build(&params).is_err());
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        weights_general(0.2, 0.1, 2)
            .unwrap()
            .write_csv(&path)
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "k,p_k,P_k\n0,0.5,0.5\n1,0.25,0.75\n2,0.125,0.875\n");
    }

    fn tail_check(s: &WeightScheme, rho: f64) {
        s.validate().unwrap();
        // 1 − P_k ≤ C ρ^k with C fitted at k = 1
        let k0 = 1;
        let c = (1.0 - s.cumulative(k0)) / rho.powi(k0 as i32);
        for k in k0..s.len() {
            assert!(1.0 - s.cumulative(k) <= c * rho.powi(k as i32) * (1.0 + 1e-9) + 1e-15);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn scheme_validity(eta in 0.01f64..0.9, lambda in 1e-3f64..5.0, alpha_frac in 0.01f64..0.99, steps in 1usize..300) {
            let sgd = weights_sgd_adaptive(&LrSchedule::constant(eta), lambda, steps).unwrap();
            tail_check(&sgd, 1.0 - lambda * coupled(eta, lambda));
            for k in 0..=steps {
                let p = sgd.increment(k);
                let back: f64 = (0..=k).map(|i| sgd.increment(i)).sum();
                prop_assert!((back - sgd.cumulative(k)).abs() < 1e-14);
                prop_assert!(p >= 0.0);
            }
            let alpha = alpha_frac / eta;
            let ns = weights_nsgd(eta, lambda, alpha, steps).unwrap();
            tail_check(&ns, nsgd_ratio(eta, lambda, alpha));
            let gamma = coupled(eta, lambda);
            let gen = weights_general(eta, gamma, steps).unwrap();
            tail_check(&gen, gamma / eta);
        }

        #[test]
        fn streaming_matches_batch(seed in 0u64..10_000, n in 1usize..60) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ws: Vec<DVector<f64>> = (0..n).map(|_| DVector::from_fn(4, |_, _| rng.random_range(-10.0..10.0))).collect();
            let s = weights_sgd_adaptive(&LrSchedule::constant(0.3), rng.random_range(0.01..3.0), n - 1).unwrap();
            let avg = averaged_path(&s, &ws).unwrap();
            let mut direct = DVector::zeros(4);
            for (k, w) in ws.iter().enumerate() {
                direct += w * s.increment(k);
                let want = &direct / s.cumulative(k);
                prop_assert!((&avg[k] - &want).amax() <= 1e-12 * want.amax().max(1.0));
            }
        }

        #[test]
        fn lemma_identity_on_random_increments(seed in 0u64..100_000) {
            // x̂_{k+1} − x̂_k = (1 − P_k)(x_{k+1} − x_k) implies P_k x̃_k = x̂_k − (1 − P_k) x_k
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k_max = 200;
            let cumulative: Vec<f64> = {
                let mut acc = 0.0f64;
                (0..=k_max).map(|_| { acc += rng.random_range(0.0..0.01); acc.min(1.0) }).collect()
            };
            let s = WeightScheme::scalar(SchemeKind::SgdAdaptive, cumulative);
            let mut x = vec![DVector::zeros(3)];
            let mut xh = vec![DVector::zeros(3)];
            for k in 0..k_max {
                let dx = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
                xh.push(&xh[k] + &dx * (1.0 - s.cumulative(k)));
                x.push(&x[k] + dx);
            }
            let sums = weighted_sums(&s, &x).unwrap();
            for k in 0..=k_max {
                let r = &sums[k] - (&xh[k] - &x[k] * (1.0 - s.cumulative(k)));
                prop_assert!(r.amax() <= 1e-10);
            }
        }
    }
}
