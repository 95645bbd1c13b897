//! Step 3: trimmed, weighted marginal integration of the Step-2 fits.
//!
//! [`PartialMean`] holds everything that is fixed across treatment levels
//! (trimming indicators, weights, the first-stage recipe and the Step-2
//! smoother settings). [`PartialMean::slice`] evaluates one treatment level
//! and keeps the per-observation plug-ins that the influence functions in
//! [`crate::inference`] reuse.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::first_stage::{FirstStage, GeneratedRegressors};
use crate::inference::{self, InfluenceMatrix, InfluenceOptions};
use crate::kernel::{BandwidthRule, KernelFamily, KernelSpec};
use crate::math::{self, Matrix};
use crate::par;
use crate::sample::Sample;
use crate::smoothing::{LocalOrder, Smoother, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    Unit,
    Supplied,
    /// `Ŵ₁ᵢ = K_h(Tᵢ - t̄) / n⁻¹ Σ_j K_h(T_j - t̄)`.
    TreatedKernel,
    /// `Ŵ₂ᵢ = f̂_{T|X}(t̄ | Xᵢ) / n⁻¹ Σ_j f̂_{T|X}(t̄ | X_j)`.
    TreatedMle,
}

impl WeightKind {
    pub fn name(self) -> &'static str {
        match self {
            WeightKind::Unit => "unit",
            WeightKind::Supplied => "supplied",
            WeightKind::TreatedKernel => "treated_kernel",
            WeightKind::TreatedMle => "treated_mle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "unit" => Ok(WeightKind::Unit),
            "supplied" => Ok(WeightKind::Supplied),
            "treated_kernel" => Ok(WeightKind::TreatedKernel),
            "treated_mle" => Ok(WeightKind::TreatedMle),
            other => Err(Error::invalid("weights", format!("unknown weight kind `{other}`"))),
        }
    }

    pub fn is_treated(self) -> bool {
        matches!(self, WeightKind::TreatedKernel | WeightKind::TreatedMle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightScheme {
    pub kind: WeightKind,
    pub t_bar: Option<f64>,
    /// Explicit weights for [`WeightKind::Supplied`]; falls back to the sample's weights.
    pub supplied: Option<Vec<f64>>,
}

impl WeightScheme {
    pub fn unit() -> Self {
        Self {
            kind: WeightKind::Unit,
            t_bar: None,
            supplied: None,
        }
    }

    pub fn supplied(weights: Option<Vec<f64>>) -> Self {
        Self {
            kind: WeightKind::Supplied,
            t_bar: None,
            supplied: weights,
        }
    }

    pub fn treated_kernel(t_bar: f64) -> Self {
        Self {
            kind: WeightKind::TreatedKernel,
            t_bar: Some(t_bar),
            supplied: None,
        }
    }

    pub fn treated_mle(t_bar: f64) -> Self {
        Self {
            kind: WeightKind::TreatedMle,
            t_bar: Some(t_bar),
            supplied: None,
        }
    }
}

fn interior_t_bar(sample: &Sample, scheme: &WeightScheme) -> Result<f64> {
    let t_bar = scheme
        .t_bar
        .ok_or_else(|| Error::invalid("t_bar", "treated weights need a reference level"))?;
    let t = sample.treatment();
    let lo = t.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let all_equal = lo == hi && lo == t_bar;
    if !all_equal && !(t_bar > lo && t_bar < hi) {
        return Err(Error::invalid(
            "t_bar",
            format!("{t_bar} is not in the interior of the treatment range [{lo}, {hi}]"),
        ));
    }
    Ok(t_bar)
}

fn self_normalize(raw: Vec<f64>) -> Result<Vec<f64>> {
    let m = math::mean(&raw);
    if !(m > 0.0) {
        return Err(Error::invalid("weights", "no mass near the reference level"));
    }
    Ok(raw.into_iter().map(|w| w / m).collect())
}

/// Weight vector for `scheme`. `spec` supplies the treatment bandwidth (its
/// first entry) for the kernel scheme; `v_hat` must contain a GPS column at
/// `t̄` for the MLE scheme.
pub fn treated_weights(
    sample: &Sample,
    scheme: &WeightScheme,
    spec: &KernelSpec,
    v_hat: Option<&GeneratedRegressors>,
) -> Result<Vec<f64>> {
    match scheme.kind {
        WeightKind::Unit => Ok(vec![1.0; sample.n()]),
        WeightKind::Supplied => {
            let w = scheme
                .supplied
                .as_deref()
                .or(sample.weights())
                .ok_or_else(|| Error::invalid("weights", "no supplied weights"))?;
            if w.len() != sample.n() {
                return Err(Error::DimensionMismatch {
                    expected: sample.n(),
                    got: w.len(),
                });
            }
            if !w.iter().all(|x| x.is_finite()) {
                return Err(Error::invalid("weights", "supplied weights must be finite"));
            }
            Ok(w.to_vec())
        }
        WeightKind::TreatedKernel => {
            let t_bar = interior_t_bar(sample, scheme)?;
            let raw = sample.treatment().iter().map(|&t| spec.scaled(0, t - t_bar)).collect();
            self_normalize(raw)
        }
        WeightKind::TreatedMle => {
            let t_bar = interior_t_bar(sample, scheme)?;
            let v = v_hat.ok_or_else(|| Error::invalid("v_hat", "MLE weights need a GPS"))?;
            if !v.kind().is_gps() {
                return Err(Error::invalid("v_hat", "MLE weights need a GPS regressor"));
            }
            let col = v
                .eval_points()
                .iter()
                .position(|&e| e == t_bar)
                .ok_or_else(|| Error::invalid("v_hat", "GPS was not evaluated at t_bar"))?;
            self_normalize(v.values().column(col))
        }
    }
}

/// Step-2 smoother settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Step2 {
    pub order: LocalOrder,
    pub family: KernelFamily,
    /// Bandwidths over `(T, V̂...)`.
    pub bandwidth: BandwidthRule,
    /// Degrade singular local-linear points to local constant (flagged).
    pub allow_fallback: bool,
}

impl Default for Step2 {
    fn default() -> Self {
        Self {
            order: LocalOrder::Linear,
            family: KernelFamily::Gaussian,
            bandwidth: BandwidthRule::rule_of_thumb(5.0),
            allow_fallback: true,
        }
    }
}

/// Dependent variable of the Step-2 regression.
#[derive(Debug, Clone, PartialEq)]
pub enum Dependent {
    /// `1{Y ≤ y}` on an increasing grid.
    Indicator(Vec<f64>),
    /// `Y` itself (mean dose response).
    Outcome,
    /// `K_b(Y - y)` at each point: partial means estimate the density of `Y(t)`.
    Density {
        points: Vec<f64>,
        bandwidth: f64,
        family: KernelFamily,
    },
    /// Arbitrary `n × G` dependent columns.
    Values(Matrix),
}

impl Dependent {
    pub fn columns(&self) -> usize {
        match self {
            Dependent::Indicator(g) => g.len(),
            Dependent::Outcome => 1,
            Dependent::Density { points, .. } => points.len(),
            Dependent::Values(m) => m.cols(),
        }
    }

    /// Grid labels of the columns; empty for the mean.
    pub fn grid(&self) -> Vec<f64> {
        match self {
            Dependent::Indicator(g) => g.clone(),
            Dependent::Density { points, .. } => points.clone(),
            Dependent::Outcome | Dependent::Values(_) => Vec::new(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dependent::Indicator(_) => "cdf",
            Dependent::Outcome => "mean",
            Dependent::Density { .. } => "density",
            Dependent::Values(_) => "values",
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        match self {
            Dependent::Indicator(g) => {
                if g.is_empty() {
                    return Err(Error::invalid("y_grid", "grid is empty"));
                }
                if g.iter().any(|y| !y.is_finite()) || g.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("y_grid", "grid must be finite and strictly increasing"));
                }
                Ok(())
            }
            Dependent::Outcome => Ok(()),
            Dependent::Density { points, bandwidth, .. } => {
                if points.is_empty() {
                    return Err(Error::invalid("points", "no density evaluation points"));
                }
                if !(bandwidth.is_finite() && *bandwidth > 0.0) {
                    return Err(Error::invalid("bandwidth", "must be positive"));
                }
                Ok(())
            }
            Dependent::Values(m) => {
                if m.rows() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: m.rows(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Value of the dependent variable for observation `i`, column `g`.
    pub fn value(&self, outcome: &[f64], i: usize, g: usize) -> f64 {
        match self {
            Dependent::Indicator(grid) => {
                if outcome[i] <= grid[g] {
                    1.0
                } else {
                    0.0
                }
            }
            Dependent::Outcome => outcome[i],
            Dependent::Density {
                points,
                bandwidth,
                family,
            } => family.evaluate((outcome[i] - points[g]) / bandwidth) / bandwidth,
            Dependent::Values(m) => m.get(i, g),
        }
    }
}

enum DepData<'a> {
    /// First grid index at or above each outcome.
    Buckets(Vec<usize>),
    Column(&'a [f64]),
    Dense(Matrix),
}

impl<'a> DepData<'a> {
    fn build(dep: &'a Dependent, outcome: &'a [f64]) -> Self {
        match dep {
            Dependent::Indicator(grid) => {
                DepData::Buckets(outcome.iter().map(|&y| grid.partition_point(|&g| g < y)).collect())
            }
            Dependent::Outcome => DepData::Column(outcome),
            Dependent::Values(m) => DepData::Dense(m.clone()),
            Dependent::Density { points, .. } => {
                let g = points.len();
                let mut m = Matrix::zeros(outcome.len(), g);
                for i in 0..outcome.len() {
                    for c in 0..g {
                        m.set(i, c, dep.value(outcome, i, c));
                    }
                }
                DepData::Dense(m)
            }
        }
    }

    fn apply(&self, weights: &[f64], g: usize, out: &mut [f64]) {
        match self {
            DepData::Buckets(b) => {
                let mut acc = vec![0.0; g + 1];
                for (w, &k) in weights.iter().zip(b) {
                    acc[k] += w;
                }
                let mut s = 0.0;
                for k in 0..g {
                    s += acc[k];
                    out[k] = s;
                }
            }
            DepData::Column(y) => {
                out[0] = weights.iter().zip(y.iter()).map(|(w, y)| w * y).sum();
            }
            DepData::Dense(m) => {
                out.iter_mut().for_each(|o| *o = 0.0);
                for (j, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    for (o, d) in out.iter_mut().zip(m.row(j)) {
                        *o += w * d;
                    }
                }
            }
        }
    }
}

const SLICE_CHUNK: usize = 64;

struct SliceBlock {
    rows: Vec<(Vec<f64>, f64, f64, bool)>,
    equivalent: Vec<f64>,
}

/// Per-treatment-level fit with the plug-ins needed for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceFit {
    pub t: f64,
    /// Generated regressor at this `t` (all columns).
    pub generated: GeneratedRegressors,
    /// Regressor columns actually smoothed over (constant columns dropped).
    pub used_columns: Vec<usize>,
    /// Step-2 bandwidths over `(T, used columns)`.
    pub bandwidths: Vec<f64>,
    /// `K_{h_t}(T_i - t)` for every observation.
    pub kt: Vec<f64>,
    /// Observations with `π̂_i = 1`, in increasing order.
    pub active: Vec<usize>,
    /// `F̂(y_g | t, V̂_i)` for active observations (rows aligned with `active`).
    pub fits: Matrix,
    /// `f̂_{T|V}(t | V̂_i)` for active observations.
    pub cond_density: Vec<f64>,
    /// `Ê[W | V̂_i]` for active observations.
    pub weight_factor: Vec<f64>,
    /// `c_j` with `θ̂_t = Σ_j c_j dep_j`: the Step-3 average of the Step-2
    /// smoother weights, for every observation.
    pub equivalent: Vec<f64>,
    /// `θ̂_t(y_g)`.
    pub values: Vec<f64>,
    /// `n⁻¹ Σ W_i π̂_i`.
    pub mass: f64,
    pub normalized: bool,
    pub fallbacks: usize,
}

impl SliceFit {
    pub fn h_t(&self) -> f64 {
        self.bandwidths[0]
    }

    pub fn regressors(&self) -> Matrix {
        let v = self.generated.values();
        let cols: Vec<Vec<f64>> = self.used_columns.iter().map(|&c| v.column(c)).collect();
        Matrix::from_columns(v.rows(), &cols).expect("columns share the row count")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessMeta {
    /// Step-2 bandwidths per treatment level.
    pub bandwidths: Vec<Vec<f64>>,
    pub weights: WeightKind,
    pub first_stage: &'static str,
    pub order: LocalOrder,
    pub dependent: &'static str,
    pub normalized: bool,
    pub fallbacks: usize,
    /// Set once a CDF column was clipped/rearranged before inversion.
    pub rearranged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessEstimate {
    pub t_grid: Vec<f64>,
    /// Column labels; empty for the mean process.
    pub y_grid: Vec<f64>,
    /// `|t_grid| × columns`.
    pub values: Matrix,
    pub influence: Option<InfluenceMatrix>,
    pub trimmed_share: f64,
    pub meta: ProcessMeta,
}

impl ProcessEstimate {
    pub fn columns(&self) -> usize {
        self.values.cols()
    }

    pub fn curve(&self, t_index: usize) -> &[f64] {
        self.values.row(t_index)
    }
}

/// Step-3 estimator over a fixed sample.
#[derive(Debug, Clone)]
pub struct PartialMean<'a> {
    sample: &'a Sample,
    first_stage: FirstStage,
    step2: Step2,
    indicators: Vec<bool>,
    weights: Vec<f64>,
    weight_kind: WeightKind,
    normalize: bool,
    shared: Option<GeneratedRegressors>,
}

impl<'a> PartialMean<'a> {
    /// `indicators` are the trimming indicators `π̂` (all `true` for no
    /// trimming). Weights are resolved here; treated schemes use the Step-2
    /// treatment bandwidth (kernel) or the first-stage GPS at `t̄` (MLE).
    pub fn new(
        sample: &'a Sample,
        first_stage: FirstStage,
        step2: Step2,
        indicators: Vec<bool>,
        scheme: &WeightScheme,
    ) -> Result<Self> {
        let n = sample.n();
        if indicators.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: indicators.len(),
            });
        }
        if !indicators.iter().any(|&p| p) {
            return Err(Error::EmptyTrimmedSample);
        }
        let shared = if first_stage.depends_on_t() {
            None
        } else {
            Some(first_stage.fit(sample, f64::NAN)?)
        };
        let t_spec = step2.bandwidth_for_treatment(sample)?;
        let weights = match scheme.kind {
            WeightKind::TreatedMle => {
                let t_bar = interior_t_bar(sample, scheme)?;
                let gps = first_stage.gps_column(sample, t_bar)?;
                self_normalize(gps)?
            }
            _ => treated_weights(sample, scheme, &t_spec, None)?,
        };
        Ok(Self {
            sample,
            first_stage,
            step2,
            indicators,
            weights,
            weight_kind: scheme.kind,
            normalize: false,
            shared,
        })
    }

    /// Divide by `n⁻¹ Σ W_i π̂_i` (proper CDF on the trimmed subpopulation).
    pub fn normalized(mut self, on: bool) -> Self {
        self.normalize = on;
        self
    }

    pub fn sample(&self) -> &Sample {
        self.sample
    }

    pub fn first_stage(&self) -> &FirstStage {
        &self.first_stage
    }

    pub fn step2(&self) -> &Step2 {
        &self.step2
    }

    pub fn indicators(&self) -> &[bool] {
        &self.indicators
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_kind(&self) -> WeightKind {
        self.weight_kind
    }

    pub fn unit_weights(&self) -> bool {
        self.weight_kind == WeightKind::Unit
    }

    pub fn is_normalized(&self) -> bool {
        self.normalize
    }

    pub fn trimmed_share(&self) -> f64 {
        crate::trimming::trimmed_share(&self.indicators)
    }

    fn generated_at(&self, t: f64) -> Result<GeneratedRegressors> {
        match &self.shared {
            Some(v) => Ok(v.clone()),
            None => self.first_stage.fit(self.sample, t),
        }
    }

    /// Fits treatment level `t`.
    pub fn slice(&self, t: f64, dep: &Dependent) -> Result<SliceFit> {
        let sample = self.sample;
        let n = sample.n();
        dep.validate(n)?;
        let generated = self.generated_at(t)?;
        let v_all = generated.values();
        let used_columns: Vec<usize> = (0..v_all.cols())
            .filter(|&c| {
                let col = v_all.column(c);
                col.iter().any(|&x| x != col[0])
            })
            .collect();
        let cols: Vec<Vec<f64>> = used_columns.iter().map(|&c| v_all.column(c)).collect();
        let v = Matrix::from_columns(n, &cols)?;
        let mut refs: Vec<&[f64]> = vec![sample.treatment()];
        refs.extend(cols.iter().map(Vec::as_slice));
        let spec = self.step2.bandwidth.spec(self.step2.family, &refs)?;
        let smoother = Smoother::new(sample.treatment(), &v, &spec)?;
        let kt = smoother.treatment_kernel(t);
        let active: Vec<usize> = (0..n).filter(|&i| self.indicators[i]).collect();
        let g = dep.columns();
        let data = DepData::build(dep, sample.outcome());
        let dv = v.cols();
        let mean_w = math::mean(&self.weights);
        let unit = self.unit_weights();
        let order = self.step2.order;
        let fallback = self.step2.allow_fallback;

        // Chunks of fixed size keep the summation order of the equivalent
        // weights independent of the thread count.
        let chunks = active.len().div_ceil(SLICE_CHUNK);
        let blocks = par::map_indexed(chunks, |c| -> Result<SliceBlock> {
            let range = c * SLICE_CHUNK..((c + 1) * SLICE_CHUNK).min(active.len());
            let mut ws = Workspace::new(n);
            let mut block = SliceBlock {
                rows: Vec::with_capacity(range.len()),
                equivalent: vec![0.0; n],
            };
            for a in range {
                let i = active[a];
                let summary = smoother.weights_into(&kt, t, v.row(i), order, fallback, &mut ws)?;
                let ew = if unit {
                    1.0
                } else if dv == 0 {
                    mean_w
                } else {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for (k, w) in ws.regressor_kernel.iter().zip(&self.weights) {
                        num += k * w;
                        den += k;
                    }
                    num / den
                };
                let mut row = vec![0.0; g];
                data.apply(&ws.weights, g, &mut row);
                let wi = self.weights[i];
                for (e, w) in block.equivalent.iter_mut().zip(&ws.weights) {
                    *e += wi * w;
                }
                block
                    .rows
                    .push((row, summary.conditional_treatment_density(), ew, summary.fell_back));
            }
            Ok(block)
        });

        let mut fits = Matrix::zeros(active.len(), g);
        let mut cond_density = Vec::with_capacity(active.len());
        let mut weight_factor = Vec::with_capacity(active.len());
        let mut equivalent = vec![0.0; n];
        let mut fallbacks = 0;
        let mut a = 0;
        for b in blocks {
            let b = b?;
            for (e, x) in equivalent.iter_mut().zip(&b.equivalent) {
                *e += x;
            }
            for (row, dens, ew, fb) in b.rows {
                fits.row_mut(a).copy_from_slice(&row);
                cond_density.push(dens);
                weight_factor.push(ew);
                fallbacks += fb as usize;
                a += 1;
            }
        }
        let mass = active.iter().map(|&i| self.weights[i]).sum::<f64>() / n as f64;
        if self.normalize && !(mass > 0.0) {
            return Err(Error::EmptyTrimmedSample);
        }
        let mut values = vec![0.0; g];
        for (a, &i) in active.iter().enumerate() {
            let w = self.weights[i];
            for (v, f) in values.iter_mut().zip(fits.row(a)) {
                *v += f * w;
            }
        }
        let denom = if self.normalize { mass * n as f64 } else { n as f64 };
        values.iter_mut().for_each(|v| *v /= denom);
        equivalent.iter_mut().for_each(|e| *e /= denom);

        Ok(SliceFit {
            t,
            generated,
            used_columns,
            bandwidths: spec.bandwidths().to_vec(),
            kt,
            active,
            fits,
            cond_density,
            weight_factor,
            equivalent,
            values,
            mass,
            normalized: self.normalize,
            fallbacks,
        })
    }

    /// `θ̂_t` over `t_grid`, with influence contributions when `influence` is set.
    pub fn estimate(
        &self,
        t_grid: &[f64],
        dep: &Dependent,
        influence: Option<&InfluenceOptions>,
    ) -> Result<ProcessEstimate> {
        if t_grid.is_empty() {
            return Err(Error::invalid("t_grid", "grid is empty"));
        }
        dep.validate(self.sample.n())?;
        let g = dep.columns();
        let per_t = par::map_indexed(t_grid.len(), |k| -> Result<(SliceFit, Option<Matrix>)> {
            let slice = self.slice(t_grid[k], dep)?;
            let psi = match influence {
                Some(opts) => Some(inference::influence_main(self, &slice, dep, opts)?),
                None => None,
            };
            Ok((slice, psi))
        });
        let mut values = Matrix::zeros(t_grid.len(), g);
        let mut bandwidths = Vec::with_capacity(t_grid.len());
        let mut fallbacks = 0;
        let mut blocks = Vec::new();
        let mut scales = Vec::new();
        for (k, r) in per_t.into_iter().enumerate() {
            let (slice, psi) = r?;
            values.row_mut(k).copy_from_slice(&slice.values);
            fallbacks += slice.fallbacks;
            if let Some(p) = psi {
                blocks.push(p);
                scales.push(math::sqrt(slice.h_t()));
            }
            bandwidths.push(slice.bandwidths);
        }
        let influence = if influence.is_some() {
            Some(InfluenceMatrix::from_blocks(&blocks, scales, g)?)
        } else {
            None
        };
        Ok(ProcessEstimate {
            t_grid: t_grid.to_vec(),
            y_grid: dep.grid(),
            values,
            influence,
            trimmed_share: self.trimmed_share(),
            meta: ProcessMeta {
                bandwidths,
                weights: self.weight_kind,
                first_stage: self.first_stage.name(),
                order: self.step2.order,
                dependent: dep.name(),
                normalized: self.normalize,
                fallbacks,
                rearranged: false,
            },
        })
    }
}

impl Step2 {
    /// One-dimensional spec carrying the Step-2 treatment bandwidth.
    pub fn bandwidth_for_treatment(&self, sample: &Sample) -> Result<KernelSpec> {
        let h = match &self.bandwidth {
            BandwidthRule::Fixed(h) => {
                let h0 = *h
                    .first()
                    .ok_or_else(|| Error::invalid("bandwidth", "no treatment bandwidth"))?;
                vec![h0]
            }
            rule => rule.resolve(&[sample.treatment()])?,
        };
        KernelSpec::new(self.family, h)
    }
}

/// Step-2 fits of `dep` on `(T, v)` at `(t, v_i)` for the listed rows, with
/// bandwidths from `step2` applied to `(T, v)`.
pub fn local_fits(
    sample: &Sample,
    v: &Matrix,
    step2: &Step2,
    t: f64,
    dep: &Dependent,
    rows: &[usize],
) -> Result<Matrix> {
    let n = sample.n();
    dep.validate(n)?;
    let cols: Vec<Vec<f64>> = (0..v.cols()).map(|c| v.column(c)).collect();
    let mut refs: Vec<&[f64]> = vec![sample.treatment()];
    refs.extend(cols.iter().map(Vec::as_slice));
    let spec = step2.bandwidth.spec(step2.family, &refs)?;
    let smoother = Smoother::new(sample.treatment(), v, &spec)?;
    let kt = smoother.treatment_kernel(t);
    let data = DepData::build(dep, sample.outcome());
    let g = dep.columns();
    let out = par::map_indexed(rows.len(), |a| -> Result<Vec<f64>> {
        let mut ws = Workspace::new(n);
        smoother.weights_into(&kt, t, v.row(rows[a]), step2.order, step2.allow_fallback, &mut ws)?;
        let mut row = vec![0.0; g];
        data.apply(&ws.weights, g, &mut row);
        Ok(row)
    });
    let mut m = Matrix::zeros(rows.len(), g);
    for (a, r) in out.into_iter().enumerate() {
        m.row_mut(a).copy_from_slice(&r?);
    }
    Ok(m)
}

/// Distribution process `θ̂_t(y)` on `t_grid × y_grid`.
pub fn estimate_process(
    estimator: &PartialMean<'_>,
    t_grid: &[f64],
    y_grid: &[f64],
    influence: Option<&InfluenceOptions>,
) -> Result<ProcessEstimate> {
    estimator.estimate(t_grid, &Dependent::Indicator(y_grid.to_vec()), influence)
}

/// Mean dose response `E*[Y(t)]` on `t_grid`.
pub fn estimate_mean_process(
    estimator: &PartialMean<'_>,
    t_grid: &[f64],
    influence: Option<&InfluenceOptions>,
) -> Result<ProcessEstimate> {
    estimator.estimate(t_grid, &Dependent::Outcome, influence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::first_stage::GpsFamily;
    use crate::rng::substream;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn normal(rng: &mut crate::rng::StreamRng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn location_sample(n: usize, seed: u64) -> Sample {
        let mut rng = substream(seed, 0);
        let mut y = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for _ in 0..n {
            let (ti, xi, e) = (normal(&mut rng), normal(&mut rng), normal(&mut rng));
            t.push(ti);
            x.push(xi);
            y.push(ti + xi + e);
        }
        Sample::new(y, t, Matrix::column_vector(x)).unwrap()
    }

    fn untrimmed(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    fn estimator(sample: &Sample, order: LocalOrder) -> PartialMean<'_> {
        PartialMean::new(
            sample,
            FirstStage::Observed,
            Step2 {
                order,
                ..Step2::default()
            },
            untrimmed(sample.n()),
            &WeightScheme::unit(),
        )
        .unwrap()
    }

    #[test]
    fn constant_outcome_step_cdf() {
        let base = location_sample(60, 1);
        let s = base.with_outcome(vec![3.0; 60]).unwrap();
        let mut pi = untrimmed(60);
        for p in pi.iter_mut().take(15) {
            *p = false;
        }
        let grid = [1.0, 2.9, 3.0, 4.0];
        let pm = PartialMean::new(
            &s,
            FirstStage::Observed,
            Step2::default(),
            pi.clone(),
            &WeightScheme::unit(),
        )
        .unwrap();
        let est = estimate_process(&pm, &[0.0], &grid, None).unwrap();
        let share = 45.0 / 60.0;
        let expect = [0.0, 0.0, share, share];
        for (a, b) in est.curve(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{a} {b}");
        }
        let pm = pm.normalized(true);
        let est = estimate_process(&pm, &[0.0], &grid, None).unwrap();
        for (a, b) in est.curve(0).iter().zip([0.0, 0.0, 1.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reaches_one_at_max_outcome() {
        let s = location_sample(150, 2);
        let ymax = s.outcome().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let grid: Vec<f64> = (0..20).map(|k| -3.0 + k as f64 * 0.3).chain([ymax]).collect();
        let pm = estimator(&s, LocalOrder::Constant);
        let est = estimate_process(&pm, &[-0.5, 0.0, 0.5], &grid, None).unwrap();
        for k in 0..3 {
            let c = est.curve(k);
            assert!((c[c.len() - 1] - 1.0).abs() < 1e-12);
            assert!(c.iter().all(|&v| (0.0..=1.0 + 1e-12).contains(&v)));
            assert!(c.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        }
    }

    #[test]
    fn location_mean_dose_response() {
        let s = location_sample(2000, 3);
        let pm = estimator(&s, LocalOrder::Linear);
        let grid = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let est = estimate_mean_process(&pm, &grid, None).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            assert!((est.values.get(k, 0) - t).abs() < 0.1, "{t}: {}", est.values.get(k, 0));
        }
    }

    #[test]
    fn linear_outcome_reproduced_exactly() {
        let base = location_sample(300, 4);
        let s = base.with_outcome(base.treatment().to_vec()).unwrap();
        let pm = estimator(&s, LocalOrder::Linear);
        let est = estimate_mean_process(&pm, &[-0.7, 0.2, 0.9], None).unwrap();
        for (k, t) in [-0.7, 0.2, 0.9].iter().enumerate() {
            assert!((est.values.get(k, 0) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_mean() {
        let base = location_sample(80, 5);
        let s = base.with_outcome(vec![3.0; 80]).unwrap();
        for order in [LocalOrder::Constant, LocalOrder::Linear] {
            let est = estimate_mean_process(&estimator(&s, order), &[0.0, 0.4], None).unwrap();
            for k in 0..2 {
                assert!((est.values.get(k, 0) - 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sin_dose_response() {
        let n = 5000;
        let mut rng = substream(6, 0);
        let u = Uniform::new(-2.0, 2.0).unwrap();
        let mut t = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let ti: f64 = u.sample(&mut rng);
            t.push(ti);
            x.push(normal(&mut rng));
            y.push(math::sin(ti) + 0.5 * normal(&mut rng));
        }
        let s = Sample::new(y, t, Matrix::column_vector(x)).unwrap();
        let pm = PartialMean::new(
            &s,
            FirstStage::Observed,
            Step2 {
                bandwidth: BandwidthRule::rule_of_thumb(1.0),
                ..Step2::default()
            },
            untrimmed(n),
            &WeightScheme::unit(),
        )
        .unwrap();
        let grid: Vec<f64> = (0..9).map(|k| -1.2 + k as f64 * 0.3).collect();
        let est = estimate_mean_process(&pm, &grid, None).unwrap();
        let sup = grid
            .iter()
            .enumerate()
            .map(|(k, &g)| (est.values.get(k, 0) - math::sin(g)).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.08, "{sup}");
    }

    #[test]
    fn scale_equivariance() {
        let s = location_sample(200, 7);
        let (a, b) = (2.5, -1.25);
        let s2 = s.with_outcome(s.outcome().iter().map(|y| a * y + b).collect()).unwrap();
        for order in [LocalOrder::Constant, LocalOrder::Linear] {
            let e1 = estimate_mean_process(&estimator(&s, order), &[0.0, 0.5], None).unwrap();
            let e2 = estimate_mean_process(&estimator(&s2, order), &[0.0, 0.5], None).unwrap();
            for k in 0..2 {
                let lhs = e2.values.get(k, 0);
                let rhs = a * e1.values.get(k, 0) + b;
                assert!((lhs - rhs).abs() < 1e-10 * rhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn treated_weights_schemes() {
        let s = location_sample(100, 8);
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.5]).unwrap();
        let w = treated_weights(&s, &WeightScheme::treated_kernel(0.2), &spec, None).unwrap();
        assert!((math::mean(&w) - 1.0).abs() < 1e-12);

        let same = Sample::new(vec![0.0; 4], vec![1.0; 4], Matrix::empty(4)).unwrap();
        let w = treated_weights(&same, &WeightScheme::treated_kernel(1.0), &spec, None).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-15));

        assert!(treated_weights(&s, &WeightScheme::treated_kernel(50.0), &spec, None).is_err());

        // T independent of X: a fitted normal GPS is nearly constant in X.
        let n = 3000;
        let mut rng = substream(9, 0);
        let t: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let s = Sample::new(vec![0.0; n], t, Matrix::column_vector(x)).unwrap();
        let v = crate::first_stage::gps_mle(s.treatment(), s.covariates(), GpsFamily::Normal, 0.3).unwrap();
        let w = treated_weights(&s, &WeightScheme::treated_mle(0.3), &spec, Some(&v)).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 0.05));
    }

    #[test]
    fn treated_mle_weights_track_true_density() {
        let n = 5000;
        let mut rng = substream(10, 0);
        let mut t = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for _ in 0..n {
            let xi = normal(&mut rng);
            x.push(xi);
            t.push(math::exp(0.5 + xi + 0.5 * normal(&mut rng)));
        }
        let s = Sample::new(vec![0.0; n], t, Matrix::column_vector(x.clone())).unwrap();
        let t_bar = 2.0;
        let v = crate::first_stage::gps_mle(s.treatment(), s.covariates(), GpsFamily::Lognormal, t_bar).unwrap();
        let spec = KernelSpec::new(KernelFamily::Gaussian, vec![0.5]).unwrap();
        let w = treated_weights(&s, &WeightScheme::treated_mle(t_bar), &spec, Some(&v)).unwrap();
        assert!((math::mean(&w) - 1.0).abs() < 1e-12);
        let truth: Vec<f64> = x
            .iter()
            .map(|&xi| GpsFamily::Lognormal.density(t_bar, 0.5 + xi, 0.25))
            .collect();
        let (mw, mt) = (math::mean(&w), math::mean(&truth));
        let cov: f64 = w.iter().zip(&truth).map(|(a, b)| (a - mw) * (b - mt)).sum();
        let corr = cov / ((n - 1) as f64 * math::std_dev(&w) * math::std_dev(&truth));
        assert!(corr > 0.99, "{corr}");
    }

    #[test]
    fn matches_direct_regression_average() {
        let s = location_sample(120, 11);
        let grid = [-1.0, 0.0, 1.0];
        let t = 0.3;
        let est = estimate_process(&estimator(&s, LocalOrder::Linear), &[t], &grid, None).unwrap();
        let spec = Step2::default()
            .bandwidth
            .spec(KernelFamily::Gaussian, &[s.treatment(), &s.covariates().column(0)])
            .unwrap();
        for (g, &y) in grid.iter().enumerate() {
            let dep: Vec<f64> = s.outcome().iter().map(|&o| (o <= y) as u8 as f64).collect();
            let direct = (0..s.n())
                .map(|i| {
                    let at = crate::smoothing::DesignPoint::new(t, s.covariates().row(i).to_vec());
                    crate::smoothing::local_regress(&dep, s.treatment(), s.covariates(), &spec, &at, LocalOrder::Linear)
                        .unwrap()
                        .value
                })
                .sum::<f64>()
                / s.n() as f64;
            assert!((est.values.get(0, g) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_trimmed_sample_rejected() {
        let s = location_sample(10, 12);
        let r = PartialMean::new(
            &s,
            FirstStage::Observed,
            Step2::default(),
            vec![false; 10],
            &WeightScheme::unit(),
        );
        assert!(matches!(r, Err(Error::EmptyTrimmedSample)));
    }

    #[test]
    fn constant_gps_column_is_dropped() {
        // Intercept-only GPS is constant across observations and carries no information.
        let s = location_sample(200, 13);
        let s = Sample::new(s.outcome().to_vec(), s.treatment().to_vec(), Matrix::empty(200)).unwrap();
        let pm = PartialMean::new(
            &s,
            FirstStage::GpsMle {
                family: GpsFamily::Normal,
            },
            Step2::default(),
            untrimmed(200),
            &WeightScheme::unit(),
        )
        .unwrap();
        let slice = pm.slice(0.0, &Dependent::Outcome).unwrap();
        assert!(slice.used_columns.is_empty());
        assert_eq!(slice.fallbacks, 0);
    }
}
