//! Per-pixel one-hidden-layer perceptron on clear-sky index lags, trained by
//! Levenberg-Marquardt with validation early stopping.
//!
//! The network maps the `In` most recent clear-sky indices
//! `(CSI_t, CSI_{t-1}, ..., CSI_{t-In+1})` to `CSI_{t+1}`:
//! `out = Σ_h w2_h · tanh(Σ_j w1_hj · x_j + b1_h) + b2`.
//!
//! Parameters are flattened as `[w1 (hidden-major), b1, w2, b2]`.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector, RealField};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{PixelSeries, StackKind};
use crate::num::Real;

/// Upper clamp on a predicted clear-sky index.
pub const CSI_PREDICTION_MAX: f64 = 1.2;

/// Scalars the trainer can factorize normal equations in.
pub trait LmScalar: Real + RealField {}
impl<T: Real + RealField> LmScalar for T {}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelMlp<T> {
    pub in_count: usize,
    pub hidden_count: usize,
    /// `hidden_count x in_count`, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
    pub rng_seed: u64,
}

impl<T: Real> PixelMlp<T> {
    pub fn param_count_for(in_count: usize, hidden_count: usize) -> usize {
        hidden_count * in_count + 2 * hidden_count + 1
    }

    pub fn zeros(in_count: usize, hidden_count: usize) -> Self {
        Self {
            in_count,
            hidden_count,
            w1: vec![T::zero(); in_count * hidden_count],
            b1: vec![T::zero(); hidden_count],
            w2: vec![T::zero(); hidden_count],
            b2: T::zero(),
            rng_seed: 0,
        }
    }

    /// Weights uniform in `[-0.5, 0.5]` from a generator seeded with `seed`.
    pub fn init(in_count: usize, hidden_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self::zeros(in_count, hidden_count);
        let p: Vec<T> = (0..net.param_count())
            .map(|_| T::lit(rng.random_range(-0.5..=0.5)))
            .collect();
        net.set_params(&p);
        net.rng_seed = seed;
        net
    }

    pub fn param_count(&self) -> usize {
        Self::param_count_for(self.in_count, self.hidden_count)
    }

    pub fn params(&self) -> Vec<T> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.w1);
        p.extend_from_slice(&self.b1);
        p.extend_from_slice(&self.w2);
        p.push(self.b2);
        p
    }

    pub fn set_params(&mut self, p: &[T]) {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let (h, n) = (self.hidden_count, self.in_count);
        self.w1.copy_from_slice(&p[..h * n]);
        self.b1.copy_from_slice(&p[h * n..h * n + h]);
        self.w2.copy_from_slice(&p[h * n + h..h * n + 2 * h]);
        self.b2 = p[h * n + 2 * h];
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|v| Float::is_finite(*v))
    }

    /// Raw network output (linear output unit).
    pub fn forward(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.in_count);
        let mut out = self.b2;
        for h in 0..self.hidden_count {
            let row = &self.w1[h * self.in_count..(h + 1) * self.in_count];
            let a = row.iter().zip(x).fold(self.b1[h], |acc, (w, v)| acc + *w * *v);
            out = out + self.w2[h] * Float::tanh(a);
        }
        out
    }

    /// Network output clamped to `[0, 1.2]`.
    pub fn predict_csi(&self, x: &[T]) -> T {
        Float::min(Float::max(self.forward(x), T::zero()), T::lit(CSI_PREDICTION_MAX))
    }

    /// Output and its gradient with respect to the flattened parameters.
    pub fn output_gradient(&self, x: &[T], grad: &mut [T]) -> T {
        let (hc, n) = (self.hidden_count, self.in_count);
        let mut out = self.b2;
        for h in 0..hc {
            let row = &self.w1[h * n..(h + 1) * n];
            let a = row.iter().zip(x).fold(self.b1[h], |acc, (w, v)| acc + *w * *v);
            let o = Float::tanh(a);
            out = out + self.w2[h] * o;
            let d = self.w2[h] * (T::one() - o * o);
            for j in 0..n {
                grad[h * n + j] = d * x[j];
            }
            grad[hc * n + h] = d;
            grad[hc * n + hc + h] = o;
        }
        grad[hc * n + 2 * hc] = T::one();
        out
    }
}

/// Lagged input rows and next-step targets, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet<T> {
    pub in_count: usize,
    /// `rows x in_count`, row-major, most recent lag first.
    pub inputs: Vec<T>,
    pub targets: Vec<T>,
    pub target_times: Vec<i64>,
}

impl<T: Real> TrainingSet<T> {
    pub fn new(in_count: usize, inputs: Vec<T>, targets: Vec<T>, target_times: Vec<i64>) -> Result<Self> {
        if in_count == 0 || inputs.len() != targets.len() * in_count || target_times.len() != targets.len() {
            return Err(Error::InvalidArgument("inconsistent training set dimensions".into()));
        }
        Ok(Self {
            in_count,
            inputs,
            targets,
            target_times,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.inputs[k * self.in_count..(k + 1) * self.in_count]
    }

    /// Rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            in_count: self.in_count,
            inputs: self.inputs[start * self.in_count..end * self.in_count].to_vec(),
            targets: self.targets[start..end].to_vec(),
            target_times: self.target_times[start..end].to_vec(),
        }
    }
}

/// Sliding windows of `in_count` inputs plus one target. Windows touching a
/// missing value are dropped.
pub fn build_training_set<T: Real>(series: &PixelSeries<T>, in_count: usize) -> Result<TrainingSet<T>> {
    if series.kind != StackKind::ClearSkyIndex {
        return Err(Error::InvalidArgument(format!(
            "training needs a clear-sky index series, got {:?}",
            series.kind
        )));
    }
    if in_count == 0 {
        return Err(Error::InvalidArgument("input count must be >= 1".into()));
    }
    if series.len() > 1 && series.step().is_none() {
        return Err(Error::InvalidArgument("training series must have a constant step".into()));
    }
    let v = &series.values;
    let valid = v.iter().filter(|x| !x.is_missing()).count();
    if valid < in_count + 2 {
        return Err(Error::InsufficientData(format!(
            "{valid} valid samples, need at least {}",
            in_count + 2
        )));
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut times = Vec::new();
    for t in in_count - 1..v.len().saturating_sub(1) {
        let window = &v[t + 1 - in_count..=t + 1];
        if window.iter().any(|x| x.is_missing()) {
            continue;
        }
        inputs.extend((0..in_count).map(|k| v[t - k]));
        targets.push(v[t + 1]);
        times.push(series.timestamps[t + 1]);
    }
    if targets.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} complete windows of {} lags",
            targets.len(),
            in_count
        )));
    }
    TrainingSet::new(in_count, inputs, targets, times)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub in_count: usize,
    pub hidden_count: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Consecutive epochs without validation improvement before stopping.
    pub max_fail: usize,
    pub max_epochs: usize,
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    pub min_gradient: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            in_count: 7,
            hidden_count: 7,
            train_fraction: 0.8,
            val_fraction: 0.2,
            test_fraction: 0.0,
            max_fail: 3,
            max_epochs: 1000,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_max: 1e10,
            min_gradient: 1e-10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) || (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions {fr:?} must be in [0, 1] and sum to 1"
            )));
        }
        if self.train_fraction <= 0.0 || self.val_fraction <= 0.0 {
            return Err(Error::InvalidArgument("training and validation shares must be positive".into()));
        }
        if self.max_fail == 0 || self.max_epochs == 0 || self.in_count == 0 || self.hidden_count == 0 {
            return Err(Error::InvalidArgument("max_fail, max_epochs and layer sizes must be >= 1".into()));
        }
        if !(self.lambda0 > 0.0 && self.lambda_up > 1.0 && self.lambda_down > 1.0 && self.lambda_max > self.lambda0) {
            return Err(Error::InvalidArgument("invalid damping schedule".into()));
        }
        Ok(())
    }

    /// Chronological `(train, validation, test)` row counts for `n` rows.
    pub fn split_counts(&self, n: usize) -> (usize, usize, usize) {
        let test = ((n as f64) * self.test_fraction).round() as usize;
        let rest = n - test.min(n);
        let train = (((n as f64) * self.train_fraction).round() as usize).clamp(1, rest.saturating_sub(1).max(1));
        let val = rest - train;
        (train, val, n - train - val)
    }
}

/// `JᵀJ`, `Jᵀe` and the residual sum of squares, with `J = ∂out/∂w` and
/// `e = target - out`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations<T> {
    pub params: usize,
    pub jtj: Vec<T>,
    pub jte: Vec<T>,
    pub sse: T,
    pub rows: usize,
}

impl<T: Real> NormalEquations<T> {
    pub fn gradient_norm(&self) -> T {
        Float::sqrt(self.jte.iter().fold(T::zero(), |a, g| a + *g * *g))
    }

    pub fn mse(&self) -> T {
        self.sse / T::lit(self.rows.max(1) as f64)
    }
}

pub fn normal_equations<T: Real>(net: &PixelMlp<T>, set: &TrainingSet<T>) -> NormalEquations<T> {
    let p = net.param_count();
    let mut jtj = vec![T::zero(); p * p];
    let mut jte = vec![T::zero(); p];
    let mut sse = T::zero();
    let mut g = vec![T::zero(); p];
    for k in 0..set.len() {
        let out = net.output_gradient(set.row(k), &mut g);
        let e = set.targets[k] - out;
        sse = sse + e * e;
        for a in 0..p {
            let ga = g[a];
            jte[a] = jte[a] + ga * e;
            let row = &mut jtj[a * p..(a + 1) * p];
            for b in a..p {
                row[b] = row[b] + ga * g[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            jtj[a * p + b] = jtj[b * p + a];
        }
    }
    NormalEquations {
        params: p,
        jtj,
        jte,
        sse,
        rows: set.len(),
    }
}

/// Solves `(JᵀJ + λI) Δ = Jᵀe`. `None` when the system is not positive
/// definite or the solution is not finite.
pub fn lm_solve<T: LmScalar>(jtj: &[T], jte: &[T], lambda: T) -> Option<Vec<T>> {
    let p = jte.len();
    let mut a = DMatrix::from_row_slice(p, p, jtj);
    for d in 0..p {
        a[(d, d)] += lambda;
    }
    let chol = a.cholesky()?;
    let delta = chol.solve(&DVector::from_column_slice(jte));
    delta
        .iter()
        .all(|v| Float::is_finite(*v))
        .then(|| delta.iter().copied().collect())
}

pub fn mean_squared_error<T: Real>(net: &PixelMlp<T>, set: &TrainingSet<T>) -> T {
    if set.is_empty() {
        return T::zero();
    }
    let sse = (0..set.len()).fold(T::zero(), |acc, k| {
        let e = set.targets[k] - net.forward(set.row(k));
        acc + e * e
    });
    sse / T::lit(set.len() as f64)
}

/// Outcome of one damped step.
#[derive(Debug, Clone, PartialEq)]
pub struct LmStep<T> {
    pub net: PixelMlp<T>,
    /// Damping to use for the next step.
    pub lambda: T,
    pub mse: T,
    pub accepted: bool,
    pub gradient_norm: T,
}

/// One Levenberg-Marquardt step: the damping grows by `lambda_up` until the
/// batch MSE decreases, then shrinks by `lambda_down` for the next call. When
/// no damping up to `lambda_max` helps, the input weights come back with
/// `accepted = false`.
pub fn lm_step<T: LmScalar>(net: &PixelMlp<T>, batch: &TrainingSet<T>, lambda: T, cfg: &TrainConfig) -> Result<LmStep<T>> {
    if !net.is_finite() {
        return Err(Error::Diverged("non-finite weights".into()));
    }
    let ne = normal_equations(net, batch);
    let current = ne.mse();
    if !Float::is_finite(current) {
        return Err(Error::Diverged("non-finite loss".into()));
    }
    let gradient_norm = ne.gradient_norm();
    let params = net.params();
    let (up, down, max) = (T::lit(cfg.lambda_up), T::lit(cfg.lambda_down), T::lit(cfg.lambda_max));
    let mut lambda = lambda;
    loop {
        match lm_solve(&ne.jtj, &ne.jte, lambda) {
            Some(delta) => {
                let mut cand = net.clone();
                let p: Vec<T> = params.iter().zip(&delta).map(|(w, d)| *w + *d).collect();
                cand.set_params(&p);
                let mse = mean_squared_error(&cand, batch);
                if Float::is_finite(mse) && mse < current {
                    return Ok(LmStep {
                        net: cand,
                        lambda: lambda / down,
                        mse,
                        accepted: true,
                        gradient_norm,
                    });
                }
                if lambda >= max {
                    return Ok(LmStep {
                        net: net.clone(),
                        lambda,
                        mse: current,
                        accepted: false,
                        gradient_norm,
                    });
                }
            }
            None if lambda >= max => {
                return Err(Error::Diverged(format!("normal equations singular at damping {lambda}")));
            }
            None => {}
        }
        lambda = lambda * up;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxFail,
    MaxEpochs,
    MinGradient,
    /// No damping value up to the cap reduced the training error.
    DampingSaturated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport<T> {
    pub train_mse: T,
    pub val_mse: T,
    pub epochs: usize,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    /// Validation MSE after each epoch, epoch 0 being the initial weights.
    pub val_history: Vec<T>,
    pub train_rows: usize,
    pub val_rows: usize,
    pub last_train_time: i64,
    pub first_val_time: i64,
}

pub fn train<T: LmScalar>(series: &PixelSeries<T>, cfg: &TrainConfig, seed: u64) -> Result<(PixelMlp<T>, TrainReport<T>)> {
    let set = build_training_set(series, cfg.in_count)?;
    train_on_set(&set, cfg, seed)
}

pub fn train_on_set<T: LmScalar>(set: &TrainingSet<T>, cfg: &TrainConfig, seed: u64) -> Result<(PixelMlp<T>, TrainReport<T>)> {
    cfg.validate()?;
    if set.in_count != cfg.in_count {
        return Err(Error::InvalidArgument(format!(
            "training set has {} lags, config expects {}",
            set.in_count, cfg.in_count
        )));
    }
    if set.len() < 2 {
        return Err(Error::InsufficientData("need at least 2 training rows".into()));
    }
    let (n_train, n_val, _) = cfg.split_counts(set.len());
    let train_set = set.slice(0, n_train);
    let val_set = set.slice(n_train, n_train + n_val);

    let mut net = PixelMlp::init(cfg.in_count, cfg.hidden_count, seed);
    let mut best = net.clone();
    let mut best_val = mean_squared_error(&net, &val_set);
    let mut best_epoch = 0;
    let mut history = vec![best_val];
    let mut fails = 0;
    let mut lambda = T::lit(cfg.lambda0);
    let mut epochs = 0;

    let stop_reason = loop {
        if epochs >= cfg.max_epochs {
            break StopReason::MaxEpochs;
        }
        let step = lm_step(&net, &train_set, lambda, cfg)?;
        if step.gradient_norm < T::lit(cfg.min_gradient) {
            break StopReason::MinGradient;
        }
        if !step.accepted {
            break StopReason::DampingSaturated;
        }
        epochs += 1;
        net = step.net;
        lambda = step.lambda;
        let v = mean_squared_error(&net, &val_set);
        history.push(v);
        if v < best_val {
            best_val = v;
            best = net.clone();
            best_epoch = epochs;
            fails = 0;
        } else {
            fails += 1;
            if fails >= cfg.max_fail {
                break StopReason::MaxFail;
            }
        }
    };

    let report = TrainReport {
        train_mse: mean_squared_error(&best, &train_set),
        val_mse: best_val,
        epochs,
        best_epoch,
        stop_reason,
        val_history: history,
        train_rows: train_set.len(),
        val_rows: val_set.len(),
        last_train_time: *train_set.target_times.last().expect("non-empty training split"),
        first_val_time: val_set.target_times.first().copied().unwrap_or(i64::MAX),
    };
    Ok((best, report))
}

/// Per-pixel seed derived from the run seed.
#[inline]
pub fn pixel_seed(global_seed: u64, pixel_index: usize) -> u64 {
    global_seed ^ pixel_index as u64
}

const BUNDLE_MAGIC: &str = "HCMLP1";

/// Trained networks of a whole grid. Untrained pixels are `None` and are
/// stored as NaN-filled blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T> {
    pub width: usize,
    pub height: usize,
    pub in_count: usize,
    pub hidden_count: usize,
    pub seed: u64,
    pub train_start: i64,
    pub train_end: i64,
    pub models: Vec<Option<PixelMlp<T>>>,
}

impl<T: Real> ModelBundle<T> {
    pub fn model(&self, i: usize, j: usize) -> Option<&PixelMlp<T>> {
        self.models.get(i * self.width + j).and_then(|m| m.as_ref())
    }

    /// Text header (one `key=value` per line, closed by `end`) followed by
    /// one block of `f64` LE parameters per pixel in row-major order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.models.len() != self.width * self.height {
            return Err(Error::InvalidArgument("bundle model count does not match grid".into()));
        }
        writeln!(w, "{BUNDLE_MAGIC}")?;
        writeln!(w, "width={}", self.width)?;
        writeln!(w, "height={}", self.height)?;
        writeln!(w, "in_count={}", self.in_count)?;
        writeln!(w, "hidden_count={}", self.hidden_count)?;
        writeln!(w, "seed={}", self.seed)?;
        writeln!(w, "train_start={}", self.train_start)?;
        writeln!(w, "train_end={}", self.train_end)?;
        writeln!(w, "end")?;
        let p = PixelMlp::<T>::param_count_for(self.in_count, self.hidden_count);
        for m in &self.models {
            match m {
                Some(net) => {
                    if net.in_count != self.in_count || net.hidden_count != self.hidden_count {
                        return Err(Error::InvalidArgument("network shape differs from bundle".into()));
                    }
                    for v in net.params() {
                        w.write_all(&v.as_f64().to_le_bytes())?;
                    }
                }
                None => {
                    for _ in 0..p {
                        w.write_all(&f64::NAN.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != BUNDLE_MAGIC {
            return Err(Error::Format(format!("not a model bundle: {:?}", line.trim_end())));
        }
        let mut fields = std::collections::HashMap::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(Error::Format("model bundle header not terminated".into()));
            }
            let l = line.trim_end();
            if l == "end" {
                break;
            }
            let (k, v) = l
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line {l:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }
        fn get<V: std::str::FromStr>(f: &std::collections::HashMap<String, String>, k: &str) -> Result<V> {
            f.get(k)
                .ok_or_else(|| Error::Format(format!("model bundle missing {k}")))?
                .parse()
                .map_err(|_| Error::Format(format!("model bundle field {k} unparsable")))
        }
        let width: usize = get(&fields, "width")?;
        let height: usize = get(&fields, "height")?;
        let in_count: usize = get(&fields, "in_count")?;
        let hidden_count: usize = get(&fields, "hidden_count")?;
        let seed: u64 = get(&fields, "seed")?;
        let train_start: i64 = get(&fields, "train_start")?;
        let train_end: i64 = get(&fields, "train_end")?;

        let p = PixelMlp::<T>::param_count_for(in_count, hidden_count);
        let mut block = vec![0u8; p * 8];
        let mut models = Vec::with_capacity(width * height);
        for idx in 0..width * height {
            r.read_exact(&mut block).map_err(|e| {
                if e.kind() == std::io::ErrorKind::UnexpectedEof {
                    Error::Format(format!("model bundle truncated in pixel block {idx}"))
                } else {
                    e.into()
                }
            })?;
            let vals: Vec<f64> = block
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            if vals.iter().all(|v| v.is_nan()) {
                models.push(None);
            } else {
                let mut net = PixelMlp::zeros(in_count, hidden_count);
                net.set_params(&vals.iter().map(|v| T::lit(*v)).collect::<Vec<_>>());
                net.rng_seed = pixel_seed(seed, idx);
                models.push(Some(net));
            }
        }
        Ok(Self {
            width,
            height,
            in_count,
            hidden_count,
            seed,
            train_start,
            train_end,
            models,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path.as_ref())?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::File::open(path.as_ref())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csi_series(values: Vec<f64>) -> PixelSeries<f64> {
        let ts = (0..values.len() as i64).map(|t| t * 3600).collect();
        PixelSeries::new((0, 0), values, ts, StackKind::ClearSkyIndex).unwrap()
    }

    #[test]
    fn forward_hand_computed() {
        let mut net = PixelMlp::<f64>::zeros(1, 1);
        net.set_params(&[1.0, 0.0, 2.0, 0.0]);
        assert!((net.forward(&[0.5]) - 2.0 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((net.forward(&[0.5]) - 0.9242).abs() < 1e-4);
    }

    #[test]
    fn degenerate_network_outputs_bias() {
        let mut net = PixelMlp::<f64>::zeros(7, 7);
        net.b2 = 0.8;
        assert_eq!(net.forward(&[0.3; 7]), 0.8);
        net.b2 = 3.0;
        assert_eq!(net.predict_csi(&[0.3; 7]), 1.2);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = PixelMlp::<f64>::init(7, 7, 99);
        let b = PixelMlp::<f64>::init(7, 7, 99);
        let c = PixelMlp::<f64>::init(7, 7, 100);
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
        assert!(a.params().iter().all(|v| (-0.5..=0.5).contains(v)));
        assert_eq!(a.param_count(), 64);
    }

    #[test]
    fn training_set_constant() {
        let set = build_training_set(&csi_series(vec![0.7; 20]), 3).unwrap();
        assert_eq!(set.len(), 17);
        assert!(set.inputs.iter().all(|v| *v == 0.7));
        assert!(set.targets.iter().all(|v| *v == 0.7));
    }

    #[test]
    fn training_set_sliding_window() {
        let set = build_training_set(&csi_series((1..=10).map(|v| v as f64).collect()), 3).unwrap();
        assert_eq!(set.row(0), &[3.0, 2.0, 1.0]);
        assert_eq!(set.targets[0], 4.0);
        assert_eq!(set.target_times[0], 3 * 3600);
        assert_eq!(set.len(), 7);
    }

    #[test]
    fn training_set_drops_windows_touching_missing() {
        let mut v: Vec<f64> = (1..=10).map(|v| v as f64 / 10.0).collect();
        v[5] = f64::missing();
        // 7 windows of 4 samples; those starting at 2, 3, 4, 5 contain index 5.
        let set = build_training_set(&csi_series(v), 3).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.targets, vec![0.4, 0.5, 1.0]);
    }

    #[test]
    fn training_set_errors() {
        assert!(matches!(
            build_training_set(&csi_series(vec![0.5; 4]), 3),
            Err(Error::InsufficientData(_))
        ));
        let mut s = csi_series(vec![0.5; 12]);
        s.kind = StackKind::Irradiance;
        assert!(build_training_set(&s, 3).is_err());
    }

    #[test]
    fn lm_solve_zero_residual_gives_zero_step() {
        let jtj = [2.0, 0.5, 0.5, 1.0];
        let d = lm_solve(&jtj, &[0.0, 0.0], 1e-3).unwrap();
        assert_eq!(d, vec![0.0, 0.0]);
    }

    #[test]
    fn lm_solve_heavy_damping_vanishes() {
        let jtj = [2.0, 0.5, 0.5, 1.0];
        let d = lm_solve(&jtj, &[1.0, -3.0], 1e12).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn lm_solve_one_weight_least_squares() {
        // y = w x through (1, 2) and (2, 3) from w = 0: J = [1, 2], e = [2, 3].
        // Closed form w* = Σxy / Σx² = 8 / 5.
        let d = lm_solve(&[5.0], &[8.0], 0.0).unwrap();
        assert!((d[0] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn lm_solve_rejects_indefinite() {
        assert!(lm_solve(&[-1.0], &[1.0], 0.0).is_none());
    }

    fn random_set(n: usize, in_count: usize, seed: u64, f: impl Fn(&[f64]) -> f64) -> TrainingSet<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<f64> = (0..n * in_count).map(|_| rng.random_range(0.0..1.2)).collect();
        let targets = inputs.chunks(in_count).map(&f).collect();
        TrainingSet::new(in_count, inputs, targets, (0..n as i64).collect()).unwrap()
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..20 {
            let (n_in, n_h) = (rng.random_range(1..5), rng.random_range(1..5));
            let mut net = PixelMlp::<f64>::init(n_in, n_h, trial);
            let scaled: Vec<f64> = net.params().iter().map(|v| v * 3.0).collect();
            net.set_params(&scaled);
            let x: Vec<f64> = (0..n_in).map(|_| rng.random_range(-1.0..1.5)).collect();
            let mut g = vec![0.0; net.param_count()];
            net.output_gradient(&x, &mut g);
            let p = net.params();
            for k in 0..p.len() {
                let h = 1e-6;
                let (mut lo, mut hi) = (net.clone(), net.clone());
                let mut pp = p.clone();
                pp[k] += h;
                hi.set_params(&pp);
                pp[k] -= 2.0 * h;
                lo.set_params(&pp);
                let fd = (hi.forward(&x) - lo.forward(&x)) / (2.0 * h);
                let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-8);
                assert!(rel <= 1e-4 || (fd - g[k]).abs() < 1e-9, "trial {trial} param {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn lm_step_decreases_mse() {
        let set = random_set(80, 3, 4, |x| 0.3 + 0.5 * x[0] - 0.2 * x[2]);
        let net = PixelMlp::init(3, 4, 5);
        let before = mean_squared_error(&net, &set);
        let step = lm_step(&net, &set, 1e-3, &TrainConfig::default()).unwrap();
        assert!(step.accepted);
        assert!(step.mse < before);
        assert!((step.lambda - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn constant_target_is_learned() {
        let set = random_set(300, 7, 8, |_| 0.8);
        let (net, _) = train_on_set(&set, &TrainConfig::default(), 3).unwrap();
        let held = random_set(50, 7, 9, |_| 0.8);
        for k in 0..held.len() {
            assert!((net.forward(held.row(k)) - 0.8).abs() < 1e-3);
        }
    }

    #[test]
    fn linear_target_fit() {
        let cfg = TrainConfig {
            max_epochs: 200,
            ..TrainConfig::default()
        };
        let set = random_set(400, 7, 21, |x| 0.5 * x[0] + 0.2);
        let (_, rep) = train_on_set(&set, &cfg, 42).unwrap();
        assert!(rep.val_mse <= 1e-5, "{rep:?}");
        assert!(rep.epochs <= 200);
    }

    #[test]
    fn best_epoch_is_returned() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let set = random_set(200, 3, 22, |x| 0.4 * x[1] + 0.1);
        let noisy: Vec<f64> = set.targets.iter().map(|t| t + rng.random_range(-0.2..0.2)).collect();
        let set = TrainingSet::new(3, set.inputs.clone(), noisy, set.target_times.clone()).unwrap();
        let (_, rep) = train_on_set(&set, &TrainConfig { in_count: 3, ..TrainConfig::default() }, 1).unwrap();
        assert!(rep.val_history.iter().all(|v| rep.val_mse <= *v));
        assert!(rep.last_train_time < rep.first_val_time);
    }

    #[test]
    fn same_seed_same_weights() {
        let v: Vec<f64> = (0..400).map(|t| 0.6 + 0.3 * ((t as f64) * 0.7).sin()).collect();
        let s = csi_series(v);
        let (a, ra) = train(&s, &TrainConfig::default(), 17).unwrap();
        let (b, rb) = train(&s, &TrainConfig::default(), 17).unwrap();
        assert_eq!(ra, rb);
        let bits = |n: &PixelMlp<f64>| n.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn split_is_chronological() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.split_counts(10), (8, 2, 0));
        assert_eq!(cfg.split_counts(2), (1, 1, 0));
        let bad = TrainConfig {
            val_fraction: 0.3,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bundle_round_trip() {
        let models = vec![Some(PixelMlp::<f64>::init(7, 7, 0)), None, Some(PixelMlp::init(7, 7, 2)), None];
        let bundle = ModelBundle {
            width: 2,
            height: 2,
            in_count: 7,
            hidden_count: 7,
            seed: 0,
            train_start: 10,
            train_end: 20,
            models,
        };
        let mut bytes = Vec::new();
        bundle.write_to(&mut bytes).unwrap();
        let back = ModelBundle::<f64>::read_from(&bytes[..]).unwrap();
        assert_eq!(back, bundle);
        assert!(back.model(0, 1).is_none());
        let truncated = &bytes[..bytes.len() - 5];
        assert!(ModelBundle::<f64>::read_from(truncated).is_err());
    }

    #[test]
    fn f32_network_trains() {
        let set64 = random_set(200, 2, 3, |x| 0.5 * x[0] + 0.2);
        let set = TrainingSet::new(
            2,
            set64.inputs.iter().map(|v| *v as f32).collect(),
            set64.targets.iter().map(|v| *v as f32).collect(),
            set64.target_times.clone(),
        )
        .unwrap();
        let cfg = TrainConfig {
            in_count: 2,
            hidden_count: 3,
            ..TrainConfig::default()
        };
        let (_, rep) = train_on_set(&set, &cfg, 5).unwrap();
        assert!(rep.val_mse < 1e-3);
    }
}
