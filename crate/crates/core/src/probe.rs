//! Regression probes over captured activations.
//!
//! A probe is a two-layer network (100 hidden units, ReLU) trained with MSE,
//! dropout 0.1, learning rate 1e-3, and early stopping, predicting the
//! generation time step from a tap vector or from one of its units. Fit
//! quality is the coefficient of determination on the validation split.

use crate::capture::ActivationDataset;
use crate::error::{Error, Result};
use crate::math::{mean, mm_abt, solve_linear_f64, Adam};
use crate::model::TapPoint;
use crate::par::run_indexed;
use crate::rng::Rng;

const TARGET_VARIANCE_FLOOR: f64 = 1e-12;

/// 1 − SS_res / SS_tot over the evaluated pairs. May be negative.
pub fn r_squared(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Data("r_squared inputs must align".into()));
    }
    if y.len() < 2 {
        return Err(Error::Data("r_squared needs at least two points".into()));
    }
    let ybar = mean(y);
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..y.len() {
        ss_res += (y[i] - yhat[i]) * (y[i] - yhat[i]);
        ss_tot += (y[i] - ybar) * (y[i] - ybar);
    }
    if ss_tot / y.len() as f64 <= TARGET_VARIANCE_FLOOR {
        return Err(Error::DegenerateTarget);
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub hidden_width: usize,
    pub dropout: f32,
    pub lr: f32,
    pub max_epochs: usize,
    pub batch: usize,
    pub patience: usize,
    pub seed: u64,
}

impl ProbeConfig {
    /// Settings for probes over the full activation vector.
    pub fn full_vector(seed: u64) -> Self {
        Self { hidden_width: 100, dropout: 0.1, lr: 1e-3, max_epochs: 1000, batch: 32, patience: 10, seed }
    }

    /// Settings for probes over a single hidden unit.
    pub fn per_unit(seed: u64) -> Self {
        Self { batch: 64, patience: 5, ..Self::full_vector(seed) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_width == 0
            || self.lr <= 0.0
            || self.max_epochs == 0
            || self.batch == 0
            || self.patience == 0
            || !(0.0..1.0).contains(&self.dropout)
        {
            return Err(Error::Config("probe config values must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSelector {
    All,
    SingleUnit(usize),
}

/// One (layer, tap) slice of an activation dataset, flattened for training.
#[derive(Debug, Clone)]
pub struct CellData {
    pub input_dim: usize,
    /// row-major, rows × input_dim
    pub xs: Vec<f32>,
    pub ys: Vec<f64>,
    pub train_rows: Vec<usize>,
    pub val_rows: Vec<usize>,
}

impl CellData {
    pub fn from_dataset(ds: &ActivationDataset, layer: u16, tap: TapPoint) -> Result<Self> {
        let records = ds.cell(layer, tap);
        if records.is_empty() {
            return Err(Error::Data(format!("no records for layer {layer} {}", tap.name())));
        }
        let dim = ds.d_model;
        let mut xs = Vec::with_capacity(records.len() * dim);
        let mut ys = Vec::with_capacity(records.len());
        let mut train_rows = Vec::new();
        let mut val_rows = Vec::new();
        let train_set: std::collections::HashSet<u32> =
            ds.train_examples.iter().copied().collect();
        for (row, rec) in records.iter().enumerate() {
            xs.extend_from_slice(&rec.vector);
            ys.push(rec.timestep as f64);
            if train_set.contains(&rec.example_id) {
                train_rows.push(row);
            } else {
                val_rows.push(row);
            }
        }
        if train_rows.is_empty() || val_rows.is_empty() {
            return Err(Error::Data("cell has an empty train or val side".into()));
        }
        Ok(Self { input_dim: dim, xs, ys, train_rows, val_rows })
    }

    fn column(&self, unit: usize) -> Vec<f32> {
        let n = self.ys.len();
        let mut out = Vec::with_capacity(n);
        for row in 0..n {
            out.push(self.xs[row * self.input_dim + unit]);
        }
        out
    }

    fn target_variance(&self) -> f64 {
        let m = mean(&self.ys);
        self.ys.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / self.ys.len() as f64
    }
}

/// Trained probe: prediction = W₂·ReLU(W₁·x̃ + b₁) + b₂ on the standardized input.
#[derive(Debug, Clone)]
pub struct Probe {
    /// hidden_width × input_dim
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: f32,
    pub feature_mean: Vec<f32>,
    pub feature_std: Vec<f32>,
    pub input_dim: usize,
    pub hidden_width: usize,
}

impl Probe {
    pub fn predict(&self, x: &[f32]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut acc = self.b2;
        for h in 0..self.hidden_width {
            let mut pre = self.b1[h];
            let w_row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            for i in 0..self.input_dim {
                pre += w_row[i] * (x[i] - self.feature_mean[i]) / self.feature_std[i];
            }
            if pre > 0.0 {
                acc += self.w2[h] * pre;
            }
        }
        acc as f64
    }
}

fn standardize_stats(xs: &[f32], rows: &[usize], dim: usize) -> (Vec<f32>, Vec<f32>) {
    let mut mean = vec![0.0f64; dim];
    for &r in rows {
        for i in 0..dim {
            mean[i] += xs[r * dim + i] as f64;
        }
    }
    for m in mean.iter_mut() {
        *m /= rows.len() as f64;
    }
    let mut var = vec![0.0f64; dim];
    for &r in rows {
        for i in 0..dim {
            let c = xs[r * dim + i] as f64 - mean[i];
            var[i] += c * c;
        }
    }
    let std: Vec<f32> = var
        .iter()
        .map(|v| ((v / rows.len() as f64).sqrt() as f32).max(1e-6))
        .collect();
    (mean.iter().map(|&m| m as f32).collect(), std)
}

/// Trains one probe on a cell slice; returns it with its validation R².
pub fn train_probe(
    cell: &CellData,
    config: &ProbeConfig,
    selector: FeatureSelector,
) -> Result<(Probe, f64)> {
    config.validate()?;
    if cell.target_variance() <= TARGET_VARIANCE_FLOOR {
        return Err(Error::DegenerateTarget);
    }
    let (dim, xs_owned);
    let xs: &[f32] = match selector {
        FeatureSelector::All => {
            dim = cell.input_dim;
            &cell.xs
        }
        FeatureSelector::SingleUnit(u) => {
            if u >= cell.input_dim {
                return Err(Error::Data(format!(
                    "unit {u} outside input dimension {}",
                    cell.input_dim
                )));
            }
            dim = 1;
            xs_owned = cell.column(u);
            &xs_owned
        }
    };

    let (f_mean, f_std) = standardize_stats(xs, &cell.train_rows, dim);
    // standardized copies of both splits
    let stdz = |rows: &[usize]| -> (Vec<f32>, Vec<f32>) {
        let mut x = Vec::with_capacity(rows.len() * dim);
        let mut y = Vec::with_capacity(rows.len());
        for &r in rows {
            for i in 0..dim {
                x.push((xs[r * dim + i] - f_mean[i]) / f_std[i]);
            }
            y.push(cell.ys[r] as f32);
        }
        (x, y)
    };
    let (train_x, train_y) = stdz(&cell.train_rows);
    let (val_x, val_y) = stdz(&cell.val_rows);
    let n_train = train_y.len();
    let hidden = config.hidden_width;

    let mut rng = Rng::new(config.seed);
    let n_params = hidden * dim + hidden + hidden + 1;
    let mut params = vec![0.0f32; n_params];
    let w1_std = (2.0 / dim as f32).sqrt();
    let w2_std = (1.0 / hidden as f32).sqrt();
    for v in params[..hidden * dim].iter_mut() {
        *v = rng.normal_f32(0.0, w1_std);
    }
    let w2_off = hidden * dim + hidden;
    for v in params[w2_off..w2_off + hidden].iter_mut() {
        *v = rng.normal_f32(0.0, w2_std);
    }

    let mut adam = Adam::new(n_params, config.lr);
    let mut grads = vec![0.0f32; n_params];
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut best_params = params.clone();
    let mut best_val = f32::INFINITY;
    let mut patience_left = config.patience;

    let mut h_pre = vec![0.0f32; config.batch * hidden];
    let mut mask = vec![false; config.batch * hidden];
    let keep = 1.0 - config.dropout;

    for _epoch in 0..config.max_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(config.batch) {
            let b = chunk.len();
            grads.fill(0.0);
            let (w1, rest) = params.split_at(hidden * dim);
            let (b1, rest) = rest.split_at(hidden);
            let (w2, b2s) = rest.split_at(hidden);
            let b2 = b2s[0];

            // forward
            for (bi, &row) in chunk.iter().enumerate() {
                let x = &train_x[row * dim..(row + 1) * dim];
                mm_abt(&mut h_pre[bi * hidden..(bi + 1) * hidden], x, w1, 1, dim, hidden);
                for h in 0..hidden {
                    let idx = bi * hidden + h;
                    h_pre[idx] += b1[h];
                    if h_pre[idx] < 0.0 {
                        h_pre[idx] = 0.0;
                    }
                    mask[idx] = rng.f32() < keep;
                }
            }
            // output + backward
            let (gw1, grest) = grads.split_at_mut(hidden * dim);
            let (gb1, grest) = grest.split_at_mut(hidden);
            let (gw2, gb2) = grest.split_at_mut(hidden);
            for (bi, &row) in chunk.iter().enumerate() {
                let hrow = &h_pre[bi * hidden..(bi + 1) * hidden];
                let mrow = &mask[bi * hidden..(bi + 1) * hidden];
                let mut yhat = b2;
                for h in 0..hidden {
                    if mrow[h] {
                        yhat += w2[h] * hrow[h] / keep;
                    }
                }
                let dy = 2.0 * (yhat - train_y[row]) / b as f32;
                gb2[0] += dy;
                let x = &train_x[row * dim..(row + 1) * dim];
                for h in 0..hidden {
                    if !mrow[h] {
                        continue;
                    }
                    gw2[h] += dy * hrow[h] / keep;
                    if hrow[h] > 0.0 {
                        let dh = dy * w2[h] / keep;
                        gb1[h] += dh;
                        crate::math::axpy(&mut gw1[h * dim..(h + 1) * dim], x, dh);
                    }
                }
            }
            adam.step(&mut params, &grads);
        }

        // validation MSE without dropout
        let val_mse = mse_of(&params, dim, hidden, &val_x, &val_y);
        if val_mse < best_val - 1e-12 {
            best_val = val_mse;
            best_params.copy_from_slice(&params);
            patience_left = config.patience;
        } else {
            patience_left -= 1;
            if patience_left == 0 {
                break;
            }
        }
    }

    let probe = Probe {
        w1: best_params[..hidden * dim].to_vec(),
        b1: best_params[hidden * dim..hidden * dim + hidden].to_vec(),
        w2: best_params[w2_off..w2_off + hidden].to_vec(),
        b2: best_params[n_params - 1],
        feature_mean: f_mean,
        feature_std: f_std,
        input_dim: dim,
        hidden_width: hidden,
    };
    let val_truth: Vec<f64> = cell.val_rows.iter().map(|&r| cell.ys[r]).collect();
    let preds: Vec<f64> = predictions(&best_params, dim, hidden, &val_x);
    let r2 = r_squared(&val_truth, &preds)?;
    Ok((probe, r2))
}

fn predictions(params: &[f32], dim: usize, hidden: usize, xs_std: &[f32]) -> Vec<f64> {
    let (w1, rest) = params.split_at(hidden * dim);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2s) = rest.split_at(hidden);
    let n = xs_std.len() / dim;
    let mut out = Vec::with_capacity(n);
    let mut h = vec![0.0f32; hidden];
    for r in 0..n {
        mm_abt(&mut h, &xs_std[r * dim..(r + 1) * dim], w1, 1, dim, hidden);
        let mut acc = b2s[0];
        for i in 0..hidden {
            let pre = h[i] + b1[i];
            if pre > 0.0 {
                acc += w2[i] * pre;
            }
        }
        out.push(acc as f64);
    }
    out
}

fn mse_of(params: &[f32], dim: usize, hidden: usize, xs_std: &[f32], ys: &[f32]) -> f32 {
    let preds = predictions(params, dim, hidden, xs_std);
    let mut sum = 0.0f64;
    for (p, &y) in preds.iter().zip(ys.iter()) {
        sum += (p - y as f64) * (p - y as f64);
    }
    (sum / ys.len() as f64) as f32
}

// ---------------------------------------------------------------------------
// Grid sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridCell {
    pub layer: u16,
    pub tap: TapPoint,
    pub runs: Vec<f64>,
    pub r2_mean: f64,
    pub r2_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AbsentCell {
    pub layer: u16,
    pub tap: TapPoint,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProbeReport {
    pub n_runs: usize,
    pub cells: Vec<GridCell>,
    pub absent: Vec<AbsentCell>,
}

impl ProbeReport {
    pub fn cell(&self, layer: u16, tap: TapPoint) -> Option<&GridCell> {
        self.cells.iter().find(|c| c.layer == layer && c.tap == tap)
    }

    pub fn best_cell(&self) -> Option<&GridCell> {
        self.cells.iter().max_by(|a, b| a.r2_mean.total_cmp(&b.r2_mean))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,tap,run,r2\n");
        for c in &self.cells {
            for (i, r2) in c.runs.iter().enumerate() {
                out.push_str(&format!("{},{},{},{}\n", c.layer, c.tap.name(), i, r2));
            }
        }
        out
    }
}

/// Trains `n_runs` probes per (layer, tap) cell with seeds `seed + 0..n_runs`
/// and reports the mean and standard error of the validation R².
pub fn probe_grid(
    ds: &ActivationDataset,
    layers: &[u16],
    taps: &[TapPoint],
    config: &ProbeConfig,
    n_runs: usize,
    threads: usize,
) -> Result<ProbeReport> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    let mut jobs = Vec::new();
    let mut absent = Vec::new();
    for &layer in layers {
        for &tap in taps {
            let cell = CellData::from_dataset(ds, layer, tap)?;
            if cell.target_variance() <= TARGET_VARIANCE_FLOOR {
                absent.push(AbsentCell {
                    layer,
                    tap,
                    reason: "degenerate targets (zero variance)".into(),
                });
            } else {
                jobs.push((layer, tap, cell));
            }
        }
    }
    let runs: Vec<Result<f64>> = run_indexed(jobs.len() * n_runs, threads, |i| {
        let (_, _, cell) = &jobs[i / n_runs];
        let run = i % n_runs;
        let cfg = ProbeConfig { seed: config.seed + run as u64, ..*config };
        train_probe(cell, &cfg, FeatureSelector::All).map(|(_, r2)| r2)
    });
    let mut cells = Vec::with_capacity(jobs.len());
    for (j, (layer, tap, _)) in jobs.iter().enumerate() {
        let mut cell_runs = Vec::with_capacity(n_runs);
        for r in &runs[j * n_runs..(j + 1) * n_runs] {
            match r {
                Ok(r2) => cell_runs.push(*r2),
                Err(e) => return Err(Error::Data(format!("probe run failed: {e}"))),
            }
        }
        cells.push(GridCell {
            layer: *layer,
            tap: *tap,
            r2_mean: mean(&cell_runs),
            r2_stderr: crate::math::stderr(&cell_runs),
            runs: cell_runs,
        });
    }
    Ok(ProbeReport { n_runs, cells, absent })
}

// ---------------------------------------------------------------------------
// Per-unit probing and ranking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UnitScores {
    /// Validation R² per unit index; negative values reported verbatim.
    pub scores: Vec<f64>,
}

impl UnitScores {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit,r2\n");
        for (u, r2) in self.scores.iter().enumerate() {
            out.push_str(&format!("{u},{r2}\n"));
        }
        out
    }
}

/// Trains one single-unit probe per unit of the cell.
pub fn probe_per_unit(cell: &CellData, config: &ProbeConfig, threads: usize) -> Result<UnitScores> {
    let results: Vec<Result<f64>> = run_indexed(cell.input_dim, threads, |u| {
        train_probe(cell, config, FeatureSelector::SingleUnit(u)).map(|(_, r2)| r2)
    });
    let mut scores = Vec::with_capacity(cell.input_dim);
    for r in results {
        scores.push(r?);
    }
    Ok(UnitScores { scores })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UnitRanking {
    /// All units ordered by descending score, ties broken toward lower index.
    pub order: Vec<usize>,
    pub scores: Vec<f64>,
    pub k: usize,
    pub m: usize,
    pub top_k: Vec<usize>,
    pub smallest_k: Vec<usize>,
    pub avg_top_m: f64,
}

/// Ranks units by score. `top_k` are the k best (descending), `smallest_k`
/// the k worst (ascending), `avg_top_m` the mean of the m largest scores.
pub fn rank_units(scores: &UnitScores, k: usize, m: usize) -> Result<UnitRanking> {
    let n = scores.scores.len();
    if k > n || m > n {
        return Err(Error::Config(format!("k {k} and m {m} must be at most {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.scores[b].total_cmp(&scores.scores[a]).then(a.cmp(&b)));
    let top_k = order[..k].to_vec();
    let mut smallest_k: Vec<usize> = order[n - k..].to_vec();
    smallest_k.reverse();
    // ascending by score with ties toward the lower index
    smallest_k.sort_by(|&a, &b| scores.scores[a].total_cmp(&scores.scores[b]).then(a.cmp(&b)));
    let avg_top_m =
        if m == 0 { 0.0 } else { order[..m].iter().map(|&u| scores.scores[u]).sum::<f64>() / m as f64 };
    Ok(UnitRanking { order, scores: scores.scores.clone(), k, m, top_k, smallest_k, avg_top_m })
}

// ---------------------------------------------------------------------------
// Closed-form linear probe (independent oracle)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub feature_mean: Vec<f32>,
    pub feature_std: Vec<f32>,
}

impl LinearProbe {
    pub fn predict(&self, x: &[f32]) -> f64 {
        let mut acc = self.intercept;
        for i in 0..x.len() {
            acc += self.weights[i]
                * ((x[i] - self.feature_mean[i]) / self.feature_std[i]) as f64;
        }
        acc
    }
}

/// Exact ridge-damped least squares on standardized features; the independent
/// check on the network probe. Ridge 1e-6 keeps the system solvable.
pub fn fit_linear_probe(cell: &CellData) -> Result<(LinearProbe, f64)> {
    let dim = cell.input_dim;
    let (f_mean, f_std) = standardize_stats(&cell.xs, &cell.train_rows, dim);
    let aug = dim + 1;
    let mut xtx = vec![0.0f64; aug * aug];
    let mut xty = vec![0.0f64; aug];
    let mut row = vec![0.0f64; aug];
    for &r in &cell.train_rows {
        for i in 0..dim {
            row[i] = ((cell.xs[r * dim + i] - f_mean[i]) / f_std[i]) as f64;
        }
        row[dim] = 1.0;
        let y = cell.ys[r];
        for i in 0..aug {
            xty[i] += row[i] * y;
            for j in 0..aug {
                xtx[i * aug + j] += row[i] * row[j];
            }
        }
    }
    for i in 0..aug {
        xtx[i * aug + i] += 1e-6;
    }
    let w = solve_linear_f64(xtx, xty)
        .ok_or_else(|| Error::Data("linear system unexpectedly singular".into()))?;
    let probe = LinearProbe {
        weights: w[..dim].to_vec(),
        intercept: w[dim],
        feature_mean: f_mean,
        feature_std: f_std,
    };
    let truth: Vec<f64> = cell.val_rows.iter().map(|&r| cell.ys[r]).collect();
    let preds: Vec<f64> = cell
        .val_rows
        .iter()
        .map(|&r| probe.predict(&cell.xs[r * dim..(r + 1) * dim]))
        .collect();
    let r2 = r_squared(&truth, &preds)?;
    Ok((probe, r2))
}

// ---------------------------------------------------------------------------

#[cfg(test)]
pub(crate) mod test_data {
    use super::*;

    /// Synthetic cell: timesteps 1..=steps per example; every feature is unit
    /// noise except `planted`, which carries timestep + σ·noise.
    pub fn planted_cell(
        n_examples: usize,
        steps: usize,
        dim: usize,
        planted: Option<usize>,
        sigma: f64,
        seed: u64,
    ) -> CellData {
        let mut rng = Rng::new(seed);
        let n = n_examples * steps;
        let mut xs = Vec::with_capacity(n * dim);
        let mut ys = Vec::with_capacity(n);
        for _ex in 0..n_examples {
            for t in 1..=steps {
                for i in 0..dim {
                    let noise = rng.normal();
                    let v = match planted {
                        Some(p) if p == i => t as f64 + sigma * noise,
                        _ => noise,
                    };
                    xs.push(v as f32);
                }
                ys.push(t as f64);
            }
        }
        // 90/10 split by example
        let mut example_order: Vec<usize> = (0..n_examples).collect();
        Rng::new(seed ^ 0x5EED).shuffle(&mut example_order);
        let n_train = ((n_examples as f64) * 0.9).floor() as usize;
        let mut train_rows = Vec::new();
        let mut val_rows = Vec::new();
        for (rank, &ex) in example_order.iter().enumerate() {
            let rows = (ex * steps)..((ex + 1) * steps);
            if rank < n_train {
                train_rows.extend(rows);
            } else {
                val_rows.extend(rows);
            }
        }
        CellData { input_dim: dim, xs, ys, train_rows, val_rows }
    }
}

#[cfg(test)]
mod tests {
    use super::test_data::planted_cell;
    use super::*;

    #[test]
    fn r_squared_hand_values() {
        assert!((r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((r_squared(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap() - 0.0).abs() < 1e-12);
        assert!((r_squared(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn r_squared_degenerate_and_affine_invariance() {
        assert!(matches!(r_squared(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), Err(Error::DegenerateTarget)));
        assert!(r_squared(&[1.0], &[1.0]).is_err());
        let y = [1.0, 4.0, 2.0, 8.0, 5.0];
        let yhat = [1.5, 3.0, 2.5, 7.0, 6.0];
        let base = r_squared(&y, &yhat).unwrap();
        for (a, b) in [(2.0, 3.0), (-1.5, 0.25), (10.0, -7.0)] {
            let ty: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let tyhat: Vec<f64> = yhat.iter().map(|v| a * v + b).collect();
            assert!((r_squared(&ty, &tyhat).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn planted_unit_is_recovered_by_full_and_single_probes() {
        let cell = planted_cell(80, 10, 16, Some(7), 0.1, 11);
        let cfg = ProbeConfig::full_vector(1);
        let (_, r2_all) = train_probe(&cell, &cfg, FeatureSelector::All).unwrap();
        assert!(r2_all >= 0.95, "full-vector R² {r2_all}");

        let cfg_unit = ProbeConfig::per_unit(1);
        let (_, r2_planted) = train_probe(&cell, &cfg_unit, FeatureSelector::SingleUnit(7)).unwrap();
        assert!(r2_planted >= 0.95, "planted unit R² {r2_planted}");
        let (_, r2_other) = train_probe(&cell, &cfg_unit, FeatureSelector::SingleUnit(3)).unwrap();
        assert!(r2_other <= 0.1, "noise unit R² {r2_other}");
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let cell = planted_cell(40, 8, 8, Some(2), 0.1, 3);
        let cfg = ProbeConfig::full_vector(9);
        let (_, a) = train_probe(&cell, &cfg, FeatureSelector::All).unwrap();
        let (_, b) = train_probe(&cell, &cfg, FeatureSelector::All).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn per_unit_scores_find_the_planted_unit() {
        let cell = planted_cell(60, 8, 16, Some(5), 0.1, 21);
        let scores = probe_per_unit(&cell, &ProbeConfig::per_unit(2), 2).unwrap();
        assert_eq!(scores.scores.len(), 16);
        let argmax = scores
            .scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        assert_eq!(argmax, 5);
    }

    #[test]
    fn all_noise_units_score_near_zero() {
        let cell = planted_cell(60, 8, 12, None, 0.1, 22);
        let scores = probe_per_unit(&cell, &ProbeConfig::per_unit(3), 2).unwrap();
        let max = scores.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(max <= 0.1, "max noise R² {max}");
    }

    #[test]
    fn rank_units_ordering_and_views() {
        let scores = UnitScores { scores: vec![0.9, 0.1, 0.5] };
        let ranking = rank_units(&scores, 2, 3).unwrap();
        assert_eq!(ranking.top_k, vec![0, 2]);
        assert_eq!(ranking.smallest_k, vec![1, 2]);
        assert_eq!(ranking.order, vec![0, 2, 1]);
        assert!((ranking.avg_top_m - 0.5).abs() < 1e-12);

        let tied = UnitScores { scores: vec![0.5, 0.5] };
        let r = rank_units(&tied, 1, 1).unwrap();
        assert_eq!(r.top_k, vec![0]);

        let empty = rank_units(&scores, 0, 1).unwrap();
        assert!(empty.top_k.is_empty());
        assert!(empty.smallest_k.is_empty());
    }

    #[test]
    fn ranking_is_a_permutation_and_avg_top_m_monotone() {
        let mut rng = Rng::new(5);
        let scores = UnitScores { scores: (0..30).map(|_| rng.normal()).collect() };
        let mut prev = f64::INFINITY;
        for m in 1..=30 {
            let r = rank_units(&scores, 0, m).unwrap();
            let mut sorted = r.order.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..30).collect::<Vec<_>>());
            assert!(r.avg_top_m <= prev + 1e-12);
            prev = r.avg_top_m;
        }
    }

    #[test]
    fn linear_probe_oracle() {
        // exactly linear target
        let mut rng = Rng::new(8);
        let dim = 6;
        let n = 400;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x: Vec<f32> = (0..dim).map(|_| rng.normal_f32(0.0, 1.0)).collect();
            let y: f64 = x.iter().enumerate().map(|(i, &v)| (i as f64 + 1.0) * v as f64).sum::<f64>() + 3.0;
            xs.extend_from_slice(&x);
            ys.push(y);
        }
        let cell = CellData {
            input_dim: dim,
            xs,
            ys,
            train_rows: (0..360).collect(),
            val_rows: (360..400).collect(),
        };
        let (_, r2) = fit_linear_probe(&cell).unwrap();
        assert!(r2 >= 0.999, "linear-realizable R² {r2}");

        // planted construction is linear: network and OLS should agree
        let cell = planted_cell(60, 8, 12, Some(4), 0.1, 31);
        let (_, r2_lin) = fit_linear_probe(&cell).unwrap();
        let (_, r2_mlp) = train_probe(&cell, &ProbeConfig::full_vector(4), FeatureSelector::All).unwrap();
        assert!((r2_lin - r2_mlp).abs() <= 0.05, "lin {r2_lin} vs mlp {r2_mlp}");

        // pure-noise target
        let cell = planted_cell(60, 8, 12, None, 0.1, 32);
        let (_, r2_noise) = fit_linear_probe(&cell).unwrap();
        assert!(r2_noise <= 0.05, "noise R² {r2_noise}");
    }

    #[test]
    fn mlp_probe_is_at_least_linear_minus_tolerance() {
        for seed in [41u64, 42, 43] {
            let cell = planted_cell(50, 8, 10, Some(1), 0.3, seed);
            let (_, r2_lin) = fit_linear_probe(&cell).unwrap();
            let (_, r2_mlp) =
                train_probe(&cell, &ProbeConfig::full_vector(seed), FeatureSelector::All).unwrap();
            assert!(r2_mlp >= r2_lin - 0.10, "seed {seed}: mlp {r2_mlp} lin {r2_lin}");
        }
    }
}
