//! Regime classification metrics, quadratic forecast scores and
//! replication-level recovery statistics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::PanelDataset;
use crate::error::{Result, RsssError};
use crate::filter::{run_filter, FilterOptions};
use crate::model::{ModelSpec, ParameterSet};

pub const DEFAULT_CUTOFF: f64 = 0.5;

/// 2x2 confusion counts with the second regime as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub fp: usize,
}

impl ConfusionCounts {
    pub fn record(&mut self, predicted_second: bool, truly_second: bool) {
        match (predicted_second, truly_second) {
            (true, true) => self.tp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
            (true, false) => self.fp += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn add(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
        self.fp += other.fp;
    }

    fn ratio(num: usize, den: usize) -> Option<f64> {
        (den > 0).then(|| num as f64 / den as f64)
    }

    pub fn accuracy(&self) -> Option<f64> {
        Self::ratio(self.tp + self.tn, self.total())
    }

    pub fn sensitivity(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        Self::ratio(self.tn, self.tn + self.fp)
    }

    pub fn metrics(&self) -> WindowMetrics {
        WindowMetrics {
            accuracy: self.accuracy(),
            sensitivity: self.sensitivity(),
            specificity: self.specificity(),
            counts: *self,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowMetrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub counts: ConfusionCounts,
}

/// Metrics for occasions `1..=split` (observed) and `split+1..=T` (forecast).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeMetrics {
    pub observed: WindowMetrics,
    pub forecast: WindowMetrics,
}

fn check_cutoff(cutoff: f64) -> Result<()> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(RsssError::Evaluation(format!("cutoff {cutoff} must lie in (0, 1)")));
    }
    Ok(())
}

/// Errors unless at least one occasion follows `split`.
pub fn check_split(split: usize, n_occasions: usize) -> Result<()> {
    if split >= n_occasions {
        return Err(RsssError::Evaluation(format!(
            "forecast window is empty (split {split}, {n_occasions} occasions)"
        )));
    }
    Ok(())
}

/// Classifies the second regime when `pr_s2 > cutoff`; counts are pooled
/// over individuals and occasions within each window.
///
/// `pr_s2[i][t-1]` and `true_regimes[i][t-1]` (labels 1 or 2).
pub fn regime_metrics(pr_s2: &[Vec<f64>], true_regimes: &[Vec<u8>], split: usize, cutoff: f64) -> Result<RegimeMetrics> {
    check_cutoff(cutoff)?;
    if pr_s2.len() != true_regimes.len() {
        return Err(RsssError::Evaluation(format!(
            "{} probability rows for {} truth rows",
            pr_s2.len(),
            true_regimes.len()
        )));
    }
    let n_occasions = true_regimes.first().map_or(0, |r| r.len());
    check_split(split, n_occasions)?;
    let mut observed = ConfusionCounts::default();
    let mut forecast = ConfusionCounts::default();
    for (i, (p_row, s_row)) in pr_s2.iter().zip(true_regimes).enumerate() {
        if p_row.len() != n_occasions || s_row.len() != n_occasions {
            return Err(RsssError::Evaluation(format!("row {i} does not cover {n_occasions} occasions")));
        }
        for (t, (&p, &s)) in p_row.iter().zip(s_row).enumerate() {
            let window = if t < split { &mut observed } else { &mut forecast };
            window.record(p > cutoff, s == 2);
        }
    }
    Ok(RegimeMetrics {
        observed: observed.metrics(),
        forecast: forecast.metrics(),
    })
}

/// Average of per-replication metrics (absent values are skipped) along with
/// the pooled counts.
pub fn average_metrics(runs: &[RegimeMetrics]) -> RegimeMetrics {
    fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
        let v: Vec<f64> = values.flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
    let window = |pick: fn(&RegimeMetrics) -> &WindowMetrics| {
        let mut counts = ConfusionCounts::default();
        for r in runs {
            counts.add(&pick(r).counts);
        }
        WindowMetrics {
            accuracy: mean(runs.iter().map(|r| pick(r).accuracy)),
            sensitivity: mean(runs.iter().map(|r| pick(r).sensitivity)),
            specificity: mean(runs.iter().map(|r| pick(r).specificity)),
            counts,
        }
    };
    RegimeMetrics {
        observed: window(|r| &r.observed),
        forecast: window(|r| &r.forecast),
    }
}

/// Quadratic forecast score per forecast occasion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    /// 1-based occasions `split+1..=T`.
    pub occasions: Vec<usize>,
    pub delta: Vec<f64>,
}

impl ScoreSeries {
    pub fn mean(&self) -> f64 {
        if self.delta.is_empty() {
            return f64::NAN;
        }
        self.delta.iter().sum::<f64>() / self.delta.len() as f64
    }
}

/// `delta_t = N^-1 sum_i sum_j (pred - truth)^2` for `t = split+1..=T`.
///
/// Both inputs are indexed `[i][t-1]`.
pub fn score_function(pred: &[Vec<DVector<f64>>], truth: &[Vec<DVector<f64>>], split: usize) -> Result<ScoreSeries> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(RsssError::Evaluation(format!(
            "{} predicted rows for {} truth rows",
            pred.len(),
            truth.len()
        )));
    }
    let n_occasions = truth[0].len();
    check_split(split, n_occasions)?;
    let n = pred.len() as f64;
    let mut delta = vec![0.0; n_occasions - split];
    for (i, (p_row, t_row)) in pred.iter().zip(truth).enumerate() {
        if p_row.len() != n_occasions || t_row.len() != n_occasions {
            return Err(RsssError::Evaluation(format!("row {i} does not cover {n_occasions} occasions")));
        }
        for (k, t) in (split..n_occasions).enumerate() {
            if p_row[t].len() != t_row[t].len() {
                return Err(RsssError::Evaluation(format!("factor count differs for row {i}")));
            }
            delta[k] += (&p_row[t] - &t_row[t]).norm_squared() / n;
        }
    }
    Ok(ScoreSeries {
        occasions: (split + 1..=n_occasions).collect(),
        delta,
    })
}

/// Filtered quantities used for evaluation and plotting, `[i][t-1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastTrack {
    pub split: usize,
    /// Filtered `Pr[S=2]` up to `split`, one-step-ahead afterwards (filtered
    /// again from a recorded regime event on).
    pub pr_s2: Vec<Vec<f64>>,
    pub pr_s2_filtered: Vec<Vec<f64>>,
    pub pr_s2_predicted: Vec<Vec<f64>>,
    /// Marginal one-step-ahead means and variances of the within factors.
    pub eta_predicted: Vec<Vec<DVector<f64>>>,
    pub var_predicted: Vec<Vec<DVector<f64>>>,
    pub eta_filtered: Vec<Vec<DVector<f64>>>,
    pub var_filtered: Vec<Vec<DVector<f64>>>,
    pub y_predicted: Vec<Vec<DVector<f64>>>,
    pub loglik: f64,
}

/// Runs the filter over every occasion with frozen parameters. With
/// `options.last_update` set, occasions after it are not used for updating.
pub fn forecast_track(
    data: &PanelDataset,
    params: &ParameterSet,
    spec: &ModelSpec,
    split: usize,
    options: &FilterOptions,
) -> Result<ForecastTrack> {
    // an empty forecast window is fine here: fitting on every occasion
    if split > data.n_occasions {
        return Err(RsssError::Evaluation(format!(
            "split {split} exceeds the {} occasions",
            data.n_occasions
        )));
    }
    let run = run_filter(data, params, spec, data.n_occasions, true, options)?;
    let grab = |f: &dyn Fn(&crate::filter::StepOutput) -> f64| -> Vec<Vec<f64>> {
        run.outputs.iter().map(|row| row.iter().map(f).collect()).collect()
    };
    let grab_vec = |f: &dyn Fn(&crate::filter::StepOutput) -> DVector<f64>| -> Vec<Vec<DVector<f64>>> {
        run.outputs.iter().map(|row| row.iter().map(f).collect()).collect()
    };
    let pr_s2_filtered = grab(&|o| o.pr_filtered[1]);
    let pr_s2_predicted = grab(&|o| o.pr_predicted[1]);
    // a recorded regime event is data: from that occasion on the clamped
    // filtered value is reported in the forecast window too
    let pr_s2 = pr_s2_filtered
        .iter()
        .zip(&pr_s2_predicted)
        .zip(&data.regime_event)
        .map(|((f, p), event)| {
            (0..f.len())
                .map(|t| if t < split || event.is_some_and(|d| t + 1 >= d) { f[t] } else { p[t] })
                .collect()
        })
        .collect();
    Ok(ForecastTrack {
        split,
        pr_s2,
        pr_s2_filtered,
        pr_s2_predicted,
        eta_predicted: grab_vec(&|o| o.eta_predicted.clone()),
        var_predicted: grab_vec(&|o| o.var_predicted.clone()),
        eta_filtered: grab_vec(&|o| o.eta_filtered.clone()),
        var_filtered: grab_vec(&|o| o.var_filtered.clone()),
        y_predicted: grab_vec(&|o| o.y_predicted.clone()),
        loglik: run.loglik,
    })
}

/// One row of a recovery table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRow {
    pub name: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTable {
    pub rows: Vec<RecoveryRow>,
    pub used: usize,
    pub failed: usize,
}

/// Bias, sample SD and RMSE of each parameter across replications. Failed
/// replications (`None`) are excluded and counted.
pub fn recovery_stats(names: &[String], estimates: &[Option<Vec<f64>>], truth: &[f64]) -> Result<RecoveryTable> {
    if names.len() != truth.len() {
        return Err(RsssError::Evaluation(format!("{} names for {} true values", names.len(), truth.len())));
    }
    let ok: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
    let failed = estimates.len() - ok.len();
    if ok.len() < 2 {
        return Err(RsssError::Evaluation(format!(
            "recovery needs at least 2 successful replications, got {}",
            ok.len()
        )));
    }
    if let Some(bad) = ok.iter().find(|e| e.len() != truth.len()) {
        return Err(RsssError::Evaluation(format!(
            "estimate vector of length {} for {} parameters",
            bad.len(),
            truth.len()
        )));
    }
    let r = ok.len() as f64;
    let rows = names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let values: Vec<f64> = ok.iter().map(|e| e[k]).collect();
            let mean = values.iter().sum::<f64>() / r;
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            let mse: f64 = values.iter().map(|v| (v - truth[k]).powi(2)).sum::<f64>() / r;
            RecoveryRow {
                name: name.clone(),
                truth: truth[k],
                mean,
                bias: mean - truth[k],
                rmse: mse.sqrt(),
                sd: (ss / (r - 1.0)).sqrt(),
            }
        })
        .collect();
    Ok(RecoveryTable {
        rows,
        used: ok.len(),
        failed,
    })
}
