//! Panel data container.

use nalgebra::DVector;

use crate::error::{Result, RsssError};

/// `N` individuals observed on `T` occasions.
///
/// `y1` is stored row-major as `[i][t][item]`; `observed` has the same layout
/// and marks which entries carry data. Occasions are 1-based in the public
/// API (`t = 1..=T`), matching the files on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    pub ids: Vec<String>,
    pub n_occasions: usize,
    pub n_obs1: usize,
    pub n_obs2: usize,
    y1: Vec<f64>,
    observed: Vec<bool>,
    pub y2: Vec<DVector<f64>>,
    /// Occasion from which the second regime is known to hold.
    pub regime_event: Vec<Option<usize>>,
}

impl PanelDataset {
    /// Complete panel with all `y1` entries observed.
    pub fn new(
        ids: Vec<String>,
        n_occasions: usize,
        n_obs1: usize,
        y1: Vec<f64>,
        y2: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let observed = y1.iter().map(|v| v.is_finite()).collect();
        Self::with_mask(ids, n_occasions, n_obs1, y1, observed, y2)
    }

    pub fn with_mask(
        ids: Vec<String>,
        n_occasions: usize,
        n_obs1: usize,
        y1: Vec<f64>,
        observed: Vec<bool>,
        y2: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let n = ids.len();
        if y1.len() != n * n_occasions * n_obs1 || observed.len() != y1.len() {
            return Err(RsssError::Data(format!(
                "y1 holds {} values, expected {n} x {n_occasions} x {n_obs1}",
                y1.len()
            )));
        }
        if y2.len() != n {
            return Err(RsssError::Data(format!("y2 has {} rows for {n} individuals", y2.len())));
        }
        let n_obs2 = y2.first().map_or(0, |r| r.len());
        for (i, row) in y2.iter().enumerate() {
            if row.len() != n_obs2 || row.iter().any(|v| !v.is_finite()) {
                return Err(RsssError::Data(format!("y2 row of individual {} is incomplete", ids[i])));
            }
        }
        for (k, (&v, &o)) in y1.iter().zip(&observed).enumerate() {
            if o && !v.is_finite() {
                return Err(RsssError::Data(format!("y1 entry {k} is marked observed but is {v}")));
            }
        }
        Ok(Self {
            ids,
            n_occasions,
            n_obs1,
            n_obs2,
            y1,
            observed,
            y2,
            regime_event: vec![None; n],
        })
    }

    pub fn n_individuals(&self) -> usize {
        self.ids.len()
    }

    fn offset(&self, i: usize, t: usize) -> usize {
        debug_assert!(t >= 1 && t <= self.n_occasions);
        (i * self.n_occasions + (t - 1)) * self.n_obs1
    }

    /// Observation vector and mask of individual `i` at occasion `t` (1-based).
    pub fn y1_at(&self, i: usize, t: usize) -> (&[f64], &[bool]) {
        let o = self.offset(i, t);
        (&self.y1[o..o + self.n_obs1], &self.observed[o..o + self.n_obs1])
    }

    pub fn set_missing(&mut self, i: usize, t: usize, item: usize) {
        let o = self.offset(i, t) + item;
        self.observed[o] = false;
        self.y1[o] = f64::NAN;
    }

    pub fn set_regime_event(&mut self, i: usize, occasion: Option<usize>) -> Result<()> {
        if let Some(d) = occasion {
            if d == 0 || d > self.n_occasions {
                return Err(RsssError::Data(format!(
                    "regime event {d} of individual {} outside 1..={}",
                    self.ids[i], self.n_occasions
                )));
            }
        }
        self.regime_event[i] = occasion;
        Ok(())
    }

    /// Keeps only the individuals in `rows`, in that order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let stride = self.n_occasions * self.n_obs1;
        let mut y1 = Vec::with_capacity(rows.len() * stride);
        let mut observed = Vec::with_capacity(rows.len() * stride);
        for &i in rows {
            y1.extend_from_slice(&self.y1[i * stride..(i + 1) * stride]);
            observed.extend_from_slice(&self.observed[i * stride..(i + 1) * stride]);
        }
        Self {
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            n_occasions: self.n_occasions,
            n_obs1: self.n_obs1,
            n_obs2: self.n_obs2,
            y1,
            observed,
            y2: rows.iter().map(|&i| self.y2[i].clone()).collect(),
            regime_event: rows.iter().map(|&i| self.regime_event[i]).collect(),
        }
    }

    /// Per-item mean and variance of `y1` over the first `occasions`,
    /// ignoring missing entries.
    pub fn y1_moments(&self, occasions: usize) -> (Vec<f64>, Vec<f64>) {
        let mut sum = vec![0.0; self.n_obs1];
        let mut sq = vec![0.0; self.n_obs1];
        let mut cnt = vec![0usize; self.n_obs1];
        for i in 0..self.n_individuals() {
            for t in 1..=occasions.min(self.n_occasions) {
                let (y, m) = self.y1_at(i, t);
                for k in 0..self.n_obs1 {
                    if m[k] {
                        sum[k] += y[k];
                        sq[k] += y[k] * y[k];
                        cnt[k] += 1;
                    }
                }
            }
        }
        moments(&sum, &sq, &cnt)
    }

    pub fn y2_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let mut sum = vec![0.0; self.n_obs2];
        let mut sq = vec![0.0; self.n_obs2];
        for row in &self.y2 {
            for k in 0..self.n_obs2 {
                sum[k] += row[k];
                sq[k] += row[k] * row[k];
            }
        }
        moments(&sum, &sq, &vec![self.n_individuals(); self.n_obs2])
    }
}

fn moments(sum: &[f64], sq: &[f64], cnt: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut mean = Vec::with_capacity(sum.len());
    let mut var = Vec::with_capacity(sum.len());
    for k in 0..sum.len() {
        if cnt[k] == 0 {
            mean.push(0.0);
            var.push(1.0);
            continue;
        }
        let n = cnt[k] as f64;
        let m = sum[k] / n;
        mean.push(m);
        var.push((sq[k] / n - m * m).max(0.0));
    }
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PanelDataset {
        PanelDataset::new(
            vec!["a".into(), "b".into()],
            2,
            2,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            vec![DVector::from_vec(vec![0.5]), DVector::from_vec(vec![-0.5])],
        )
        .unwrap()
    }

    #[test]
    fn indexing_and_missing() {
        let mut d = tiny();
        assert_eq!(d.y1_at(1, 2).0, &[7.0, 8.0]);
        d.set_missing(1, 2, 0);
        let (y, m) = d.y1_at(1, 2);
        assert!(y[0].is_nan());
        assert_eq!(m, &[false, true]);
    }

    #[test]
    fn regime_event_bounds() {
        let mut d = tiny();
        assert!(d.set_regime_event(0, Some(3)).is_err());
        assert!(d.set_regime_event(0, Some(0)).is_err());
        d.set_regime_event(0, Some(2)).unwrap();
        assert_eq!(d.regime_event[0], Some(2));
    }

    #[test]
    fn incomplete_y2_rejected() {
        let r = PanelDataset::new(
            vec!["a".into()],
            1,
            1,
            vec![0.0],
            vec![DVector::from_vec(vec![f64::NAN])],
        );
        assert!(r.is_err());
    }

    #[test]
    fn subset_keeps_rows() {
        let d = tiny().subset(&[1]);
        assert_eq!(d.ids, vec!["b".to_string()]);
        assert_eq!(d.y1_at(0, 1).0, &[5.0, 6.0]);
    }
}
