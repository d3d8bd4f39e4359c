//! CSV readers and writers for panels, ground truth and filter output.
//!
//! Column layouts are documented in `docs/csv_schema.md`.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::data::PanelDataset;
use crate::error::{Result, RsssError};
use crate::evaluate::ForecastTrack;
use crate::simulate::SimOutput;

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path)
        .map_err(|e| RsssError::Data(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn parse_num(path: &Path, line: u64, column: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| {
        RsssError::Data(format!(
            "{}:{line}: column `{column}` holds `{cell}`, expected a number",
            path.display()
        ))
    })
}

fn header_check(path: &Path, headers: &csv::StringRecord, leading: &[&str]) -> Result<usize> {
    for (k, name) in leading.iter().enumerate() {
        if headers.get(k) != Some(*name) {
            return Err(RsssError::Data(format!(
                "{}: column {} must be `{name}`",
                path.display(),
                k + 1
            )));
        }
    }
    Ok(headers.len() - leading.len())
}

/// Reads a long `y1` file and a wide `y2` file into a panel. Individuals
/// keep the order of their first appearance in `y1`.
pub fn read_panel(y1_path: &Path, y2_path: &Path) -> Result<PanelDataset> {
    let mut rdr = reader(y1_path)?;
    let headers = rdr.headers()?.clone();
    let n_obs1 = header_check(y1_path, &headers, &["id", "t"])?;
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<HashMap<usize, Vec<f64>>> = Vec::new();
    let mut max_t = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default().to_string();
        let t: usize = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .filter(|&t| t >= 1)
            .ok_or_else(|| RsssError::Data(format!("{}:{line}: occasion must be a positive integer", y1_path.display())))?;
        let mut row = Vec::with_capacity(n_obs1);
        for k in 0..n_obs1 {
            let cell = rec.get(k + 2).unwrap_or("");
            row.push(if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
                f64::NAN
            } else {
                parse_num(y1_path, line, &headers[k + 2], cell)?
            });
        }
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            ids.push(id.clone());
            cells.push(HashMap::new());
            ids.len() - 1
        });
        if cells[slot].insert(t, row).is_some() {
            return Err(RsssError::Data(format!(
                "{}:{line}: duplicate row for id {id}, t {t}",
                y1_path.display()
            )));
        }
        max_t = max_t.max(t);
    }
    let mut y1 = Vec::with_capacity(ids.len() * max_t * n_obs1);
    for (slot, id) in ids.iter().enumerate() {
        for t in 1..=max_t {
            let row = cells[slot].get(&t).ok_or_else(|| {
                RsssError::Data(format!("{}: id {id} has no row for t {t}", y1_path.display()))
            })?;
            y1.extend_from_slice(row);
        }
    }

    let mut rdr = reader(y2_path)?;
    let headers = rdr.headers()?.clone();
    let n_obs2 = header_check(y2_path, &headers, &["id"])?;
    let mut y2: Vec<Option<DVector<f64>>> = vec![None; ids.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default();
        let slot = *index
            .get(id)
            .ok_or_else(|| RsssError::Data(format!("{}:{line}: id {id} does not occur in y1", y2_path.display())))?;
        let mut row = Vec::with_capacity(n_obs2);
        for k in 0..n_obs2 {
            row.push(parse_num(y2_path, line, &headers[k + 1], rec.get(k + 1).unwrap_or(""))?);
        }
        y2[slot] = Some(DVector::from_vec(row));
    }
    let y2 = y2
        .into_iter()
        .zip(&ids)
        .map(|(row, id)| row.ok_or_else(|| RsssError::Data(format!("{}: no row for id {id}", y2_path.display()))))
        .collect::<Result<Vec<_>>>()?;
    PanelDataset::new(ids, max_t, n_obs1, y1, y2)
}

/// Reads `id,occasion` pairs marking the known onset of the second regime.
pub fn read_regime_events(path: &Path, data: &mut PanelDataset) -> Result<()> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    header_check(path, &headers, &["id", "occasion"])?;
    let index: HashMap<&str, usize> = data.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default();
        let i = *index
            .get(id)
            .ok_or_else(|| RsssError::Data(format!("{}:{line}: unknown id {id}", path.display())))?;
        let cell = rec.get(1).unwrap_or("");
        let d = if cell.is_empty() {
            None
        } else {
            Some(cell.parse::<usize>().map_err(|_| {
                RsssError::Data(format!("{}:{line}: occasion `{cell}` is not an integer", path.display()))
            })?)
        };
        events.push((i, d));
    }
    for (i, d) in events {
        data.set_regime_event(i, d)?;
    }
    Ok(())
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn items(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |k| format!("{prefix}_{k}"))
}

/// Writes `y1.csv` and `y2.csv` into `dir`.
pub fn write_panel(data: &PanelDataset, dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join("y1.csv"))?;
    let mut header = vec!["id".to_string(), "t".to_string()];
    header.extend(items("item", data.n_obs1));
    w.write_record(&header)?;
    for (i, id) in data.ids.iter().enumerate() {
        for t in 1..=data.n_occasions {
            let (y, m) = data.y1_at(i, t);
            let mut rec = vec![id.clone(), t.to_string()];
            rec.extend(y.iter().zip(m).map(|(v, o)| if *o { fmt(*v) } else { String::new() }));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("y2.csv"))?;
    let mut header = vec!["id".to_string()];
    header.extend(items("item", data.n_obs2));
    w.write_record(&header)?;
    for (id, row) in data.ids.iter().zip(&data.y2) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| fmt(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Latent ground truth of a simulated panel.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub ids: Vec<String>,
    /// Labels `1` / `2`, `[i][t-1]`.
    pub regimes: Vec<Vec<u8>>,
    pub eta1: Vec<Vec<DVector<f64>>>,
}

impl From<&SimOutput> for Truth {
    fn from(out: &SimOutput) -> Self {
        Self {
            ids: out.data.ids.clone(),
            regimes: out.true_regimes.clone(),
            eta1: out.true_eta1.clone(),
        }
    }
}

/// Writes the `truth.csv` sidecar: `id,t,regime,eta_1..eta_U1`.
pub fn write_truth(truth: &Truth, path: &Path) -> Result<()> {
    let u1 = truth.eta1.first().and_then(|r| r.first()).map_or(0, |e| e.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "t".to_string(), "regime".to_string()];
    header.extend(items("eta", u1));
    w.write_record(&header)?;
    for (i, id) in truth.ids.iter().enumerate() {
        for (t, (s, eta)) in truth.regimes[i].iter().zip(&truth.eta1[i]).enumerate() {
            let mut rec = vec![id.clone(), (t + 1).to_string(), s.to_string()];
            rec.extend(eta.iter().map(|v| fmt(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Truth> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let u1 = header_check(path, &headers, &["id", "t", "regime"])?;
    let mut ids: Vec<String> = Vec::new();
    let mut regimes: Vec<Vec<u8>> = Vec::new();
    let mut eta1: Vec<Vec<DVector<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default();
        if ids.last().map(String::as_str) != Some(id) {
            ids.push(id.to_string());
            regimes.push(Vec::new());
            eta1.push(Vec::new());
        }
        let t: usize = rec.get(1).and_then(|v| v.parse().ok()).unwrap_or(0);
        if t != regimes.last().map_or(0, |r| r.len()) + 1 {
            return Err(RsssError::Data(format!(
                "{}:{line}: rows of id {id} must be contiguous with t = 1, 2, ...",
                path.display()
            )));
        }
        let s: u8 = match rec.get(2) {
            Some("1") => 1,
            Some("2") => 2,
            other => {
                return Err(RsssError::Data(format!(
                    "{}:{line}: regime must be 1 or 2, got {:?}",
                    path.display(),
                    other
                )))
            }
        };
        let mut eta = Vec::with_capacity(u1);
        for k in 0..u1 {
            eta.push(parse_num(path, line, &headers[k + 3], rec.get(k + 3).unwrap_or(""))?);
        }
        regimes.last_mut().unwrap().push(s);
        eta1.last_mut().unwrap().push(DVector::from_vec(eta));
    }
    let t = regimes.first().map_or(0, |r| r.len());
    if let Some(k) = regimes.iter().position(|r| r.len() != t) {
        return Err(RsssError::Data(format!("{}: id {} has a different number of occasions", path.display(), ids[k])));
    }
    Ok(Truth { ids, regimes, eta1 })
}

/// Which occasions of a [`ForecastTrack`] to write.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    Observed,
    Forecast,
}

/// Per-(i,t) filter output: regime probability, latent means with their
/// standard deviations, and one-step-ahead item predictions.
///
/// Observed-window rows carry filtered quantities, forecast-window rows the
/// one-step-ahead ones.
pub fn write_track(track: &ForecastTrack, ids: &[String], window: Window, path: &Path) -> Result<()> {
    let u1 = track.eta_predicted.first().and_then(|r| r.first()).map_or(0, |e| e.len());
    let o1 = track.y_predicted.first().and_then(|r| r.first()).map_or(0, |e| e.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "t".to_string(), "pr_s2".to_string()];
    header.extend(items("eta", u1));
    header.extend(items("eta_sd", u1));
    header.extend(items("yhat", o1));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let n_t = track.pr_s2[i].len();
        let range = match window {
            Window::Observed => 0..track.split,
            Window::Forecast => track.split..n_t,
        };
        for t in range {
            let (eta, var) = match window {
                Window::Observed => (&track.eta_filtered[i][t], &track.var_filtered[i][t]),
                Window::Forecast => (&track.eta_predicted[i][t], &track.var_predicted[i][t]),
            };
            let mut rec = vec![id.clone(), (t + 1).to_string(), fmt(track.pr_s2[i][t])];
            rec.extend(eta.iter().map(|v| fmt(*v)));
            rec.extend(var.iter().map(|v| fmt(v.max(0.0).sqrt())));
            rec.extend(track.y_predicted[i][t].iter().map(|v| fmt(*v)));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rows of a track file: `(id, t, pr_s2, eta)`.
pub struct TrackRows {
    pub ids: Vec<String>,
    pub occasions: Vec<Vec<usize>>,
    pub pr_s2: Vec<Vec<f64>>,
    pub eta: Vec<Vec<DVector<f64>>>,
}

pub fn read_track(path: &Path) -> Result<TrackRows> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    header_check(path, &headers, &["id", "t", "pr_s2"])?;
    let eta_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("eta_") && !h.starts_with("eta_sd"))
        .map(|(k, _)| k)
        .collect();
    let mut out = TrackRows {
        ids: Vec::new(),
        occasions: Vec::new(),
        pr_s2: Vec::new(),
        eta: Vec::new(),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec.get(0).unwrap_or_default();
        if out.ids.last().map(String::as_str) != Some(id) {
            out.ids.push(id.to_string());
            out.occasions.push(Vec::new());
            out.pr_s2.push(Vec::new());
            out.eta.push(Vec::new());
        }
        let t: usize = rec
            .get(1)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| RsssError::Data(format!("{}:{line}: bad occasion", path.display())))?;
        let p = parse_num(path, line, "pr_s2", rec.get(2).unwrap_or(""))?;
        let eta = eta_cols
            .iter()
            .map(|&k| parse_num(path, line, &headers[k], rec.get(k).unwrap_or("")))
            .collect::<Result<Vec<_>>>()?;
        out.occasions.last_mut().unwrap().push(t);
        out.pr_s2.last_mut().unwrap().push(p);
        out.eta.last_mut().unwrap().push(DVector::from_vec(eta));
    }
    Ok(out)
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}
