use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::methods::TimingStats;
use super::{ExperimentConfig, ExperimentId};
use crate::error::{Error, Result};
use crate::training::Evaluation;

/// One `(sweep point, method)` entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub point: String,
    pub inv_r2_db: f64,
    pub method: String,
    /// Per-entry MSE (divided by `m` and `T`).
    pub mse_db: f64,
    /// Per-vector MSE (divided by `T` only).
    pub mse_per_vector_db: f64,
    /// Spread of the per-trajectory dB values.
    pub std_db: f64,
}

impl CurveRow {
    pub fn new(point: &str, inv_r2_db: f64, method: &str, eval: &Evaluation) -> Self {
        let k = eval.per_trajectory_db.len() as f64;
        let mean = eval.per_trajectory_db.iter().sum::<f64>() / k;
        let var = eval.per_trajectory_db.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        Self {
            point: point.into(),
            inv_r2_db,
            method: method.into(),
            mse_db: eval.mse_db,
            mse_per_vector_db: eval.mse_per_vector_db,
            std_db: var.sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRow {
    pub point: String,
    pub method: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_db: f64,
    pub seconds_per_epoch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub point: String,
    pub method: String,
    pub trajectories: usize,
    pub horizon: usize,
    pub stats: TimingStats,
}

/// True states, observations and estimates of one test trajectory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
    pub estimates: Vec<(String, Vec<Vec<f64>>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub id: ExperimentId,
    pub config: ExperimentConfig,
    pub points: Vec<String>,
    pub methods: Vec<String>,
    pub curves: Vec<CurveRow>,
    pub training: Vec<TrainingRow>,
    pub timing: Vec<TimingRow>,
    pub param_counts: BTreeMap<String, usize>,
    pub notes: BTreeMap<String, Json>,
    #[serde(skip)]
    pub track: Option<Track>,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig, methods: &[&str]) -> Self {
        Self {
            id: config.id,
            config: config.clone(),
            points: Vec::new(),
            methods: methods.iter().map(|m| m.to_string()).collect(),
            curves: Vec::new(),
            training: Vec::new(),
            timing: Vec::new(),
            param_counts: BTreeMap::new(),
            notes: BTreeMap::new(),
            track: None,
        }
    }

    pub fn mse_db(&self, point: &str, method: &str) -> Option<f64> {
        self.curves
            .iter()
            .find(|r| r.point == point && r.method == method)
            .map(|r| r.mse_db)
    }

    /// `mse_db(a) - mse_db(b)` at every point, in point order.
    pub fn gaps(&self, a: &str, b: &str) -> Result<Vec<f64>> {
        self.points
            .iter()
            .map(|p| match (self.mse_db(p, a), self.mse_db(p, b)) {
                (Some(x), Some(y)) => Ok(x - y),
                _ => Err(Error::Empty(format!("no `{a}`/`{b}` entry at point {p}"))),
            })
            .collect()
    }

    pub fn median_time(&self, method: &str) -> Option<f64> {
        self.timing.iter().find(|r| r.method == method).map(|r| r.stats.median)
    }

    /// Every point has exactly one row per method, and nothing else.
    pub fn check_complete(&self) -> Result<()> {
        for p in &self.points {
            for m in &self.methods {
                let count = self.curves.iter().filter(|r| &r.point == p && &r.method == m).count();
                if count != 1 {
                    return Err(Error::Empty(format!("{count} rows for point {p}, method {m}")));
                }
            }
        }
        if self.curves.len() != self.points.len() * self.methods.len() {
            return Err(Error::Empty("curve rows outside the configured grid".into()));
        }
        Ok(())
    }

    /// Plain-text summary: MSE table, parameter counts, training and timing.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment {} (seed {})", self.id, self.config.seed);
        let _ = write!(s, "{:<16}", "point");
        for m in &self.methods {
            let _ = write!(s, "{m:>14}");
        }
        s.push('\n');
        for p in &self.points {
            let _ = write!(s, "{p:<16}");
            for m in &self.methods {
                match self.mse_db(p, m) {
                    Some(v) => {
                        let _ = write!(s, "{v:>11.3} dB");
                    }
                    None => {
                        let _ = write!(s, "{:>14}", "-");
                    }
                }
            }
            s.push('\n');
        }
        s.push_str("(per-entry MSE: squared error divided by state dimension and length)\n");
        for (label, count) in &self.param_counts {
            let _ = writeln!(s, "parameters {label}: {count}");
        }
        for r in &self.training {
            let _ = writeln!(
                s,
                "training {} {}: {} epochs, best {} ({:.3} dB val), {:.3} s/epoch",
                r.point, r.method, r.epochs, r.best_epoch, r.best_val_db, r.seconds_per_epoch
            );
        }
        for r in &self.timing {
            let _ = writeln!(
                s,
                "inference {} {}: median {:.4} s over {} runs ({} x T={})",
                r.point,
                r.method,
                r.stats.median,
                r.stats.raw.len(),
                r.trajectories,
                r.horizon
            );
        }
        for (k, v) in &self.notes {
            let _ = writeln!(s, "{k}: {v}");
        }
        s
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("point,inv_r2_db,method,mse_db,mse_per_vector_db,std_db\n");
        for r in &self.curves {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.point, r.inv_r2_db, r.method, r.mse_db, r.mse_per_vector_db, r.std_db
            );
        }
        s
    }

    fn timing_csv(&self) -> String {
        let mut s = String::from("point,method,trajectories,horizon,run,seconds\n");
        for r in &self.timing {
            for (i, t) in r.stats.raw.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    r.point, r.method, r.trajectories, r.horizon, i, t
                );
            }
        }
        s
    }

    fn track_csv(track: &Track) -> String {
        let mut s = String::from("t");
        let m = track.states.first().map_or(0, Vec::len);
        let n = track.observations.first().map_or(0, Vec::len);
        for i in 0..m {
            let _ = write!(s, ",x{i}");
        }
        for i in 0..n {
            let _ = write!(s, ",y{i}");
        }
        for (name, _) in &track.estimates {
            for i in 0..m {
                let _ = write!(s, ",{name}{i}");
            }
        }
        s.push('\n');
        for t in 0..track.states.len() {
            let _ = write!(s, "{t}");
            for v in &track.states[t] {
                let _ = write!(s, ",{v}");
            }
            for i in 0..n {
                match t.checked_sub(1).and_then(|k| track.observations.get(k)) {
                    Some(y) => {
                        let _ = write!(s, ",{}", y[i]);
                    }
                    None => s.push(','),
                }
            }
            for (_, est) in &track.estimates {
                for i in 0..m {
                    match t.checked_sub(1).and_then(|k| est.get(k)) {
                        Some(x) => {
                            let _ = write!(s, ",{}", x[i]);
                        }
                        None => s.push(','),
                    }
                }
            }
            s.push('\n');
        }
        s
    }

    fn gnuplot(&self) -> String {
        let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\n");
        s.push_str("set xlabel '1/r^2 [dB]'\nset ylabel 'MSE [dB]'\nset grid\nplot \\\n");
        let lines: Vec<String> = self
            .methods
            .iter()
            .map(|m| format!("  'curves.csv' using 2:(strcol(3) eq '{m}' ? $4 : NaN) with linespoints title '{m}'"))
            .collect();
        s.push_str(&lines.join(", \\\n"));
        s.push('\n');
        s
    }

    /// Writes `curves.csv`, `timing.csv`, `summary.json`, `report.txt` and, when present,
    /// `track.csv` and `plot.gp` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let summary = serde_json::to_string_pretty(self).expect("report serializes");
        let mut files = vec![
            ("curves.csv", self.curves_csv()),
            ("timing.csv", self.timing_csv()),
            ("summary.json", summary),
            ("report.txt", self.render()),
        ];
        if let Some(track) = &self.track {
            files.push(("track.csv", Self::track_csv(track)));
        }
        if self.config.plot_script {
            files.push(("plot.gp", self.gnuplot()));
        }
        let mut written = Vec::new();
        for (name, text) in files {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }

    pub fn read_summary(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(db: f64) -> Evaluation {
        let mse = 10f64.powf(db / 10.0);
        Evaluation {
            mse,
            mse_db: db,
            per_trajectory: vec![mse, mse],
            per_trajectory_db: vec![db - 1.0, db + 1.0],
            mse_per_vector_db: db + 3.0,
        }
    }

    fn report() -> ExperimentReport {
        let cfg = ExperimentConfig {
            plot_script: true,
            ..ExperimentConfig::preset(ExperimentId::LinearMismatch)
        };
        let mut r = ExperimentReport::new(&cfg, &["ks", "rtsnet"]);
        for (p, db) in [("a", 0.0), ("b", 10.0)] {
            r.points.push(p.into());
            r.curves.push(CurveRow::new(p, db, "ks", &eval(-db)));
            r.curves.push(CurveRow::new(p, db, "rtsnet", &eval(-db + 0.5)));
        }
        r.param_counts.insert("rtsnet".into(), 1234);
        r
    }

    #[test]
    fn lookups_and_gaps() {
        let r = report();
        assert_eq!(r.mse_db("b", "ks"), Some(-10.0));
        assert_eq!(r.gaps("rtsnet", "ks").unwrap(), vec![0.5, 0.5]);
        assert!(r.gaps("rtsnet", "oracle").is_err());
        assert_eq!(r.curves[0].std_db, 1.0);
        r.check_complete().unwrap();
    }

    #[test]
    fn missing_or_duplicate_rows_are_detected() {
        let mut r = report();
        r.curves.pop();
        assert!(r.check_complete().is_err());
        let mut r = report();
        let dup = r.curves[0].clone();
        r.curves.push(dup);
        assert!(r.check_complete().is_err());
    }

    #[test]
    fn curve_file_has_one_row_per_point_and_method() {
        let r = report();
        let csv = r.curves_csv();
        assert_eq!(csv.lines().count(), 1 + 4);
        assert!(r.render().contains("parameters rtsnet: 1234"));
    }

    #[test]
    fn files_are_written_and_summary_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report();
        r.track = Some(Track {
            states: vec![vec![0.0], vec![1.0]],
            observations: vec![vec![1.5]],
            estimates: vec![("ks".into(), vec![vec![0.9]])],
        });
        let files = r.write(dir.path()).unwrap();
        let names: Vec<_> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_str().unwrap().to_string())
            .collect();
        for expect in ["curves.csv", "summary.json", "track.csv", "plot.gp"] {
            assert!(names.iter().any(|n| n == expect), "{expect}");
        }
        let track = fs::read_to_string(dir.path().join("track.csv")).unwrap();
        assert_eq!(track, "t,x0,y0,ks0\n0,0,,\n1,1,1.5,0.9\n");
        let back = ExperimentReport::read_summary(&dir.path().join("summary.json")).unwrap();
        assert_eq!(back.curves, r.curves);
        assert_eq!(back.config, r.config);
    }
}
