use std::fs;
use std::path::Path;

use super::svg::{coverage_svg, scatter_svg};
use super::{ensemble_linfit, pcc, CoverageTable, LinFitSummary, MetricsError};
use crate::flow::PosteriorDraws;
use crate::metrics::bench::TimingTable;
use crate::physics::PARAM_NAMES;

/// Spectra and draws per spectrum in the predicted-versus-target scatter.
pub const SCATTER_SPECTRA: usize = 250;
pub const SCATTER_DRAWS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterPoint {
    pub param: usize,
    pub spectrum: usize,
    pub draw: usize,
    pub target: f64,
    pub predicted: f64,
    pub count_rate: f64,
}

/// Everything an evaluation run reports. Parameters are in unit
/// coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub targets: Vec<[f64; 5]>,
    /// Posterior means.
    pub predictions: Vec<[f64; 5]>,
    pub pcc: Vec<f64>,
    pub linfit: Vec<LinFitSummary>,
    pub scatter: Vec<ScatterPoint>,
    /// `(scenario, reduced PGStat per spectrum)`.
    pub pgstat: Vec<(String, Vec<f64>)>,
    pub coverage: CoverageTable,
    pub timing: Option<TimingTable>,
}

impl EvalReport {
    /// PCC of posterior means and ensemble fits of the first
    /// [`SCATTER_DRAWS`] draws over the first [`SCATTER_SPECTRA`] spectra.
    pub fn from_posteriors(
        targets: &[[f64; 5]],
        draws: &[PosteriorDraws],
        count_rates: &[f64],
    ) -> Result<Self, MetricsError> {
        if targets.len() != draws.len() || count_rates.len() != draws.len() {
            return Err(super::contract(
                "targets, posteriors and count rates differ in length",
            ));
        }
        if let Some(d) = draws.iter().find(|d| d.dim != 5 || d.is_empty()) {
            return Err(super::contract(format!(
                "posterior with {} draws of dimension {}",
                d.len(),
                d.dim
            )));
        }
        let predictions: Vec<[f64; 5]> = draws
            .iter()
            .map(|d| std::array::from_fn(|j| super::mean(&d.coordinate(j))))
            .collect();
        let mut pcc_all = Vec::with_capacity(5);
        for j in 0..5 {
            let t: Vec<f64> = targets.iter().map(|t| t[j]).collect();
            let p: Vec<f64> = predictions.iter().map(|p| p[j]).collect();
            pcc_all.push(pcc(&t, &p)?);
        }
        let n_sc = targets.len().min(SCATTER_SPECTRA);
        let n_draws = draws[..n_sc]
            .iter()
            .map(PosteriorDraws::len)
            .min()
            .unwrap_or(0)
            .min(SCATTER_DRAWS);
        let mut scatter = Vec::with_capacity(5 * n_sc * n_draws);
        let mut linfit = Vec::with_capacity(5);
        for j in 0..5 {
            let t: Vec<f64> = targets[..n_sc].iter().map(|t| t[j]).collect();
            let sets: Vec<Vec<f64>> = (0..n_draws)
                .map(|k| draws[..n_sc].iter().map(|d| d.draw(k)[j]).collect())
                .collect();
            linfit.push(ensemble_linfit(&t, &sets)?);
            for i in 0..n_sc {
                for (k, set) in sets.iter().enumerate() {
                    scatter.push(ScatterPoint {
                        param: j,
                        spectrum: i,
                        draw: k,
                        target: t[i],
                        predicted: set[i],
                        count_rate: count_rates[i],
                    });
                }
            }
        }
        Ok(Self {
            targets: targets.to_vec(),
            predictions,
            pcc: pcc_all,
            linfit,
            scatter,
            ..Self::default()
        })
    }

    pub fn median_pgstat(&self, scenario: &str) -> Option<f64> {
        self.pgstat
            .iter()
            .find(|(s, _)| s == scenario)
            .map(|(_, v)| super::median(v))
    }

    /// Writes the report tables as CSV and the figures as SVG into `outdir`.
    /// Identical reports give byte-identical files.
    pub fn emit(&self, outdir: impl AsRef<Path>) -> Result<Vec<String>, MetricsError> {
        let dir = outdir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut csv_file =
            |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), MetricsError> {
                let mut w = csv::Writer::from_path(dir.join(name))?;
                w.write_record(header)?;
                for r in rows {
                    w.write_record(&r)?;
                }
                w.flush()?;
                written.push(name.to_string());
                Ok(())
            };
        let f = |v: f64| v.to_string();

        csv_file(
            "pcc.csv",
            &["parameter", "pcc"],
            self.pcc
                .iter()
                .enumerate()
                .map(|(j, v)| vec![PARAM_NAMES[j].into(), f(*v)])
                .collect(),
        )?;
        csv_file(
            "linfit.csv",
            &[
                "parameter",
                "slope_mean",
                "slope_std",
                "intercept_mean",
                "intercept_std",
            ],
            self.linfit
                .iter()
                .enumerate()
                .map(|(j, l)| {
                    vec![
                        PARAM_NAMES[j].into(),
                        f(l.slope_mean),
                        f(l.slope_std),
                        f(l.intercept_mean),
                        f(l.intercept_std),
                    ]
                })
                .collect(),
        )?;
        let mut header = vec!["spectrum".to_string()];
        header.extend(PARAM_NAMES.iter().map(|n| format!("target_{n}")));
        header.extend(PARAM_NAMES.iter().map(|n| format!("predicted_{n}")));
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        csv_file(
            "predictions.csv",
            &header_ref,
            self.targets
                .iter()
                .zip(&self.predictions)
                .enumerate()
                .map(|(i, (t, p))| {
                    let mut r = vec![i.to_string()];
                    r.extend(t.iter().chain(p).map(|v| f(*v)));
                    r
                })
                .collect(),
        )?;
        csv_file(
            "scatter.csv",
            &[
                "parameter",
                "spectrum",
                "draw",
                "target",
                "predicted",
                "count_rate",
            ],
            self.scatter
                .iter()
                .map(|s| {
                    vec![
                        PARAM_NAMES[s.param].into(),
                        s.spectrum.to_string(),
                        s.draw.to_string(),
                        f(s.target),
                        f(s.predicted),
                        f(s.count_rate),
                    ]
                })
                .collect(),
        )?;
        csv_file(
            "pgstat.csv",
            &["scenario", "median_reduced_pgstat", "n_spectra"],
            self.pgstat
                .iter()
                .map(|(s, v)| vec![s.clone(), f(super::median(v)), v.len().to_string()])
                .collect(),
        )?;
        csv_file(
            "pgstat_spectra.csv",
            &["scenario", "spectrum", "reduced_pgstat"],
            self.pgstat
                .iter()
                .flat_map(|(s, v)| {
                    v.iter()
                        .enumerate()
                        .map(move |(i, x)| vec![s.clone(), i.to_string(), f(*x)])
                })
                .collect(),
        )?;
        if let Some(t) = &self.timing {
            csv_file(
                "timing.csv",
                &["quantity", "value"],
                t.rows()
                    .into_iter()
                    .map(|(k, v)| vec![k.to_string(), f(v)])
                    .collect(),
            )?;
        }
        fs::write(
            dir.join("scatter.svg"),
            scatter_svg(&self.scatter, &self.linfit),
        )?;
        written.push("scatter.svg".into());
        written.extend(emit_coverage(&self.coverage, dir, "coverage")?);
        Ok(written)
    }
}

/// Writes `<stem>.csv` and `<stem>.svg` for one coverage table.
pub fn emit_coverage(
    table: &CoverageTable,
    outdir: impl AsRef<Path>,
    stem: &str,
) -> Result<Vec<String>, MetricsError> {
    let dir = outdir.as_ref();
    fs::create_dir_all(dir)?;
    let mut header = vec!["level".to_string(), "coverage".to_string()];
    header.extend(PARAM_NAMES.iter().map(|n| format!("inside_{n}")));
    header.push("n_spectra".into());
    let csv_name = format!("{stem}.csv");
    let mut w = csv::Writer::from_path(dir.join(&csv_name))?;
    w.write_record(&header)?;
    for (li, l) in table.levels.iter().enumerate() {
        let mut r = vec![l.to_string(), table.coverage[li].to_string()];
        r.extend(table.inside[li].iter().map(usize::to_string));
        r.push(table.n_spectra.to_string());
        w.write_record(&r)?;
    }
    w.flush()?;
    let svg_name = format!("{stem}.svg");
    fs::write(dir.join(&svg_name), coverage_svg(table))?;
    Ok(vec![csv_name, svg_name])
}
