//! Batch interface behind the `smallarea` binary: CSV ingestion with
//! line-level diagnostics, run configuration, and report assembly in CSV
//! or JSON. Reports are deterministic for a fixed (dataset, config, seed)
//! and round-trip: a report emitted as CSV re-parses to identical values
//! (numbers are printed in shortest-round-trip form, always with a `.`
//! decimal point).

use crate::error::{Error, Result};
use crate::fay_herriot::{AreaDataset, FayHerriotFit, FhMethod};
use crate::hb::{hb_estimate, posterior_a};
use crate::intervals::{smith_interval, IntervalMode};
use crate::uncertainty::{morris_measure, mse_naive, mse_second_order, MseDecomposition};
use crate::unit_level::{
    anova_components, unit_blup, unit_hb, unit_mse, HbPrior, UnitArea, UnitDataset,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;

pub const SCHEMA_VERSION: u32 = 1;

/// Which uncertainty measures a report should carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Measure {
    /// Second-order-unbiased MSE estimator (plus its naive counterpart).
    Pr,
    /// Morris' approximation to the posterior moments.
    Morris,
    /// Hierarchical Bayes posterior variance by quadrature.
    Hb,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Pr => "pr",
            Measure::Morris => "morris",
            Measure::Hb => "hb",
        }
    }

    pub fn parse(s: &str) -> Result<Measure> {
        match s {
            "pr" => Ok(Measure::Pr),
            "morris" => Ok(Measure::Morris),
            "hb" => Ok(Measure::Hb),
            other => Err(Error::Validation(format!("unknown measure '{other}'"))),
        }
    }
}

/// Model family selector for a batch run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Area,
    AreaGeneralV,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Batch-run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelKind,
    pub method: FhMethod,
    pub measures: Vec<Measure>,
    pub alpha: f64,
    pub interval_mode: Option<IntervalMode>,
    pub quadrature_tol: f64,
    pub seed: u64,
    pub output_format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Area,
            method: FhMethod::FhMoment,
            measures: vec![Measure::Pr],
            alpha: 0.05,
            interval_mode: None,
            quadrature_tol: crate::hb::DEFAULT_TOL,
            seed: 0,
            output_format: OutputFormat::Csv,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!(
                "alpha must be in (0,1), got {}",
                self.alpha
            )));
        }
        if !(self.quadrature_tol > 0.0) {
            return Err(Error::Validation(
                "quadrature tolerance must be positive".into(),
            ));
        }
        if self.measures.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate measure requested".into()));
        }
        if let Some(mode) = self.interval_mode {
            match (self.model, mode) {
                (ModelKind::Area, IntervalMode::Smith | IntervalMode::Naive) => {}
                (ModelKind::Area, _) => {
                    return Err(Error::Validation(format!(
                        "interval mode '{}' needs the balanced-design simulator; batch area fits support 'smith' or 'naive'",
                        mode.name()
                    )));
                }
                (_, m) => {
                    return Err(Error::Validation(format!(
                        "interval mode '{}' is not available for this model",
                        m.name()
                    )));
                }
            }
        }
        if self.model == ModelKind::Unit && self.measures.contains(&Measure::Morris) {
            return Err(Error::Validation(
                "the Morris measure applies to area-level fits only".into(),
            ));
        }
        Ok(())
    }
}

/// Column mapping for area-level CSV ingestion. The header must contain the
/// named id/response/variance columns; every remaining column is treated as
/// a covariate unless an explicit list is given.
#[derive(Debug, Clone)]
pub struct ColumnMap {
    pub id: String,
    pub y: String,
    pub v: String,
    pub covariates: Option<Vec<String>>,
    /// Prepend a constant 1 column (disabled by `--no-intercept`).
    pub intercept: bool,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "area_id".into(),
            y: "y".into(),
            v: "V".into(),
            covariates: None,
            intercept: true,
        }
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    line.split(',').map(|f| f.trim().to_string()).collect()
}

fn parse_f64(field: &str, line_no: usize, col: &str) -> Result<f64> {
    field.parse::<f64>().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("column '{col}': cannot parse '{field}' as a number"),
    })
}

/// Read an area-level dataset from CSV.
pub fn ingest_area_csv(reader: impl BufRead, map: &ColumnMap) -> Result<AreaDataset> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, Ok(l))) if l.trim().is_empty() => continue,
            Some((n, Ok(l))) => break (n + 1, split_csv_line(&l)),
            Some((n, Err(e))) => {
                return Err(Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "empty input".into(),
                })
            }
        }
    };
    let (header_line, cols) = header;
    let find = |name: &str| -> Result<usize> {
        cols.iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Parse {
                line: header_line,
                message: format!("header is missing column '{name}'"),
            })
    };
    let id_ix = find(&map.id)?;
    let y_ix = find(&map.y)?;
    let v_ix = find(&map.v)?;
    let cov_ix: Vec<(usize, String)> = match &map.covariates {
        Some(names) => names
            .iter()
            .map(|n| find(n).map(|ix| (ix, n.clone())))
            .collect::<Result<_>>()?,
        None => cols
            .iter()
            .enumerate()
            .filter(|(ix, _)| *ix != id_ix && *ix != y_ix && *ix != v_ix)
            .map(|(ix, n)| (ix, n.clone()))
            .collect(),
    };

    let mut ids = Vec::new();
    let mut y = Vec::new();
    let mut x_rows = Vec::new();
    let mut v = Vec::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(&line);
        if fields.len() != cols.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", cols.len(), fields.len()),
            });
        }
        ids.push(fields[id_ix].clone());
        y.push(parse_f64(&fields[y_ix], line_no, &map.y)?);
        let vi = parse_f64(&fields[v_ix], line_no, &map.v)?;
        if !(vi > 0.0) {
            return Err(Error::Validation(format!(
                "line {line_no}: sampling variance column '{}' must be positive, got {vi}",
                map.v
            )));
        }
        v.push(vi);
        let mut row = if map.intercept { vec![1.0] } else { Vec::new() };
        for (ix, name) in &cov_ix {
            row.push(parse_f64(&fields[*ix], line_no, name)?);
        }
        x_rows.push(row);
    }
    AreaDataset::new(ids, y, x_rows, v)
}

/// Read a unit-level dataset: one CSV of unit records
/// (area_id, y, x1..xp) and one of area frames (area_id, N, Xbar_1..Xbar_p).
pub fn ingest_unit_csv(
    units: impl BufRead,
    areas: impl BufRead,
    intercept: bool,
) -> Result<UnitDataset> {
    // unit records, grouped by area in order of first appearance
    let mut lines = units.lines().enumerate();
    let (hline, header) = match lines.next() {
        Some((n, Ok(l))) => (n + 1, split_csv_line(&l)),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "empty unit file".into(),
            })
        }
    };
    if header.len() < 2 || header[0] != "area_id" || header[1] != "y" {
        return Err(Error::Parse {
            line: hline,
            message: "unit file header must start with area_id,y".into(),
        });
    }
    let p_cov = header.len() - 2;
    let mut order: Vec<String> = Vec::new();
    let mut units_by_area: BTreeMap<String, (Vec<f64>, Vec<Vec<f64>>)> = BTreeMap::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(&line);
        if fields.len() != header.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
        }
        let id = fields[0].clone();
        let yv = parse_f64(&fields[1], line_no, "y")?;
        let mut row = if intercept { vec![1.0] } else { Vec::new() };
        for k in 0..p_cov {
            row.push(parse_f64(&fields[2 + k], line_no, &header[2 + k])?);
        }
        if !units_by_area.contains_key(&id) {
            order.push(id.clone());
        }
        let entry = units_by_area.entry(id).or_default();
        entry.0.push(yv);
        entry.1.push(row);
    }

    // area frames
    let mut lines = areas.lines().enumerate();
    let (hline, aheader) = match lines.next() {
        Some((n, Ok(l))) => (n + 1, split_csv_line(&l)),
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "empty area file".into(),
            })
        }
    };
    if aheader.len() != p_cov + 2 || aheader[0] != "area_id" || aheader[1] != "N" {
        return Err(Error::Parse {
            line: hline,
            message: format!("area file header must be area_id,N,Xbar_1..Xbar_{p_cov}"),
        });
    }
    let mut frames: BTreeMap<String, (u64, Vec<f64>)> = BTreeMap::new();
    for (n, line) in lines {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields = split_csv_line(&line);
        if fields.len() != aheader.len() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {} fields, found {}", aheader.len(), fields.len()),
            });
        }
        let n_pop = fields[1].parse::<u64>().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("column 'N': cannot parse '{}' as a count", fields[1]),
        })?;
        let mut xbar = if intercept { vec![1.0] } else { Vec::new() };
        for k in 0..p_cov {
            xbar.push(parse_f64(&fields[2 + k], line_no, &aheader[2 + k])?);
        }
        frames.insert(fields[0].clone(), (n_pop, xbar));
    }

    let mut area_list = Vec::with_capacity(order.len());
    for id in order {
        let (y, x_rows) = units_by_area.remove(&id).expect("grouped above");
        let (n_pop, x_pop_mean) = frames.remove(&id).ok_or_else(|| {
            Error::Validation(format!(
                "area '{id}' has unit records but no area frame row"
            ))
        })?;
        area_list.push(UnitArea {
            id,
            y,
            x_rows,
            n_pop,
            x_pop_mean,
        });
    }
    if let Some(extra) = frames.keys().next() {
        return Err(Error::Validation(format!(
            "area frame row '{extra}' has no unit records"
        )));
    }
    UnitDataset::new(area_list)
}

/// One area row of a report. Measure columns follow the tabulated
/// convention: the `pr` g1 column is the debiased g1+g3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub direct: f64,
    pub regression_fit: f64,
    pub eblup: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_morris: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_hb: Option<f64>,
    /// per-measure (g1, g2, g3, total), keyed by measure name
    pub measures: BTreeMap<String, [f64; 4]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_hi: Option<f64>,
}

/// Full report: per-area rows plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    pub model: String,
    pub method: String,
    pub a_hat: Option<f64>,
    pub sigma2_e: Option<f64>,
    pub sigma2_v: Option<f64>,
    pub seed: u64,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// CSV form: stable column order, full-precision values plus a rounded
    /// display column for the point estimate.
    pub fn to_csv(&self) -> String {
        let mut measure_names: Vec<String> = Vec::new();
        if let Some(first) = self.rows.first() {
            measure_names = first.measures.keys().cloned().collect();
        }
        let mut out = String::new();
        out.push_str("# schema_version=");
        out.push_str(&self.schema_version.to_string());
        out.push_str(&format!(
            " model={} method={} seed={}",
            self.model, self.method, self.seed
        ));
        if let Some(a) = self.a_hat {
            out.push_str(&format!(" a_hat={a}"));
        }
        if let (Some(e), Some(v)) = (self.sigma2_e, self.sigma2_v) {
            out.push_str(&format!(" sigma2_e={e} sigma2_v={v}"));
        }
        out.push('\n');
        out.push_str("area_id,direct,regression_fit,estimate,estimate_display");
        for name in &measure_names {
            out.push_str(&format!(",{name}_g1,{name}_g2,{name}_g3,{name}_total"));
        }
        out.push_str(",theta_morris,theta_hb,interval_lo,interval_hi\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.1}",
                row.id, row.direct, row.regression_fit, row.eblup, row.eblup
            ));
            for name in &measure_names {
                let g = row.measures.get(name).expect("uniform measure columns");
                out.push_str(&format!(",{},{},{},{}", g[0], g[1], g[2], g[3]));
            }
            let opt = |v: Option<f64>| v.map(|t| t.to_string()).unwrap_or_default();
            out.push_str(&format!(
                ",{},{},{},{}\n",
                opt(row.theta_morris),
                opt(row.theta_hb),
                opt(row.interval_lo),
                opt(row.interval_hi)
            ));
        }
        out
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }
}

fn decomposition_columns(d: &MseDecomposition, i: usize) -> [f64; 4] {
    [d.g1[i], d.g2[i], d.g3[i], d.total[i]]
}

/// Fit the area-level model and assemble the report with every requested
/// measure side by side.
pub fn run_fit(config: &RunConfig, data: &AreaDataset) -> Result<Report> {
    config.validate()?;
    let fit = FayHerriotFit::fit(data, config.method)?;
    let reg = fit.regression_fit(data);

    let mut morris = None;
    let mut hb = None;
    let mut pr = None;
    for measure in &config.measures {
        match measure {
            Measure::Pr => pr = Some(mse_second_order(data, &fit)?),
            Measure::Morris => morris = Some(morris_measure(data, fit.a_hat, &fit.beta_hat)?),
            Measure::Hb => {
                let post = posterior_a(data, config.quadrature_tol)?;
                hb = Some(hb_estimate(data, &post)?);
            }
        }
    }

    let mut rows = Vec::with_capacity(data.m());
    for i in 0..data.m() {
        let mut measures = BTreeMap::new();
        if let Some(d) = &pr {
            measures.insert("pr".to_string(), decomposition_columns(d, i));
        }
        if let Some(mm) = &morris {
            measures.insert(
                "morris".to_string(),
                [mm.g1[i], mm.g2[i], mm.g3[i], mm.s2[i]],
            );
        }
        if let Some(h) = &hb {
            measures.insert("hb".to_string(), [h.g1[i], h.g2[i], h.g3[i], h.variance[i]]);
        }
        let (mut lo, mut hi) = (None, None);
        if let Some(mode) = config.interval_mode {
            match mode {
                IntervalMode::Smith => {
                    let (iv, _) = smith_interval(data, &fit, i, config.alpha)?;
                    lo = Some(iv.lo);
                    hi = Some(iv.hi);
                }
                IntervalMode::Naive => {
                    let naive = mse_naive(data, &fit)?;
                    let z = crate::numeric::normal::norm_quantile(1.0 - config.alpha / 2.0)?;
                    let sd = naive.total[i].max(0.0).sqrt();
                    lo = Some(fit.theta_hat[i] - z * sd);
                    hi = Some(fit.theta_hat[i] + z * sd);
                }
                _ => unreachable!("validated in RunConfig::validate"),
            }
        }
        rows.push(ReportRow {
            id: data.ids()[i].clone(),
            direct: data.y()[i],
            regression_fit: reg[i],
            eblup: fit.theta_hat[i],
            theta_morris: morris.as_ref().map(|m| m.theta_m[i]),
            theta_hb: hb.as_ref().map(|h| h.theta[i]),
            measures,
            interval_lo: lo,
            interval_hi: hi,
        });
    }
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model: "area".into(),
        method: config.method.name().to_string(),
        a_hat: Some(fit.a_hat),
        sigma2_e: None,
        sigma2_v: None,
        seed: config.seed,
        rows,
    })
}

/// Fit the unit-level model (ANOVA components) and report the EBLUP of the
/// finite-population means with its second-order MSE; the HB measure adds
/// the posterior mean and variance columns.
pub fn run_unit_fit(config: &RunConfig, data: &UnitDataset, prior: &HbPrior) -> Result<Report> {
    config.validate()?;
    let psi = anova_components(data)?;
    let fit = unit_blup(data, &psi)?;
    let mut rows = Vec::with_capacity(data.m());
    let mse = if config.measures.contains(&Measure::Pr) {
        Some(unit_mse(data, &psi)?)
    } else {
        None
    };
    let hb = if config.measures.contains(&Measure::Hb) {
        Some(unit_hb(data, prior, config.quadrature_tol)?)
    } else {
        None
    };
    for i in 0..data.m() {
        let mut measures = BTreeMap::new();
        if let Some(d) = &mse {
            measures.insert("pr".to_string(), decomposition_columns(d, i));
        }
        if let Some(h) = &hb {
            measures.insert(
                "hb".to_string(),
                [f64::NAN, f64::NAN, f64::NAN, h.variance[i]],
            );
        }
        rows.push(ReportRow {
            id: data.areas()[i].id.clone(),
            direct: data.ybar_s()[i],
            regression_fit: crate::numeric::linalg::dot(&data.areas()[i].x_pop_mean, &fit.beta),
            eblup: fit.gamma[i],
            theta_morris: None,
            theta_hb: hb.as_ref().map(|h| h.gamma[i]),
            measures,
            interval_lo: None,
            interval_hi: None,
        });
    }
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        model: "unit".into(),
        method: "anova".into(),
        a_hat: None,
        sigma2_e: Some(psi.sigma2_e),
        sigma2_v: Some(psi.sigma2_v),
        seed: config.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    const GOOD: &str =
        "area_id,y,x1,V\na,1.0,2.0,1.0\nb,2.0,3.0,1.5\nc,3.5,4.0,2.0\nd,3.0,5.0,1.0\n";

    #[test]
    fn ingest_round_trip_values() {
        let data = ingest_area_csv(Cursor::new(GOOD), &ColumnMap::default()).unwrap();
        assert_eq!(data.m(), 4);
        assert_eq!(data.p(), 2); // intercept + x1
        assert_eq!(data.y()[2], 3.5);
        assert_eq!(data.x_row(1), &[1.0, 3.0]);
        assert_eq!(data.v()[3], 1.0);
    }

    #[test]
    fn ingest_no_intercept() {
        let map = ColumnMap {
            intercept: false,
            ..ColumnMap::default()
        };
        let data = ingest_area_csv(Cursor::new(GOOD), &map).unwrap();
        assert_eq!(data.p(), 1);
    }

    #[test]
    fn ingest_rejects_bad_variance_with_line() {
        let bad = "area_id,y,x1,V\na,1.0,2.0,1.0\nb,2.0,3.0,0\nc,3.0,4.0,1.0\n";
        match ingest_area_csv(Cursor::new(bad), &ColumnMap::default()) {
            Err(Error::Validation(msg)) => assert!(msg.contains("line 3"), "{msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_reports_parse_line() {
        let bad = "area_id,y,x1,V\na,1.0,2.0,1.0\nb,zzz,3.0,1.0\n";
        match ingest_area_csv(Cursor::new(bad), &ColumnMap::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_detects_duplicate_covariate() {
        let bad = "area_id,y,x1,x2,V\na,1,2,2,1\nb,2,3,3,1\nc,3,4,4,1\nd,4,5,5,1\n";
        match ingest_area_csv(Cursor::new(bad), &ColumnMap::default()) {
            Err(Error::SingularDesign(_)) => {}
            other => panic!("expected rank error, got {other:?}"),
        }
    }

    #[test]
    fn report_deterministic_and_round_trips() {
        let data = ingest_area_csv(Cursor::new(GOOD), &ColumnMap::default()).unwrap();
        let config = RunConfig {
            measures: vec![Measure::Pr],
            ..RunConfig::default()
        };
        let r1 = run_fit(&config, &data).unwrap();
        let r2 = run_fit(&config, &data).unwrap();
        assert_eq!(r1.to_csv(), r2.to_csv());
        assert_eq!(r1.to_json(), r2.to_json());

        // CSV numbers reparse to identical values
        let csv = r1.to_csv();
        let mut lines = csv.lines().skip(1); // metadata comment
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let est_col = header.iter().position(|c| *c == "estimate").unwrap();
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            let est: f64 = fields[est_col].parse().unwrap();
            assert_eq!(est.to_bits(), r1.rows[i].eblup.to_bits());
        }
    }

    #[test]
    fn json_schema_versioned() {
        let data = ingest_area_csv(Cursor::new(GOOD), &ColumnMap::default()).unwrap();
        let report = run_fit(&RunConfig::default(), &data).unwrap();
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["schema_version"], 1);
        assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn empty_measures_gives_point_estimates_only() {
        let data = ingest_area_csv(Cursor::new(GOOD), &ColumnMap::default()).unwrap();
        let config = RunConfig {
            measures: vec![],
            ..RunConfig::default()
        };
        let report = run_fit(&config, &data).unwrap();
        assert!(report.rows[0].measures.is_empty());
        assert!(report.rows[0].theta_hb.is_none());
    }

    #[test]
    fn unit_csv_ingestion() {
        let units = "\
area_id,y,x1
a,1.0,0.5
a,1.2,0.7
b,2.0,1.0
b,2.2,1.4
c,0.5,0.1
c,0.7,0.3
c,0.4,0.2
";
        let areas = "\
area_id,N,Xbar_1
a,10,0.6
b,8,1.1
c,12,0.2
";
        let data = ingest_unit_csv(Cursor::new(units), Cursor::new(areas), true).unwrap();
        assert_eq!(data.m(), 3);
        assert_eq!(data.p(), 2);
        assert_eq!(data.n_i(2), 3);
        assert_eq!(data.areas()[0].n_pop, 10);
        // missing frame row
        let res = ingest_unit_csv(
            Cursor::new(units),
            Cursor::new("area_id,N,Xbar_1\na,10,0.6\nb,8,1.1\n"),
            true,
        );
        assert!(res.is_err());
    }

    #[test]
    fn config_validation_rules() {
        let c = RunConfig {
            alpha: 1.5,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            model: ModelKind::Unit,
            measures: vec![Measure::Morris],
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            interval_mode: Some(IntervalMode::Calibrated),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            interval_mode: Some(IntervalMode::Smith),
            ..RunConfig::default()
        };
        assert!(c.validate().is_ok());
    }
}
