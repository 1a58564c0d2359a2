//! Problem-file ingestion (TOML) and the chart-map exchange format (JSON).

use crate::chart::Chart;
use crate::chartmap::ChartMap;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::forms::{BilinearFormField, ExprMatrix};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSection {
    pub names: Vec<String>,
    #[serde(rename = "box")]
    pub intervals: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormSection {
    /// Row-major n x n expression strings for the general bilinear form.
    pub entries: Vec<Vec<String>>,
}

/// Optional residual requests.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    /// Compute the constant-curvature residual for this kappa.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Compute the symmetric-space residual |nabla R|.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub symmetric_space: bool,
}

/// A parsed problem file: chart, entries, tolerances, grid resolution and
/// task options. The `tolerances` table overrides `Config` defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub chart: ChartSection,
    pub form: FormSection,
    #[serde(default)]
    pub tolerances: Config,
    #[serde(default, skip_serializing_if = "is_default_task")]
    pub task: TaskSection,
}

fn is_default_task(t: &TaskSection) -> bool {
    *t == TaskSection::default()
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<ProblemFile> {
        let file: ProblemFile =
            toml::from_str(text).map_err(|e| Error::InvalidInput(format!("problem file: {e}")))?;
        file.validate()?;
        Ok(file)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidInput(format!("serialize: {e}")))
    }

    fn validate(&self) -> Result<()> {
        let n = self.chart.names.len();
        if self.chart.intervals.len() != n {
            return Err(Error::InvalidInput(format!(
                "chart has {n} names but {} intervals",
                self.chart.intervals.len()
            )));
        }
        if self.form.entries.len() != n
            || self.form.entries.iter().any(|row| row.len() != n)
        {
            return Err(Error::InvalidInput(format!(
                "form entries must be an {n}x{n} table of expressions"
            )));
        }
        Ok(())
    }

    pub fn chart(&self) -> Result<Chart> {
        let intervals: Vec<(f64, f64)> = self
            .chart
            .intervals
            .iter()
            .map(|iv| (iv[0], iv[1]))
            .collect();
        match &self.chart.base_point {
            Some(base) => Chart::new(self.chart.names.clone(), intervals, base.clone()),
            None => Chart::centered(self.chart.names.clone(), intervals),
        }
    }

    /// Builds the bilinear form field and the effective configuration.
    pub fn build(&self) -> Result<(BilinearFormField, Config)> {
        let chart = self.chart()?;
        let mut rows: Vec<Vec<Expr>> = Vec::with_capacity(chart.dim());
        for row in &self.form.entries {
            let mut out = Vec::with_capacity(chart.dim());
            for text in row {
                out.push(parse(text, chart.names())?);
            }
            rows.push(out);
        }
        let entries = ExprMatrix::from_rows(rows)?;
        let form = BilinearFormField::new(chart, entries)?;
        Ok((form, self.tolerances.clone()))
    }

    /// Problem file for an in-memory form (used by `gen`).
    pub fn from_form(form: &BilinearFormField, tolerances: Config) -> ProblemFile {
        let chart = form.chart();
        let names = chart.names().to_vec();
        let n = chart.dim();
        let entries = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| form.entries().entry(i, j).to_text(&names))
                    .collect()
            })
            .collect();
        ProblemFile {
            chart: ChartSection {
                names,
                intervals: chart.intervals().iter().map(|(a, b)| [*a, *b]).collect(),
                base_point: Some(chart.base().to_vec()),
            },
            form: FormSection { entries },
            tolerances,
            task: TaskSection::default(),
        }
    }
}

/// Exchange format for chart maps: closed-form expressions or grid samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChartMapFile {
    pub schema_version: u32,
    /// "closed_form" or "sampled".
    pub kind: String,
    /// "forward" (problem chart -> flat chart) or "parametrization".
    pub direction: String,
    pub source_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_box: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_base: Option<Vec<f64>>,
    pub target_names: Vec<String>,
    /// Closed-form components over the source chart variables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exprs: Option<Vec<String>>,
    /// Sampled forward map: per-axis sample stations and row-major values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_axes: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<Vec<f64>>>,
    /// Constant matrix and certification metadata, when exported by
    /// `construct`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_deviation: Option<f64>,
}

impl ChartMapFile {
    pub fn parse(text: &str) -> Result<ChartMapFile> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("chart file: {e}")))
    }

    /// Realizes a closed-form chart file against the problem chart.
    pub fn to_chart_map(&self, problem_chart: &Chart) -> Result<(ChartMap, bool)> {
        if self.kind != "closed_form" {
            return Err(Error::InvalidInput(
                "verification requires a closed-form chart file".into(),
            ));
        }
        let exprs_text = self
            .exprs
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("closed-form chart without exprs".into()))?;
        let forward = match self.direction.as_str() {
            "forward" => true,
            "parametrization" => false,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown chart direction `{other}`"
                )))
            }
        };
        if forward {
            if self.source_names != problem_chart.names() {
                return Err(Error::InvalidInput(
                    "forward chart must be expressed over the problem variables".into(),
                ));
            }
            let exprs: Vec<Expr> = exprs_text
                .iter()
                .map(|t| parse(t, problem_chart.names()))
                .collect::<std::result::Result<_, _>>()?;
            let target = Chart::synthetic(
                "y",
                vec![(-1e6, 1e6); exprs.len()],
                vec![0.0; exprs.len()],
            )?;
            Ok((
                ChartMap::closed_form(problem_chart.clone(), target, exprs)?,
                true,
            ))
        } else {
            let source_box = self.source_box.as_ref().ok_or_else(|| {
                Error::InvalidInput("parametrization chart needs a source_box".into())
            })?;
            let intervals: Vec<(f64, f64)> =
                source_box.iter().map(|iv| (iv[0], iv[1])).collect();
            let base = self
                .source_base
                .clone()
                .unwrap_or_else(|| intervals.iter().map(|(a, b)| 0.5 * (a + b)).collect());
            let source = Chart::new(self.source_names.clone(), intervals, base)?;
            let exprs: Vec<Expr> = exprs_text
                .iter()
                .map(|t| parse(t, source.names()))
                .collect::<std::result::Result<_, _>>()?;
            Ok((
                ChartMap::closed_form(source, problem_chart.clone(), exprs)?,
                false,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
[chart]
names = ["x", "y"]
box = [[-0.5, 0.5], [-0.5, 0.5]]

[form]
entries = [["1", "1 + x^2"], ["-(1 + x^2)", "0"]]

[tolerances]
grid_res = 7
"#;

    #[test]
    fn parses_and_builds() {
        let pf = ProblemFile::parse(EXAMPLE).unwrap();
        let (form, config) = pf.build().unwrap();
        assert_eq!(form.dim(), 2);
        assert_eq!(config.grid_res, 7);
        assert_eq!(config.sigma_tol, Config::default().sigma_tol);
        let g = form.g().eval(&[0.2, 0.1]).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn rejects_bad_arity() {
        let text = r#"
[chart]
names = ["x", "y"]
box = [[-1.0, 1.0]]

[form]
entries = [["1", "0"], ["0", "1"]]
"#;
        assert!(ProblemFile::parse(text).is_err());
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = r#"
[chart]
names = ["x"]
box = [[-1.0, 1.0]]
typo_field = 3

[form]
entries = [["1"]]
"#;
        assert!(ProblemFile::parse(text).is_err());
    }

    #[test]
    fn roundtrips_through_toml() {
        let pf = ProblemFile::parse(EXAMPLE).unwrap();
        let text = pf.to_toml().unwrap();
        let back = ProblemFile::parse(&text).unwrap();
        assert_eq!(back.chart.names, pf.chart.names);
        assert_eq!(back.form.entries, pf.form.entries);
        assert_eq!(back.tolerances, pf.tolerances);
    }

    #[test]
    fn chart_file_forward_roundtrip() {
        let chart = Chart::centered(
            vec!["x".into(), "y".into()],
            vec![(-0.5, 0.5), (-0.5, 0.5)],
        )
        .unwrap();
        let file = ChartMapFile {
            schema_version: 1,
            kind: "closed_form".into(),
            direction: "forward".into(),
            source_names: chart.names().to_vec(),
            source_box: None,
            source_base: None,
            target_names: vec!["y1".into(), "y2".into()],
            exprs: Some(vec!["x".into(), "y * (1 + x^2)".into()]),
            grid_axes: None,
            samples: None,
            constant_matrix: None,
            max_deviation: None,
        };
        let text = serde_json::to_string(&file).unwrap();
        let parsed = ChartMapFile::parse(&text).unwrap();
        let (map, forward) = parsed.to_chart_map(&chart).unwrap();
        assert!(forward);
        let y = map.apply(&[0.5, 0.2]).unwrap();
        assert_eq!(y[0], 0.5);
        assert!((y[1] - 0.25).abs() < 1e-15);
    }
}
