use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{
    anova, refusal_stats, regress_standardized, AnovaResult, EvalError, RefusalStats,
    RegressionResult,
};
use crate::asset_pricing::ResidualPanel;
use crate::market_graph::{FirmId, GraphSeries, RelationKind};
use crate::propagator::ShockLog;

/// Firm-level control regressors.
#[derive(Debug, Clone, Copy, Default)]
pub enum ControlSource<'a> {
    #[default]
    None,
    /// FF5 loadings `(s, h, r, c)` taken from a panel estimated with FF5.
    Ff5Loadings(&'a ResidualPanel),
}

/// One event date's aligned regression rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSection {
    pub event_date: NaiveDate,
    /// Date of the residuals, the first panel date after the event date.
    pub date: NaiveDate,
    pub firms: Vec<FirmId>,
    /// `ε_j / σ_ε`.
    pub y: Vec<f64>,
    pub phi: Vec<f64>,
    pub controls: Vec<Vec<f64>>,
}

/// Builds one standardized cross-section per event date. Dates with no
/// following residual panel date or with `σ_ε = 0` are skipped and counted.
pub fn cross_sections(
    shocks: &BTreeMap<NaiveDate, crate::propagator::ShockVector>,
    residuals: &ResidualPanel,
    controls: ControlSource<'_>,
) -> (Vec<CrossSection>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (event_date, z) in shocks {
        let Some(date) = residuals.next_date_after(*event_date) else {
            skipped += 1;
            continue;
        };
        let (Some(eps), Some(sigma)) = (residuals.cross_section(date), residuals.sigma(date))
        else {
            skipped += 1;
            continue;
        };
        if !(sigma > 0.0) {
            log::debug!("{date}: degenerate cross-section skipped");
            skipped += 1;
            continue;
        }
        let mut cs = CrossSection {
            event_date: *event_date,
            date,
            firms: Vec::with_capacity(eps.len()),
            y: Vec::with_capacity(eps.len()),
            phi: Vec::with_capacity(eps.len()),
            controls: Vec::new(),
        };
        for (firm, e) in eps {
            if let ControlSource::Ff5Loadings(panel) = controls {
                let Some(l) = panel.loadings(date, firm) else {
                    continue;
                };
                cs.controls.push(vec![l.smb, l.hml, l.rmw, l.cma]);
            }
            cs.firms.push(firm.clone());
            cs.y.push(e / sigma);
            cs.phi.push(z.get(firm));
        }
        if cs.y.is_empty() {
            skipped += 1;
        } else {
            out.push(cs);
        }
    }
    (out, skipped)
}

/// Labels for exported rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub method: String,
    pub regression: RegressionResult,
    /// Standardized residuals grouped by the sign of `Φ`; absent when
    /// fewer than two groups have two or more rows.
    pub anova: Option<AnovaResult>,
    pub refusals: RefusalStats,
    pub dates: usize,
    pub skipped_dates: usize,
}

/// Pooled regression over `sections` plus the sign-group ANOVA.
pub fn evaluate(
    cfg: &EvalConfig,
    sections: &[CrossSection],
    skipped_dates: usize,
    log: &ShockLog,
) -> Result<EvalReport, EvalError> {
    let rows: usize = sections.iter().map(|s| s.y.len()).sum();
    if sections.is_empty() {
        return Err(EvalError::TooFewObservations { have: 0, need: 3 });
    }
    let mut y = Vec::with_capacity(rows);
    let mut phi = Vec::with_capacity(rows);
    let mut controls = Vec::new();
    for s in sections {
        y.extend_from_slice(&s.y);
        phi.extend_from_slice(&s.phi);
        controls.extend(s.controls.iter().cloned());
    }
    let regression = regress_standardized(&y, &phi, &controls)?;

    let mut groups: [Vec<f64>; 3] = Default::default();
    for (v, p) in y.iter().zip(&phi) {
        let g = if *p > 0.0 {
            0
        } else if *p < 0.0 {
            1
        } else {
            2
        };
        groups[g].push(*v);
    }
    let groups: Vec<Vec<f64>> = groups.into_iter().filter(|g| g.len() >= 2).collect();
    let anova = if groups.len() >= 2 {
        Some(anova(&groups)?)
    } else {
        None
    };

    Ok(EvalReport {
        model: cfg.model.clone(),
        method: cfg.method.clone(),
        regression,
        anova,
        refusals: refusal_stats(log.outcomes.iter().map(|(_, r)| *r)),
        dates: sections.len(),
        skipped_dates,
    })
}

/// Copy of `series` with one relation layer removed from every snapshot.
pub fn ablation_series(series: &GraphSeries, kind: RelationKind) -> GraphSeries {
    let mut out = GraphSeries::new();
    for s in series.iter() {
        out.insert(s.ablate_relation(kind))
            .expect("months are unique in the source series");
    }
    out
}

pub const REGRESSION_HEADER: &str = "model,method,coef,p,r2,r2_phi";
pub const ANOVA_HEADER: &str = "model,method,anova_f,anova_p,es";

pub fn write_regression_csv<W: Write>(mut w: W, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(w, "{REGRESSION_HEADER}")?;
    for r in reports {
        let g = &r.regression;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.model, r.method, g.gamma1, g.p_gamma1, g.r2, g.r2_phi
        )?;
    }
    Ok(())
}

/// Reports without an ANOVA are written with empty cells.
pub fn write_anova_csv<W: Write>(mut w: W, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(w, "{ANOVA_HEADER}")?;
    for r in reports {
        match &r.anova {
            Some(a) => writeln!(
                w,
                "{},{},{},{},{}",
                r.model, r.method, a.f, a.p, a.eta_squared
            )?,
            None => writeln!(w, "{},{},,,", r.model, r.method)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asset_pricing::ResidualPanel;
    use crate::propagator::ShockVector;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 3, day).unwrap()
    }

    fn f(s: &str) -> FirmId {
        FirmId::new(s).unwrap()
    }

    #[test]
    fn sections_use_next_date_and_zero_fill() {
        let mut cells = BTreeMap::new();
        cells.insert(
            d(2),
            [(f("A"), 0.02), (f("B"), -0.01), (f("C"), 0.0)]
                .into_iter()
                .collect(),
        );
        let panel = ResidualPanel::from_cells(cells);
        let mut shocks = BTreeMap::new();
        shocks.insert(
            d(1),
            ShockVector::from_map([(f("A"), 0.5)].into_iter().collect()),
        );
        shocks.insert(
            d(5),
            ShockVector::from_map([(f("A"), 0.5)].into_iter().collect()),
        );
        let (cs, skipped) = cross_sections(&shocks, &panel, ControlSource::None);
        assert_eq!(skipped, 1);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].date, d(2));
        assert_eq!(cs[0].phi, vec![0.5, 0.0, 0.0]);
        let sigma = panel.sigma(d(2)).unwrap();
        assert!((cs[0].y[0] - 0.02 / sigma).abs() < 1e-15);
    }

    #[test]
    fn csv_shapes() {
        let report = EvalReport {
            model: "diffusion".into(),
            method: "capm".into(),
            regression: regress_standardized(&[0.0, 1.0, 2.1, 2.9], &[0.0, 1.0, 2.0, 3.0], &[])
                .unwrap(),
            anova: None,
            refusals: RefusalStats::default(),
            dates: 1,
            skipped_dates: 0,
        };
        let mut buf = Vec::new();
        write_regression_csv(&mut buf, std::slice::from_ref(&report)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(REGRESSION_HEADER));
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 6);
        let mut buf = Vec::new();
        write_anova_csv(&mut buf, &[report]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap().lines().nth(1).unwrap(),
            "diffusion,capm,,,"
        );
    }
}
