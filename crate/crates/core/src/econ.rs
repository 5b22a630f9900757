//! Least-squares decomposition of bias estimates on categorical covariates:
//! dummy design construction with an omitted benchmark level per term, a
//! QR-based fit with explicit rank diagnostics, and heteroskedasticity-
//! robust standard errors.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::t_two_sided_p;

#[derive(Debug, Error)]
pub enum EconError {
    #[error("invalid model spec: {0}")]
    BadSpec(String),
    #[error("design is rank deficient; dependent columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },
    #[error("{n} observations cannot identify {k} coefficients")]
    TooFewRows { n: usize, k: usize },
}

/// One observation: a response and a level for every categorical term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsRow {
    pub y: f64,
    /// term name -> observed level.
    pub cats: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub name: String,
    /// Omitted benchmark level; its effect is absorbed by the intercept.
    pub baseline: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Name of the response, used only in reports.
    pub response: String,
    pub terms: Vec<TermSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Column names; index 0 is always "(Intercept)".
    pub col_names: Vec<String>,
    pub response: String,
}

/// Expands categorical terms into 0/1 dummy columns with the benchmark
/// level omitted. Column order is deterministic: intercept first, then
/// terms in spec order, levels lexicographic within each term.
pub fn build_design(rows: &[ObsRow], spec: &ModelSpec) -> Result<Design, EconError> {
    if rows.is_empty() {
        return Err(EconError::BadSpec("no observations".to_string()));
    }
    if spec.terms.is_empty() {
        return Err(EconError::BadSpec("no terms".to_string()));
    }
    let mut seen = BTreeSet::new();
    for term in &spec.terms {
        if !seen.insert(&term.name) {
            return Err(EconError::BadSpec(format!(
                "duplicate term \"{}\"",
                term.name
            )));
        }
    }

    let mut col_names = vec!["(Intercept)".to_string()];
    let mut dummies: Vec<(usize, String)> = Vec::new(); // (term index, level)
    for (ti, term) in spec.terms.iter().enumerate() {
        let mut levels: BTreeSet<&str> = BTreeSet::new();
        for row in rows {
            let level = row.cats.get(&term.name).ok_or_else(|| {
                EconError::BadSpec(format!(
                    "observation missing a level for term \"{}\"",
                    term.name
                ))
            })?;
            levels.insert(level);
        }
        if !levels.contains(term.baseline.as_str()) {
            return Err(EconError::BadSpec(format!(
                "baseline \"{}\" of term \"{}\" never observed",
                term.baseline, term.name
            )));
        }
        for level in levels {
            if level != term.baseline {
                col_names.push(format!("{}[{}]", term.name, level));
                dummies.push((ti, level.to_string()));
            }
        }
    }

    let n = rows.len();
    let k = col_names.len();
    let mut x = DMatrix::zeros(n, k);
    let mut y = DVector::zeros(n);
    for (i, row) in rows.iter().enumerate() {
        y[i] = row.y;
        x[(i, 0)] = 1.0;
        for (j, (ti, level)) in dummies.iter().enumerate() {
            if row.cats[&spec.terms[*ti].name] == *level {
                x[(i, j + 1)] = 1.0;
            }
        }
    }
    Ok(Design {
        x,
        y,
        col_names,
        response: spec.response.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    /// (XᵀX)⁻¹, the bread of the robust sandwich.
    pub xtx_inv: DMatrix<f64>,
    pub n: usize,
    pub k: usize,
    pub df_resid: usize,
    /// Centered R².
    pub r2: f64,
    pub col_names: Vec<String>,
    pub response: String,
}

const RANK_TOL_FACTOR: f64 = 1e-10;

/// Householder-QR least squares. Rank deficiency is reported by naming the
/// columns whose R diagonal collapses relative to the largest one.
pub fn ols_fit(design: &Design) -> Result<OlsFit, EconError> {
    let n = design.x.nrows();
    let k = design.x.ncols();
    if n <= k {
        return Err(EconError::TooFewRows { n, k });
    }
    let qr = design.x.clone().qr();
    let r = qr.r();
    let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    let dependent: Vec<String> = (0..k)
        .filter(|&i| r[(i, i)].abs() < RANK_TOL_FACTOR * max_diag)
        .map(|i| design.col_names[i].clone())
        .collect();
    if !dependent.is_empty() {
        return Err(EconError::RankDeficient { columns: dependent });
    }
    let q = qr.q();
    let qty = q.transpose() * &design.y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| EconError::RankDeficient {
            columns: design.col_names.clone(),
        })?;
    let fitted = &design.x * &coef;
    let residuals = &design.y - &fitted;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| EconError::RankDeficient {
            columns: design.col_names.clone(),
        })?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let ybar = design.y.mean();
    let sst: f64 = design.y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let ssr: f64 = residuals.iter().map(|e| e * e).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { f64::NAN };
    Ok(OlsFit {
        coef,
        fitted,
        residuals,
        xtx_inv,
        n,
        k,
        df_resid: n - k,
        r2,
        col_names: design.col_names.clone(),
        response: design.response.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HcType {
    Hc0,
    Hc1,
}

impl HcType {
    pub fn parse(s: &str) -> Option<HcType> {
        match s {
            "0" | "hc0" | "HC0" => Some(HcType::Hc0),
            "1" | "hc1" | "HC1" => Some(HcType::Hc1),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            HcType::Hc0 => "HC0",
            HcType::Hc1 => "HC1",
        }
    }
}

/// Heteroskedasticity-robust standard errors via the sandwich
/// (XᵀX)⁻¹ Xᵀ diag(e²) X (XᵀX)⁻¹; HC1 applies the n/(n−k) small-sample
/// scale.
pub fn robust_se(fit: &OlsFit, design: &Design, hc: HcType) -> Vec<f64> {
    let k = fit.k;
    let mut meat = DMatrix::zeros(k, k);
    for i in 0..fit.n {
        let e2 = fit.residuals[i] * fit.residuals[i];
        let xi = design.x.row(i);
        for a in 0..k {
            for b in 0..k {
                meat[(a, b)] += e2 * xi[a] * xi[b];
            }
        }
    }
    let mut cov = &fit.xtx_inv * meat * &fit.xtx_inv;
    if hc == HcType::Hc1 {
        cov *= fit.n as f64 / fit.df_resid as f64;
    }
    (0..k).map(|i| cov[(i, i)].sqrt()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRow {
    pub name: String,
    pub coef: f64,
    pub se: f64,
    pub t: f64,
    pub p: f64,
    pub stars: &'static str,
}

pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// t statistics and two-sided p-values against Student t with n−k degrees
/// of freedom.
pub fn infer(fit: &OlsFit, se: &[f64]) -> Vec<CoefRow> {
    fit.col_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let coef = fit.coef[i];
            let t = coef / se[i];
            let p = t_two_sided_p(t, fit.df_resid as f64);
            CoefRow {
                name: name.clone(),
                coef,
                se: se[i],
                t,
                p,
                stars: significance_stars(p),
            }
        })
        .collect()
}
