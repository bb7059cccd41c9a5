//! Learning weighted lag-1 causal graphs from recorded time series: VAR(1)
//! least squares, Granger significance filtering, Lasso with contiguous-block
//! cross-validation, context conditioning of rollouts, and graph averaging.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::coinrunner::{Rollout, FRAME_VARS};
use crate::error::{Result, TsceError};
use crate::graph::{ContextSet, Edge, TemporalCausalGraph, Variable};
use crate::predicate::Predicate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GrangerVar,
    Lasso,
}

impl std::str::FromStr for Method {
    type Err = TsceError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "granger" | "granger_var" => Ok(Method::GrangerVar),
            "lasso" => Ok(Method::Lasso),
            other => Err(TsceError::InvalidArgument(format!(
                "unknown discovery method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscoveryConfig {
    pub method: Method,
    /// Granger significance level.
    pub alpha_level: f64,
    /// Cross-validation folds for the Lasso.
    pub folds: usize,
    /// Explicit lambda grid; `None` derives a 100-point log grid from the
    /// data (lambda_max down to lambda_max / 1000).
    pub lambda_grid: Option<Vec<f64>>,
    /// Minimum segment length (rows) kept by `condition_rollouts`.
    pub min_samples: usize,
    /// Margin frames appended on both sides of each conditioned segment.
    pub margin: usize,
    /// Standard deviation of the noise injected into binary columns before
    /// regression (0 disables it).
    pub noise_sd: f64,
    /// Averaged edges with |mean weight| below this are dropped.
    pub prune_eps: f64,
    /// Seed for the injected noise.
    pub seed: u64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            method: Method::GrangerVar,
            alpha_level: 0.05,
            folds: 5,
            lambda_grid: None,
            min_samples: 3,
            margin: 12,
            noise_sd: 0.01,
            prune_eps: 1e-3,
            seed: 0,
        }
    }
}

impl DiscoveryConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha_level && self.alpha_level < 1.0) {
            return Err(TsceError::InvalidArgument(format!(
                "alpha_level must be in (0, 1), got {}",
                self.alpha_level
            )));
        }
        if let Some(grid) = &self.lambda_grid {
            if grid.is_empty() {
                return Err(TsceError::InvalidArgument("empty lambda grid".into()));
            }
            if grid.iter().any(|l| *l < 0.0) {
                return Err(TsceError::InvalidArgument("negative lambda".into()));
            }
        }
        Ok(())
    }
}

/// A multivariate series split into segments; regressions pair consecutive
/// rows *within* segments only, so conditioning boundaries never produce
/// spurious transitions.
#[derive(Debug, Clone)]
pub struct SegmentedSeries {
    pub names: Vec<String>,
    pub segments: Vec<Vec<Vec<f64>>>,
}

impl SegmentedSeries {
    pub fn single(names: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        SegmentedSeries {
            names,
            segments: vec![rows],
        }
    }

    /// (lagged predictors, responses) as m x d matrices.
    pub fn pairs(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let d = self.names.len();
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        let mut m = 0;
        for seg in &self.segments {
            for w in seg.windows(2) {
                xs.extend_from_slice(&w[0]);
                ys.extend_from_slice(&w[1]);
                m += 1;
            }
        }
        (
            DMatrix::from_row_slice(m, d, &xs),
            DMatrix::from_row_slice(m, d, &ys),
        )
    }

    /// Adds Normal(0, sd) noise to every column whose raw values are all in
    /// {0, 1}, preventing degenerate zero-variance regressors.
    pub fn inject_binary_noise(&mut self, sd: f64, rng: &mut ChaCha8Rng) {
        if sd <= 0.0 {
            return;
        }
        let d = self.names.len();
        let binary: Vec<bool> = (0..d)
            .map(|k| {
                self.segments
                    .iter()
                    .flatten()
                    .all(|row| row[k] == 0.0 || row[k] == 1.0)
            })
            .collect();
        let dist = Normal::new(0.0, sd).expect("positive sd");
        for seg in &mut self.segments {
            for row in seg {
                for (k, v) in row.iter_mut().enumerate() {
                    if binary[k] {
                        *v += dist.sample(rng);
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// VAR(1) least squares
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct VarFit {
    pub names: Vec<String>,
    /// coef[(dst, src)] - effect of src_{t-1} on dst_t.
    pub coef: DMatrix<f64>,
    pub intercept: Vec<f64>,
    pub residual_var: Vec<f64>,
    /// stderr[(dst, src)], zero for dropped columns.
    pub stderr: DMatrix<f64>,
    /// Constant columns excluded from the regression.
    pub dropped: Vec<String>,
    /// Number of transition pairs used.
    pub samples: usize,
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(DVector<f64>, f64, DMatrix<f64>)> {
    let p = x.ncols();
    let xtx = x.transpose() * x;
    let svd = xtx.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.iter().any(|s| *s < max_sv * 1e-10) {
        return Err(TsceError::Discovery("rank-deficient design".into()));
    }
    let xty = x.transpose() * y;
    let beta = svd
        .solve(&xty, 1e-12)
        .map_err(|e| TsceError::Discovery(format!("least squares failed: {e}")))?;
    let resid = y - x * &beta;
    let rss = resid.dot(&resid);
    let inv = xtx
        .try_inverse()
        .ok_or_else(|| TsceError::Discovery("singular normal equations".into()))?;
    let _ = p;
    Ok((beta, rss, inv))
}

/// Names of column pairs that are (nearly) perfectly correlated, for the
/// rank-deficiency error message.
fn collinear_pairs(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for i in 0..x.ncols() {
        for j in (i + 1)..x.ncols() {
            let (a, b) = (x.column(i), x.column(j));
            let (ma, mb) = (a.mean(), b.mean());
            let mut num = 0.0;
            let mut da = 0.0;
            let mut db = 0.0;
            for k in 0..x.nrows() {
                num += (a[k] - ma) * (b[k] - mb);
                da += (a[k] - ma).powi(2);
                db += (b[k] - mb).powi(2);
            }
            if da > 0.0 && db > 0.0 && (num / (da * db).sqrt()).abs() > 1.0 - 1e-9 {
                out.push(format!("{} ~ {}", names[i], names[j]));
            }
        }
    }
    out
}

/// Per-equation least squares for X_t = C X_{t-1} + intercept + noise.
/// Constant predictor columns are dropped (their coefficients and standard
/// errors stay zero) and reported in `dropped`.
pub fn fit_var1(series: &SegmentedSeries) -> Result<VarFit> {
    let d = series.names.len();
    let (x_full, y_full) = series.pairs();
    let m = x_full.nrows();

    let kept: Vec<usize> = (0..d)
        .filter(|&k| {
            let col = x_full.column(k);
            col.iter().any(|v| (*v - col[0]).abs() > 0.0)
        })
        .collect();
    let dropped: Vec<String> = (0..d)
        .filter(|k| !kept.contains(k))
        .map(|k| series.names[k].clone())
        .collect();
    let p = kept.len() + 1; // predictors + intercept
    if m < p + 2 {
        return Err(TsceError::Discovery(format!(
            "insufficient samples: {m} transition pairs for {} predictors",
            kept.len()
        )));
    }

    // design matrix [1, kept lagged columns]
    let mut design = DMatrix::zeros(m, p);
    for r in 0..m {
        design[(r, 0)] = 1.0;
        for (c, &k) in kept.iter().enumerate() {
            design[(r, c + 1)] = x_full[(r, k)];
        }
    }

    let mut coef = DMatrix::zeros(d, d);
    let mut stderr = DMatrix::zeros(d, d);
    let mut intercept = vec![0.0; d];
    let mut residual_var = vec![0.0; d];
    for dst in 0..d {
        let y = DVector::from_iterator(m, y_full.column(dst).iter().copied());
        let (beta, rss, inv) = ols(&design, &y).map_err(|e| {
            let kept_names: Vec<String> = kept.iter().map(|&k| series.names[k].clone()).collect();
            let collide = collinear_pairs(&design.columns(1, p - 1).into(), &kept_names);
            TsceError::Discovery(format!(
                "{e} for target {:?}; collinear columns: [{}]",
                series.names[dst],
                collide.join(", ")
            ))
        })?;
        let dof = (m - p) as f64;
        let sigma2 = rss / dof;
        intercept[dst] = beta[0];
        residual_var[dst] = sigma2;
        for (c, &src) in kept.iter().enumerate() {
            coef[(dst, src)] = beta[c + 1];
            stderr[(dst, src)] = (sigma2 * inv[(c + 1, c + 1)]).sqrt();
        }
    }
    Ok(VarFit {
        names: series.names.clone(),
        coef,
        intercept,
        residual_var,
        stderr,
        dropped,
        samples: m,
    })
}

// ---------------------------------------------------------------------------
// Granger filtering
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct GrangerTest {
    pub src: String,
    pub dst: String,
    pub f_stat: f64,
    pub p_value: f64,
    pub weight: f64,
    pub kept: bool,
}

fn rss_of(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let (_, rss, _) = ols(design, y)?;
    Ok(rss)
}

/// Bivariate-conditioned Granger test per directed pair: dst_t on
/// [1, dst_{t-1}] (restricted) vs [1, dst_{t-1}, src_{t-1}] (unrestricted);
/// self-edges compare the mean-only model against the AR(1) model. Edges with
/// p < alpha_level are kept with the full-VAR coefficient as weight.
pub fn granger_filter_detailed(
    series: &SegmentedSeries,
    fit: &VarFit,
    cfg: &DiscoveryConfig,
) -> Result<(TemporalCausalGraph, Vec<GrangerTest>)> {
    cfg.validate()?;
    let d = series.names.len();
    let (x, y) = series.pairs();
    let m = x.nrows();
    let mut tests = Vec::new();
    let mut edges = Vec::new();
    for dst in 0..d {
        if fit.dropped.contains(&series.names[dst]) {
            continue;
        }
        let yv = DVector::from_iterator(m, y.column(dst).iter().copied());
        for src in 0..d {
            if fit.dropped.contains(&series.names[src]) {
                continue;
            }
            let (restricted, unrestricted) = if src == dst {
                let r = DMatrix::from_element(m, 1, 1.0);
                let mut u = DMatrix::zeros(m, 2);
                for i in 0..m {
                    u[(i, 0)] = 1.0;
                    u[(i, 1)] = x[(i, dst)];
                }
                (r, u)
            } else {
                let mut r = DMatrix::zeros(m, 2);
                let mut u = DMatrix::zeros(m, 3);
                for i in 0..m {
                    r[(i, 0)] = 1.0;
                    r[(i, 1)] = x[(i, dst)];
                    u[(i, 0)] = 1.0;
                    u[(i, 1)] = x[(i, dst)];
                    u[(i, 2)] = x[(i, src)];
                }
                (r, u)
            };
            let p_u = unrestricted.ncols();
            if m <= p_u + 1 {
                return Err(TsceError::Discovery(format!(
                    "too few samples ({m}) for the Granger test"
                )));
            }
            let rss_r = rss_of(&restricted, &yv)?;
            let rss_u = rss_of(&unrestricted, &yv)?;
            let dof = (m - p_u) as f64;
            let f_stat = if rss_u <= 0.0 {
                f64::INFINITY
            } else {
                ((rss_r - rss_u).max(0.0) / 1.0) / (rss_u / dof)
            };
            let p_value = if f_stat.is_infinite() {
                0.0
            } else {
                let dist = FisherSnedecor::new(1.0, dof).map_err(|e| {
                    TsceError::Discovery(format!("invalid F distribution: {e}"))
                })?;
                1.0 - dist.cdf(f_stat)
            };
            let weight = fit.coef[(dst, src)];
            let kept = p_value < cfg.alpha_level;
            tests.push(GrangerTest {
                src: series.names[src].clone(),
                dst: series.names[dst].clone(),
                f_stat,
                p_value,
                weight,
                kept,
            });
            if kept {
                edges.push(Edge {
                    src: series.names[src].clone(),
                    dst: series.names[dst].clone(),
                    lag: 1,
                    weight,
                });
            }
        }
    }
    let vars = series
        .names
        .iter()
        .map(|n| Variable::continuous(n))
        .collect();
    Ok((TemporalCausalGraph::new(vars, edges)?, tests))
}

pub fn granger_filter(
    series: &SegmentedSeries,
    fit: &VarFit,
    cfg: &DiscoveryConfig,
) -> Result<TemporalCausalGraph> {
    granger_filter_detailed(series, fit, cfg).map(|(g, _)| g)
}

// ---------------------------------------------------------------------------
// Lasso
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct LassoReport {
    /// (target, chosen lambda, nonzero count).
    pub choices: Vec<(String, f64, usize)>,
}

/// Standardized cyclic coordinate descent minimizing
/// (1/2m) ||y - X b||^2 + lambda ||b||_1; returns coefficients in raw units
/// plus the intercept.
struct LassoProblem {
    mu: Vec<f64>,
    sd: Vec<f64>,
    y_mean: f64,
    gram: DMatrix<f64>,
    corr: Vec<f64>,
    live: Vec<usize>,
    d: usize,
}

impl LassoProblem {
    fn new(x: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        let (m, d) = (x.nrows(), x.ncols());
        let mut mu = vec![0.0; d];
        let mut sd = vec![0.0; d];
        for k in 0..d {
            let col = x.column(k);
            mu[k] = col.mean();
            sd[k] = (col.iter().map(|v| (v - mu[k]).powi(2)).sum::<f64>() / m as f64).sqrt();
        }
        let live: Vec<usize> = (0..d).filter(|&k| sd[k] > 0.0).collect();
        let y_mean = y.mean();
        // standardized Gram and correlation vector over live columns
        let n_live = live.len();
        let mut xs = DMatrix::zeros(m, n_live);
        for (c, &k) in live.iter().enumerate() {
            for r in 0..m {
                xs[(r, c)] = (x[(r, k)] - mu[k]) / sd[k];
            }
        }
        let yc = DVector::from_iterator(m, y.iter().map(|v| v - y_mean));
        let gram = (xs.transpose() * &xs) / m as f64;
        let corr = ((xs.transpose() * &yc) / m as f64).iter().copied().collect();
        LassoProblem {
            mu,
            sd,
            y_mean,
            gram,
            corr,
            live,
            d,
        }
    }

    fn lambda_max(&self) -> f64 {
        self.corr.iter().fold(0.0, |a, c| a.max(c.abs()))
    }

    /// Solves for one lambda with a warm start (standardized coefficients).
    fn solve(&self, lambda: f64, warm: &mut Vec<f64>) {
        let n = self.live.len();
        if warm.len() != n {
            *warm = vec![0.0; n];
        }
        for _ in 0..10_000 {
            let mut max_delta = 0.0f64;
            for k in 0..n {
                let mut rho = self.corr[k];
                for j in 0..n {
                    if j != k {
                        rho -= self.gram[(k, j)] * warm[j];
                    }
                }
                let gkk = self.gram[(k, k)];
                let new = if gkk <= 0.0 {
                    0.0
                } else {
                    (rho.signum() * (rho.abs() - lambda).max(0.0)) / gkk
                };
                max_delta = max_delta.max((new - warm[k]).abs());
                warm[k] = new;
            }
            if max_delta < 1e-9 {
                break;
            }
        }
    }

    /// Converts standardized coefficients to raw ones plus intercept.
    fn raw(&self, std_beta: &[f64]) -> (Vec<f64>, f64) {
        let mut beta = vec![0.0; self.d];
        let mut intercept = self.y_mean;
        for (c, &k) in self.live.iter().enumerate() {
            beta[k] = std_beta[c] / self.sd[k];
            intercept -= beta[k] * self.mu[k];
        }
        (beta, intercept)
    }
}

fn lasso_grid(problems: &[LassoProblem], cfg: &DiscoveryConfig) -> Result<Vec<f64>> {
    if let Some(grid) = &cfg.lambda_grid {
        let mut g = grid.clone();
        g.sort_by(|a, b| b.partial_cmp(a).unwrap());
        return Ok(g);
    }
    let lmax = problems
        .iter()
        .map(|p| p.lambda_max())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let lmin = lmax * 1e-3;
    let n = 100;
    Ok((0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            (lmax.ln() + t * (lmin.ln() - lmax.ln())).exp()
        })
        .collect())
}

/// Per-target L1-regularized regression of X_t on X_{t-1}; lambda chosen by
/// contiguous-block K-fold cross-validated MSE, shared across targets via the
/// summed validation error. Nonzero coefficients become lag-1 edges.
pub fn fit_lasso_detailed(
    series: &SegmentedSeries,
    cfg: &DiscoveryConfig,
) -> Result<(TemporalCausalGraph, LassoReport)> {
    cfg.validate()?;
    let d = series.names.len();
    let (x, y) = series.pairs();
    let m = x.nrows();
    if m < 3 {
        return Err(TsceError::Discovery(format!(
            "insufficient samples: {m} transition pairs"
        )));
    }
    let folds = cfg.folds.clamp(2, m);
    let grid = lasso_grid(
        &(0..d)
            .map(|dst| {
                LassoProblem::new(&x, &DVector::from_iterator(m, y.column(dst).iter().copied()))
            })
            .collect::<Vec<_>>(),
        cfg,
    )?;

    // contiguous fold boundaries
    let bounds: Vec<usize> = (0..=folds).map(|f| f * m / folds).collect();
    let mut edges = Vec::new();
    let mut choices = Vec::new();
    for dst in 0..d {
        let yv = DVector::from_iterator(m, y.column(dst).iter().copied());
        // per-fold validation MSE per lambda
        let mut fold_mse: Vec<Vec<f64>> = vec![Vec::new(); grid.len()];
        for f in 0..folds {
            let (lo, hi) = (bounds[f], bounds[f + 1]);
            if hi == lo {
                continue;
            }
            let train_rows: Vec<usize> = (0..m).filter(|r| *r < lo || *r >= hi).collect();
            if train_rows.len() < 2 {
                continue;
            }
            let xt = DMatrix::from_fn(train_rows.len(), d, |r, c| x[(train_rows[r], c)]);
            let yt = DVector::from_fn(train_rows.len(), |r, _| yv[train_rows[r]]);
            let problem = LassoProblem::new(&xt, &yt);
            let mut warm: Vec<f64> = Vec::new();
            for (gi, &lambda) in grid.iter().enumerate() {
                problem.solve(lambda, &mut warm);
                let (beta, intercept) = problem.raw(&warm);
                let mut mse = 0.0;
                for r in lo..hi {
                    let mut pred = intercept;
                    for k in 0..d {
                        pred += beta[k] * x[(r, k)];
                    }
                    mse += (yv[r] - pred).powi(2);
                }
                fold_mse[gi].push(mse / (hi - lo) as f64);
            }
        }
        // one-standard-error rule: among lambdas whose mean CV error is
        // within one standard error of the minimum, keep the largest
        // (the grid is sorted descending, so the smallest index)
        let stats: Vec<(f64, f64)> = fold_mse
            .iter()
            .map(|v| {
                if v.is_empty() {
                    return (f64::INFINITY, 0.0);
                }
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
                    / v.len().max(2).saturating_sub(1) as f64;
                (mean, (var / v.len() as f64).sqrt())
            })
            .collect();
        let min_i = stats
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        let cutoff = stats[min_i].0 + stats[min_i].1;
        let best = (0..grid.len())
            .find(|&i| stats[i].0 <= cutoff)
            .unwrap_or(min_i);
        // refit on all data at the chosen lambda
        let problem = LassoProblem::new(&x, &yv);
        let mut warm: Vec<f64> = Vec::new();
        for &lambda in &grid[..=best] {
            problem.solve(lambda, &mut warm); // warm-started path
        }
        let (beta, _) = problem.raw(&warm);
        // debias: refit ordinary least squares on the selected support so the
        // reported weights are free of the lasso shrinkage
        let support: Vec<usize> = (0..d).filter(|&k| beta[k].abs() > 1e-12).collect();
        let mut debiased = vec![0.0; d];
        if !support.is_empty() {
            let xs = DMatrix::from_fn(m, support.len() + 1, |r, c| {
                if c == 0 {
                    1.0
                } else {
                    x[(r, support[c - 1])]
                }
            });
            let svd = xs.svd(true, true);
            let sol = svd
                .solve(&yv, 1e-10)
                .map_err(|e| TsceError::Discovery(format!("support refit failed: {e}")))?;
            for (si, &k) in support.iter().enumerate() {
                debiased[k] = sol[si + 1];
            }
        }
        choices.push((series.names[dst].clone(), grid[best], support.len()));
        for &src in &support {
            edges.push(Edge {
                src: series.names[src].clone(),
                dst: series.names[dst].clone(),
                lag: 1,
                weight: debiased[src],
            });
        }
    }
    let vars = series
        .names
        .iter()
        .map(|n| Variable::continuous(n))
        .collect();
    Ok((
        TemporalCausalGraph::new(vars, edges)?,
        LassoReport { choices },
    ))
}

pub fn fit_lasso(series: &SegmentedSeries, cfg: &DiscoveryConfig) -> Result<TemporalCausalGraph> {
    fit_lasso_detailed(series, cfg).map(|(g, _)| g)
}

// ---------------------------------------------------------------------------
// Averaging and conditioning
// ---------------------------------------------------------------------------

/// Mean edge weight per (src, dst, lag), treating an edge absent from a graph
/// as weight 0; means below `prune_eps` in magnitude are dropped.
pub fn average_graphs(
    graphs: &[TemporalCausalGraph],
    prune_eps: f64,
) -> Result<TemporalCausalGraph> {
    let first = graphs
        .first()
        .ok_or_else(|| TsceError::Discovery("no graphs to average".into()))?;
    let names: BTreeSet<&str> = first.variables().iter().map(|v| v.name.as_str()).collect();
    for g in graphs {
        let other: BTreeSet<&str> = g.variables().iter().map(|v| v.name.as_str()).collect();
        if other != names {
            return Err(TsceError::Discovery(format!(
                "variable sets differ: [{}] vs [{}]",
                names.iter().cloned().collect::<Vec<_>>().join(", "),
                other.iter().cloned().collect::<Vec<_>>().join(", ")
            )));
        }
    }
    let mut sums: BTreeMap<(String, String, u32), f64> = BTreeMap::new();
    for g in graphs {
        for e in g.edges() {
            *sums
                .entry((e.src.clone(), e.dst.clone(), e.lag))
                .or_insert(0.0) += e.weight;
        }
    }
    let n = graphs.len() as f64;
    let edges: Vec<Edge> = sums
        .into_iter()
        .filter_map(|((src, dst, lag), sum)| {
            let weight = sum / n;
            (weight.abs() >= prune_eps).then_some(Edge {
                src,
                dst,
                lag,
                weight,
            })
        })
        .collect();
    TemporalCausalGraph::new(first.variables().to_vec(), edges)
}

/// Maximal contiguous frame runs of one rollout where the predicate holds,
/// each extended by `margin` frames on both sides (clipped to the rollout);
/// runs shorter than `min_samples` after extension are dropped. Overlapping
/// extended segments stay separate.
pub fn condition_rollout(
    rollout: &Rollout,
    predicate: &Predicate,
    margin: usize,
    min_samples: usize,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let rows: Vec<Vec<f64>> = rollout.frames.iter().map(|f| f.values()).collect();
    let mut hold = Vec::with_capacity(rows.len());
    for f in &rollout.frames {
        let mut map = std::collections::HashMap::new();
        for (k, name) in FRAME_VARS.iter().enumerate() {
            map.insert(name.to_string(), f.values()[k]);
        }
        hold.push(predicate.eval(&map)?);
    }
    let mut segments = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        if !hold[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < rows.len() && hold[i] {
            i += 1;
        }
        let end = i - 1; // inclusive
        let lo = start.saturating_sub(margin);
        let hi = (end + margin).min(rows.len() - 1);
        if hi - lo + 1 >= min_samples {
            segments.push(rows[lo..=hi].to_vec());
        }
    }
    Ok(segments)
}

/// Per-rollout conditioned series (rollouts without any qualifying segment
/// are omitted), in rollout order.
pub fn condition_rollouts(
    rollouts: &[Rollout],
    predicate: &Predicate,
    margin: usize,
    min_samples: usize,
) -> Result<Vec<SegmentedSeries>> {
    let names: Vec<String> = FRAME_VARS.iter().map(|s| s.to_string()).collect();
    let mut out = Vec::new();
    for r in rollouts {
        let segments = condition_rollout(r, predicate, margin, min_samples)?;
        if !segments.is_empty() {
            out.push(SegmentedSeries {
                names: names.clone(),
                segments,
            });
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Full per-context pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct FitReport {
    pub version: u32,
    pub method: Method,
    pub context: String,
    pub rollouts_used: usize,
    pub rollouts_skipped: usize,
    pub details: serde_json::Value,
}

pub struct ContextResult {
    pub context: String,
    pub graph: TemporalCausalGraph,
    pub report: FitReport,
}

/// Conditions the rollouts on each context, fits one graph per rollout
/// (skipping rollouts with too few transitions or degenerate designs), and
/// averages the per-rollout graphs; absent edges average as 0.
pub fn discover(
    rollouts: &[Rollout],
    contexts: &ContextSet,
    cfg: &DiscoveryConfig,
) -> Result<Vec<ContextResult>> {
    cfg.validate()?;
    let d = FRAME_VARS.len();
    let mut results = Vec::new();
    for ctx in &contexts.contexts {
        let conditioned =
            condition_rollouts(rollouts, &ctx.predicate, cfg.margin, cfg.min_samples)?;
        let mut graphs = Vec::new();
        let mut skipped = 0usize;
        let mut details = Vec::new();
        for (i, series) in conditioned.iter().enumerate() {
            let mut series = series.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            series.inject_binary_noise(cfg.noise_sd, &mut rng);
            let m: usize = series.segments.iter().map(|s| s.len().saturating_sub(1)).sum();
            if m < d + 3 {
                skipped += 1;
                continue;
            }
            let fitted = match cfg.method {
                Method::GrangerVar => fit_var1(&series).and_then(|fit| {
                    granger_filter_detailed(&series, &fit, cfg).map(|(g, tests)| {
                        let kept = tests.iter().filter(|t| t.kept).count();
                        (g, serde_json::json!({ "pairs": m, "edges_kept": kept }))
                    })
                }),
                Method::Lasso => fit_lasso_detailed(&series, cfg).map(|(g, rep)| {
                    let nnz: usize = rep.choices.iter().map(|c| c.2).sum();
                    (g, serde_json::json!({ "pairs": m, "nonzeros": nnz }))
                }),
            };
            match fitted {
                Ok((g, detail)) => {
                    graphs.push(g);
                    details.push(detail);
                }
                Err(_) => skipped += 1,
            }
        }
        if graphs.is_empty() {
            return Err(TsceError::Discovery(format!(
                "context {:?}: no rollout produced a usable fit",
                ctx.name
            )));
        }
        let used = graphs.len();
        let averaged = average_graphs(&graphs, cfg.prune_eps)?;
        // frame variables are binary except the score
        let vars = averaged
            .variables()
            .iter()
            .map(|v| {
                if v.name == "score" {
                    Variable::continuous(&v.name)
                } else {
                    Variable::binary(&v.name)
                }
            })
            .collect();
        let graph = TemporalCausalGraph::new(vars, averaged.edges().to_vec())?;
        results.push(ContextResult {
            context: ctx.name.clone(),
            graph,
            report: FitReport {
                version: 1,
                method: cfg.method,
                context: ctx.name.clone(),
                rollouts_used: used,
                rollouts_skipped: skipped + (rollouts.len() - conditioned.len()),
                details: serde_json::Value::Array(details),
            },
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen_var(
        coef: &[&[f64]],
        t: usize,
        noise: f64,
        seed: u64,
    ) -> SegmentedSeries {
        let d = coef.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::with_capacity(t);
        let mut x: Vec<f64> = (0..d).map(|_| normal.sample(&mut rng)).collect();
        rows.push(x.clone());
        for _ in 1..t {
            let mut next = vec![0.0; d];
            for dst in 0..d {
                for src in 0..d {
                    next[dst] += coef[dst][src] * x[src];
                }
                if noise > 0.0 {
                    next[dst] += noise * normal.sample(&mut rng);
                }
            }
            rows.push(next.clone());
            x = next;
        }
        let names = (0..d).map(|i| format!("X{}", i + 1)).collect();
        SegmentedSeries::single(names, rows)
    }

    #[test]
    fn ar1_coefficient_recovery() {
        let series = gen_var(&[&[0.6]], 500, 0.05, 1);
        let fit = fit_var1(&series).unwrap();
        assert!((fit.coef[(0, 0)] - 0.6).abs() < 0.05, "{}", fit.coef[(0, 0)]);
    }

    #[test]
    fn white_noise_coefficients_are_insignificant() {
        let series = gen_var(&[&[0.0, 0.0], &[0.0, 0.0]], 400, 1.0, 2);
        let fit = fit_var1(&series).unwrap();
        for dst in 0..2 {
            for src in 0..2 {
                assert!(
                    fit.coef[(dst, src)].abs() < 3.0 * fit.stderr[(dst, src)],
                    "coef {} stderr {}",
                    fit.coef[(dst, src)],
                    fit.stderr[(dst, src)]
                );
            }
        }
    }

    #[test]
    fn known_two_variable_system_recovered() {
        let truth: [&[f64]; 2] = [&[0.5, 0.3], &[0.0, 0.7]];
        let series = gen_var(&truth, 800, 0.05, 3);
        let fit = fit_var1(&series).unwrap();
        for dst in 0..2 {
            for src in 0..2 {
                assert!(
                    (fit.coef[(dst, src)] - truth[dst][src]).abs() < 0.05,
                    "({dst},{src}): {}",
                    fit.coef[(dst, src)]
                );
            }
        }
    }

    #[test]
    fn noise_free_recurrence_recovered_exactly() {
        // segments from different starts keep the design full-rank
        let coef: [&[f64]; 2] = [&[0.5, 0.2], &[-0.3, 0.6]];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut segments = Vec::new();
        for _ in 0..10 {
            let mut x = vec![normal.sample(&mut rng), normal.sample(&mut rng)];
            let mut seg = vec![x.clone()];
            for _ in 0..5 {
                x = vec![
                    coef[0][0] * x[0] + coef[0][1] * x[1],
                    coef[1][0] * x[0] + coef[1][1] * x[1],
                ];
                seg.push(x.clone());
            }
            segments.push(seg);
        }
        let series = SegmentedSeries {
            names: vec!["X1".into(), "X2".into()],
            segments,
        };
        let fit = fit_var1(&series).unwrap();
        for dst in 0..2 {
            for src in 0..2 {
                assert!((fit.coef[(dst, src)] - coef[dst][src]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_column_is_dropped() {
        let mut series = gen_var(&[&[0.6, 0.0], &[0.0, 0.0]], 100, 0.1, 5);
        for row in &mut series.segments[0] {
            row[1] = 7.0;
        }
        let fit = fit_var1(&series).unwrap();
        assert_eq!(fit.dropped, vec!["X2".to_string()]);
        assert_eq!(fit.coef[(0, 1)], 0.0);
        assert!((fit.coef[(0, 0)] - 0.6).abs() < 0.1);
    }

    #[test]
    fn duplicate_column_is_rejected_with_names() {
        let mut series = gen_var(&[&[0.5, 0.0], &[0.0, 0.5]], 100, 0.1, 6);
        for row in &mut series.segments[0] {
            row[1] = row[0];
        }
        let err = fit_var1(&series).unwrap_err().to_string();
        assert!(err.contains("X1"), "{err}");
        assert!(err.contains("X2"), "{err}");
    }

    #[test]
    fn granger_keeps_strong_coupling_with_positive_sign() {
        let series = gen_var(&[&[0.5, 0.0], &[0.8, 0.5]], 400, 0.01, 7);
        let fit = fit_var1(&series).unwrap();
        let cfg = DiscoveryConfig::default();
        let g = granger_filter(&series, &fit, &cfg).unwrap();
        let e = g
            .edges()
            .iter()
            .find(|e| e.src == "X1" && e.dst == "X2")
            .expect("coupled edge must survive the filter");
        assert!(e.weight > 0.0);
        assert_eq!(e.lag, 1);
    }

    #[test]
    fn granger_rejects_independent_noise_in_most_seeds() {
        let cfg = DiscoveryConfig::default();
        let mut clean = 0;
        for seed in 0..20 {
            let series = gen_var(&[&[0.0, 0.0], &[0.0, 0.0]], 300, 1.0, 100 + seed);
            let fit = fit_var1(&series).unwrap();
            let g = granger_filter(&series, &fit, &cfg).unwrap();
            if !g.edges().iter().any(|e| e.src != e.dst) {
                clean += 1;
            }
        }
        assert!(clean >= 19, "only {clean}/20 seeds had no cross edges");
    }

    #[test]
    fn univariate_series_yields_at_most_self_edge() {
        let series = gen_var(&[&[0.7]], 300, 0.1, 8);
        let fit = fit_var1(&series).unwrap();
        let g = granger_filter(&series, &fit, &DiscoveryConfig::default()).unwrap();
        assert!(g.edges().len() <= 1);
        if let Some(e) = g.edges().first() {
            assert_eq!((e.src.as_str(), e.dst.as_str()), ("X1", "X1"));
        }
    }

    #[test]
    fn lowering_alpha_never_adds_edges() {
        let series = gen_var(&[&[0.5, 0.2], &[0.3, 0.4]], 200, 0.3, 9);
        let fit = fit_var1(&series).unwrap();
        let strict = DiscoveryConfig {
            alpha_level: 0.01,
            ..DiscoveryConfig::default()
        };
        let loose = DiscoveryConfig::default();
        let gs = granger_filter(&series, &fit, &strict).unwrap();
        let gl = granger_filter(&series, &fit, &loose).unwrap();
        let key = |e: &Edge| (e.src.clone(), e.dst.clone());
        let loose_set: BTreeSet<_> = gl.edges().iter().map(key).collect();
        for e in gs.edges() {
            assert!(loose_set.contains(&key(e)));
        }
    }

    #[test]
    fn lasso_full_shrinkage_is_empty() {
        let series = gen_var(&[&[0.5, 0.2], &[0.3, 0.4]], 200, 0.1, 10);
        let cfg = DiscoveryConfig {
            lambda_grid: Some(vec![1e6]),
            ..DiscoveryConfig::default()
        };
        let g = fit_lasso(&series, &cfg).unwrap();
        assert!(g.edges().is_empty());
    }

    #[test]
    fn lasso_at_zero_matches_ols() {
        let series = gen_var(&[&[0.5, 0.2], &[0.3, 0.4]], 300, 0.2, 11);
        let cfg = DiscoveryConfig {
            lambda_grid: Some(vec![0.0]),
            ..DiscoveryConfig::default()
        };
        let g = fit_lasso(&series, &cfg).unwrap();
        let fit = fit_var1(&series).unwrap();
        for e in g.edges() {
            let src = if e.src == "X1" { 0 } else { 1 };
            let dst = if e.dst == "X1" { 0 } else { 1 };
            assert!(
                (e.weight - fit.coef[(dst, src)]).abs() < 1e-6,
                "{} -> {}: lasso {} vs ols {}",
                e.src,
                e.dst,
                e.weight,
                fit.coef[(dst, src)]
            );
        }
    }

    #[test]
    fn empty_lambda_grid_is_rejected() {
        let series = gen_var(&[&[0.5]], 50, 0.1, 12);
        let cfg = DiscoveryConfig {
            lambda_grid: Some(vec![]),
            ..DiscoveryConfig::default()
        };
        assert!(fit_lasso(&series, &cfg).is_err());
    }

    #[test]
    fn lasso_path_support_is_monotone() {
        let series = gen_var(&[&[0.5, 0.2], &[0.3, 0.4]], 200, 0.2, 13);
        let (x, y) = series.pairs();
        let m = x.nrows();
        for dst in 0..2 {
            let yv = DVector::from_iterator(m, y.column(dst).iter().copied());
            let problem = LassoProblem::new(&x, &yv);
            let lmax = problem.lambda_max();
            let mut warm: Vec<f64> = Vec::new();
            let mut prev = 0usize;
            for i in 0..30 {
                let lambda = lmax * (1.0 - i as f64 / 30.0).max(1e-6);
                problem.solve(lambda, &mut warm);
                let nnz = warm.iter().filter(|b| b.abs() > 1e-12).count();
                assert!(nnz >= prev, "support shrank along decreasing lambda");
                prev = nnz;
            }
        }
    }

    fn tiny_graph(edges: &[(&str, &str, f64)]) -> TemporalCausalGraph {
        let vars = vec![Variable::continuous("A"), Variable::continuous("B")];
        let es = edges
            .iter()
            .map(|(s, d, w)| Edge {
                src: s.to_string(),
                dst: d.to_string(),
                lag: 1,
                weight: *w,
            })
            .collect();
        TemporalCausalGraph::new(vars, es).unwrap()
    }

    #[test]
    fn averaging_identical_graphs_is_identity() {
        let g = tiny_graph(&[("A", "B", 0.4)]);
        let avg = average_graphs(&[g.clone(), g.clone()], 1e-3).unwrap();
        assert_eq!(avg.edges(), g.edges());
    }

    #[test]
    fn half_present_edge_averages_to_half() {
        let g1 = tiny_graph(&[("A", "B", 1.0)]);
        let g2 = tiny_graph(&[]);
        let avg = average_graphs(&[g1, g2], 1e-3).unwrap();
        assert_eq!(avg.edges().len(), 1);
        assert!((avg.edges()[0].weight - 0.5).abs() < 1e-12);
    }

    #[test]
    fn averaging_is_permutation_invariant_and_checks_vars() {
        let g1 = tiny_graph(&[("A", "B", 1.0)]);
        let g2 = tiny_graph(&[("B", "A", -0.5)]);
        let a = average_graphs(&[g1.clone(), g2.clone()], 1e-3).unwrap();
        let b = average_graphs(&[g2, g1], 1e-3).unwrap();
        assert_eq!(a.edges(), b.edges());

        let other = TemporalCausalGraph::new(vec![Variable::continuous("C")], vec![]).unwrap();
        assert!(average_graphs(&[tiny_graph(&[]), other], 1e-3).is_err());
    }

    // --- conditioning ---

    use crate::coinrunner::{run_agent, Behaviour, GameConfig};

    #[test]
    fn whole_rollout_in_one_context_is_one_segment() {
        let r = run_agent(Behaviour::Coincollector, 0, 3, 0.0, &GameConfig::default()).unwrap();
        let p = Predicate::parse("true").unwrap();
        let segs = condition_rollout(&r, &p, 0, 1).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), r.frames.len());
    }

    #[test]
    fn flip_with_margin_extends_segments() {
        let r = run_agent(Behaviour::Killer, 0, 11, 0.0, &GameConfig::default()).unwrap();
        // powerup exists on frames [0, k], then never again
        let k = r
            .frames
            .iter()
            .rposition(|f| f.powerup_exists == 1)
            .unwrap();
        let p = Predicate::parse("powerup_exists == 1").unwrap();
        let segs = condition_rollout(&r, &p, 1, 1).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), k + 2); // frames [0, k+1]
        let q = Predicate::parse("powerup_exists == 0").unwrap();
        let segs2 = condition_rollout(&r, &q, 1, 1).unwrap();
        assert_eq!(segs2.len(), 1);
        assert_eq!(segs2[0].len(), r.frames.len() - k); // frames [k, end]
    }

    #[test]
    fn oversized_margin_clips_to_rollout_bounds() {
        let r = run_agent(Behaviour::Coincollector, 0, 5, 0.0, &GameConfig::default()).unwrap();
        let p = Predicate::parse("goldcoin_exists == 1").unwrap();
        let segs = condition_rollout(&r, &p, 10_000, 1).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].len(), r.frames.len());
    }

    #[test]
    fn short_segments_are_dropped() {
        let r = run_agent(Behaviour::Killer, 0, 11, 0.0, &GameConfig::default()).unwrap();
        let p = Predicate::parse("collide_powerup == 1").unwrap(); // single frame
        assert!(condition_rollout(&r, &p, 0, 2).unwrap().is_empty());
        assert_eq!(condition_rollout(&r, &p, 1, 2).unwrap().len(), 1);
    }
}
