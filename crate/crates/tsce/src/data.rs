//! Panel datasets (individuals x time x variables), population statistics,
//! and the synthetic Causal Hans time-series generator.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TsceError};
use crate::graph::{VarKind, Variable};

/// Dense, fully populated panel of `n` individuals over `horizon` time steps.
/// Storage is column-major by variable so per-(variable, t) statistics touch a
/// contiguous slice.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    variables: Vec<Variable>,
    n: usize,
    horizon: usize,
    // index: ((var * horizon) + t) * n + individual
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PopulationStatistic {
    Mean,
    /// Linear-interpolated percentile, p in (0, 100).
    Percentile(f64),
}

impl PopulationStatistic {
    pub fn validate(&self) -> Result<()> {
        if let PopulationStatistic::Percentile(p) = self {
            if !(*p > 0.0 && *p < 100.0) {
                return Err(TsceError::InvalidArgument(format!(
                    "percentile {p} outside (0, 100)"
                )));
            }
        }
        Ok(())
    }
}

impl PanelDataset {
    pub fn new(variables: Vec<Variable>, n: usize, horizon: usize, values: Vec<f64>) -> Result<Self> {
        if horizon == 0 || n == 0 {
            return Err(TsceError::Dataset("empty dataset".into()));
        }
        if values.len() != variables.len() * n * horizon {
            return Err(TsceError::Dataset(format!(
                "value buffer has {} cells, expected {}",
                values.len(),
                variables.len() * n * horizon
            )));
        }
        Ok(PanelDataset {
            variables,
            n,
            horizon,
            values,
        })
    }

    pub fn zeros(variables: Vec<Variable>, n: usize, horizon: usize) -> Result<Self> {
        let len = variables.len() * n * horizon;
        Self::new(variables, n, horizon, vec![0.0; len])
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn var_index(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|v| v.name == name)
            .ok_or_else(|| TsceError::VariableNotFound(name.to_string()))
    }

    fn offset(&self, var: usize, t: usize, individual: usize) -> usize {
        (var * self.horizon + t) * self.n + individual
    }

    pub fn get(&self, individual: usize, t: usize, var: &str) -> Result<f64> {
        let vi = self.var_index(var)?;
        self.check_bounds(individual, t)?;
        Ok(self.values[self.offset(vi, t, individual)])
    }

    pub fn set(&mut self, individual: usize, t: usize, var: &str, value: f64) -> Result<()> {
        let vi = self.var_index(var)?;
        self.check_bounds(individual, t)?;
        let off = self.offset(vi, t, individual);
        self.values[off] = value;
        Ok(())
    }

    fn check_bounds(&self, individual: usize, t: usize) -> Result<()> {
        if individual >= self.n {
            return Err(TsceError::Dataset(format!(
                "individual {individual} out of range (n = {})",
                self.n
            )));
        }
        if t >= self.horizon {
            return Err(TsceError::Dataset(format!(
                "time {t} out of range (horizon = {})",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Column of all individuals at `(var, t)`.
    pub fn column(&self, var: &str, t: usize) -> Result<&[f64]> {
        let vi = self.var_index(var)?;
        if t >= self.horizon {
            return Err(TsceError::Dataset(format!(
                "time {t} out of range (horizon = {})",
                self.horizon
            )));
        }
        let start = self.offset(vi, t, 0);
        Ok(&self.values[start..start + self.n])
    }

    /// Population statistic phi over the n individuals at `(var, t)`.
    pub fn statistic(&self, s: PopulationStatistic, var: &str, t: usize) -> Result<f64> {
        s.validate()?;
        let col = self.column(var, t)?;
        match s {
            PopulationStatistic::Mean => Ok(col.iter().sum::<f64>() / col.len() as f64),
            PopulationStatistic::Percentile(p) => {
                let mut sorted = col.to_vec();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let h = p / 100.0 * (sorted.len() - 1) as f64;
                let lo = h.floor() as usize;
                let hi = h.ceil() as usize;
                let frac = h - lo as f64;
                Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
            }
        }
    }

    /// One row of variable values for `(individual, t)`, keyed by name.
    pub fn row(&self, individual: usize, t: usize) -> Result<HashMap<String, f64>> {
        self.check_bounds(individual, t)?;
        let mut row = HashMap::new();
        for (vi, v) in self.variables.iter().enumerate() {
            row.insert(v.name.clone(), self.values[self.offset(vi, t, individual)]);
        }
        Ok(row)
    }

    /// Binary categorization against a population statistic: 1 iff the value
    /// is strictly above phi, 0 otherwise (equality counts as "not above").
    pub fn classify_vs_statistic(&self, s: PopulationStatistic) -> Result<PanelDataset> {
        s.validate()?;
        let vars: Vec<Variable> = self
            .variables
            .iter()
            .map(|v| Variable::binary(&v.name))
            .collect();
        let mut out = PanelDataset::zeros(vars, self.n, self.horizon)?;
        for (vi, v) in self.variables.iter().enumerate() {
            for t in 0..self.horizon {
                let phi = self.statistic(s, &v.name, t)?;
                for i in 0..self.n {
                    let x = self.values[self.offset(vi, t, i)];
                    let off = out.offset(vi, t, i);
                    out.values[off] = if x > phi { 1.0 } else { 0.0 };
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Causal Hans generator
// ---------------------------------------------------------------------------

/// Configuration for the synthetic Causal Hans panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HansGeneratorConfig {
    pub n: usize,
    pub horizon: usize,
    pub mix_new: f64,
    pub mix_prev: f64,
    pub noise_scale: f64,
    pub age_low: f64,
    pub age_high: f64,
    pub seed: u64,
}

impl HansGeneratorConfig {
    pub fn new(n: usize, horizon: usize, seed: u64) -> Self {
        HansGeneratorConfig {
            n,
            horizon,
            mix_new: 0.4,
            mix_prev: 0.6,
            noise_scale: 0.03,
            age_low: 30.0,
            age_high: 80.0,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.horizon == 0 {
            return Err(TsceError::InvalidArgument(
                "generator needs n >= 1 and horizon >= 1".into(),
            ));
        }
        if (self.mix_new + self.mix_prev - 1.0).abs() > 1e-12 {
            return Err(TsceError::InvalidArgument(format!(
                "mix_new + mix_prev must equal 1, got {}",
                self.mix_new + self.mix_prev
            )));
        }
        if self.noise_scale < 0.0 {
            return Err(TsceError::InvalidArgument("noise_scale must be >= 0".into()));
        }
        if self.age_high <= self.age_low {
            return Err(TsceError::InvalidArgument(
                "age_high must exceed age_low".into(),
            ));
        }
        Ok(())
    }
}

/// Analytic mean trajectories of the structural distributions, used to scale
/// the per-step noise. Returns `(mean_nutrition_star, mean_health_star,
/// mean_mobility_star)` indexed by t.
fn structural_means(cfg: &HansGeneratorConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t_len = cfg.horizon;
    let mean_age0 = (cfg.age_low + cfg.age_high) / 2.0;
    let mut f_star = vec![0.0; t_len];
    let mut h_star = vec![0.0; t_len];
    let mut m_star = vec![0.0; t_len];
    let mut f_mean = vec![0.0; t_len];
    let mut h_mean = vec![0.0; t_len];
    for t in 0..t_len {
        let a = mean_age0 + t as f64;
        f_star[t] = 0.5 * a;
        f_mean[t] = if t == 0 {
            f_star[0]
        } else {
            cfg.mix_new * f_star[t] + cfg.mix_prev * f_mean[t - 1]
        };
        h_star[t] = -0.2 * a + 0.6 * f_mean[t];
        h_mean[t] = if t == 0 {
            h_star[0]
        } else {
            cfg.mix_new * h_star[t] + cfg.mix_prev * h_mean[t - 1]
        };
        m_star[t] = 0.5 * h_mean[t];
    }
    (f_star, h_star, m_star)
}

pub const HANS_VARIABLES: [&str; 4] = ["Age", "Nutrition", "Health", "Mobility"];

/// Generates the Causal Hans panel. Age starts uniform in
/// `[age_low, age_high]` and increases by one per step. Nutrition, Health and
/// Mobility follow their structural assignments, mixed with the previous step
/// (0.4 new / 0.6 previous) and perturbed by Normal(0, mu * noise_scale)
/// noise where mu is the analytic mean of the structural distribution at that
/// step. Bit-identical for identical configs; individuals use independent RNG
/// substreams so generation order does not matter.
pub fn generate_hans(cfg: &HansGeneratorConfig) -> Result<PanelDataset> {
    cfg.validate()?;
    let vars: Vec<Variable> = HANS_VARIABLES
        .iter()
        .map(|n| Variable::continuous(n))
        .collect();
    let mut d = PanelDataset::zeros(vars, cfg.n, cfg.horizon)?;
    let (f_star_mu, h_star_mu, m_star_mu) = structural_means(cfg);
    let age_dist = Uniform::new(cfg.age_low, cfg.age_high);

    for ind in 0..cfg.n {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(ind as u64);
        let noise = |mu: f64, rng: &mut ChaCha8Rng| -> f64 {
            let sd = mu.abs() * cfg.noise_scale;
            if sd == 0.0 {
                0.0
            } else {
                Normal::new(0.0, sd).unwrap().sample(rng)
            }
        };
        let (mut f_prev, mut h_prev, mut m_prev) = (0.0, 0.0, 0.0);
        let a0 = age_dist.sample(&mut rng);
        for t in 0..cfg.horizon {
            let a = a0 + t as f64;
            let f_struct = 0.5 * a;
            let f = if t == 0 {
                f_struct + noise(f_star_mu[t], &mut rng)
            } else {
                cfg.mix_new * f_struct + cfg.mix_prev * f_prev + noise(f_star_mu[t], &mut rng)
            };
            let h_struct = -0.2 * a + 0.6 * f;
            let h = if t == 0 {
                h_struct + noise(h_star_mu[t], &mut rng)
            } else {
                cfg.mix_new * h_struct + cfg.mix_prev * h_prev + noise(h_star_mu[t], &mut rng)
            };
            let m_struct = 0.5 * h;
            let m = if t == 0 {
                m_struct + noise(m_star_mu[t], &mut rng)
            } else {
                cfg.mix_new * m_struct + cfg.mix_prev * m_prev + noise(m_star_mu[t], &mut rng)
            };
            d.set(ind, t, "Age", a)?;
            d.set(ind, t, "Nutrition", f)?;
            d.set(ind, t, "Health", h)?;
            d.set(ind, t, "Mobility", m)?;
            f_prev = f;
            h_prev = h;
            m_prev = m;
        }
    }
    Ok(d)
}

/// Uniform random panel over the given variables; used by tests and the
/// static-compatibility checks.
pub fn random_panel(
    variables: Vec<Variable>,
    n: usize,
    horizon: usize,
    seed: u64,
) -> Result<PanelDataset> {
    let mut d = PanelDataset::zeros(variables.clone(), n, horizon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ind in 0..n {
        for t in 0..horizon {
            for v in &variables {
                let x = match v.kind {
                    VarKind::Continuous => rng.gen_range(-10.0..10.0),
                    VarKind::Binary => {
                        if rng.gen_bool(0.5) {
                            1.0
                        } else {
                            0.0
                        }
                    }
                };
                d.set(ind, t, &v.name, x)?;
            }
        }
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// CSV interface: header `individual,t,<var1>,<var2>,...`
// ---------------------------------------------------------------------------

pub fn write_csv<W: Write>(d: &PanelDataset, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["individual".to_string(), "t".to_string()];
    header.extend(d.variables.iter().map(|v| v.name.clone()));
    wtr.write_record(&header)?;
    for ind in 0..d.n {
        for t in 0..d.horizon {
            let mut rec = vec![ind.to_string(), t.to_string()];
            for v in &d.variables {
                rec.push(format!("{}", d.get(ind, t, &v.name)?));
            }
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<PanelDataset> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "individual" || &header[1] != "t" {
        return Err(TsceError::Dataset(
            "expected CSV header starting with individual,t".into(),
        ));
    }
    let variables: Vec<Variable> = header
        .iter()
        .skip(2)
        .map(Variable::continuous)
        .collect();
    let mut cells: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    let mut max_ind = 0usize;
    let mut max_t = 0usize;
    for rec in rdr.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(TsceError::Dataset("ragged CSV row".into()));
        }
        let ind: usize = rec[0]
            .parse()
            .map_err(|_| TsceError::Dataset(format!("bad individual id {:?}", &rec[0])))?;
        let t: usize = rec[1]
            .parse()
            .map_err(|_| TsceError::Dataset(format!("bad time index {:?}", &rec[1])))?;
        let vals: Vec<f64> = rec
            .iter()
            .skip(2)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| TsceError::Dataset(format!("bad value {s:?}")))
            })
            .collect::<Result<_>>()?;
        if cells.insert((ind, t), vals).is_some() {
            return Err(TsceError::Dataset(format!(
                "duplicate row for individual {ind}, t {t}"
            )));
        }
        max_ind = max_ind.max(ind);
        max_t = max_t.max(t);
    }
    let n = max_ind + 1;
    let horizon = max_t + 1;
    if cells.len() != n * horizon {
        return Err(TsceError::Dataset(format!(
            "dataset is not rectangular: {} rows for {} individuals x {} steps",
            cells.len(),
            n,
            horizon
        )));
    }
    let mut d = PanelDataset::zeros(variables.clone(), n, horizon)?;
    for ((ind, t), vals) in cells {
        for (v, x) in variables.iter().zip(vals) {
            d.set(ind, t, &v.name, x)?;
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mean_of_constant_column() {
        let d = PanelDataset::new(
            vec![Variable::continuous("x")],
            4,
            1,
            vec![5.0, 5.0, 5.0, 5.0],
        )
        .unwrap();
        assert_eq!(d.statistic(PopulationStatistic::Mean, "x", 0).unwrap(), 5.0);
    }

    #[test]
    fn interpolated_median() {
        let d = PanelDataset::new(
            vec![Variable::continuous("x")],
            4,
            1,
            vec![3.0, 1.0, 4.0, 2.0],
        )
        .unwrap();
        assert_eq!(
            d.statistic(PopulationStatistic::Percentile(50.0), "x", 0)
                .unwrap(),
            2.5
        );
    }

    #[test]
    fn percentile_matches_sort_oracle() {
        let vals = vec![9.0, 2.0, 7.0, 1.0, 5.0, 8.0, 3.0];
        let d = PanelDataset::new(vec![Variable::continuous("x")], 7, 1, vals.clone()).unwrap();
        let mut sorted = vals;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for p in [10.0, 25.0, 60.0, 90.0] {
            let h = p / 100.0 * (sorted.len() - 1) as f64;
            let lo = h.floor() as usize;
            let expected = sorted[lo] + (sorted[h.ceil() as usize] - sorted[lo]) * (h - lo as f64);
            assert_abs_diff_eq!(
                d.statistic(PopulationStatistic::Percentile(p), "x", 0).unwrap(),
                expected,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let d = PanelDataset::new(vec![Variable::continuous("x")], 1, 1, vec![1.0]).unwrap();
        assert!(d.statistic(PopulationStatistic::Mean, "x", 1).is_err());
        assert!(d.statistic(PopulationStatistic::Percentile(0.0), "x", 0).is_err());
    }

    #[test]
    fn hans_noise_free_matches_structural_equations() {
        let mut cfg = HansGeneratorConfig::new(1, 3, 7).with_noise(0.0);
        cfg.age_low = 50.0;
        cfg.age_high = 50.0 + 1e-9;
        let d = generate_hans(&cfg).unwrap();
        let a0 = d.get(0, 0, "Age").unwrap();
        assert_abs_diff_eq!(a0, 50.0, epsilon = 1e-6);
        assert_abs_diff_eq!(d.get(0, 0, "Nutrition").unwrap(), 25.0, epsilon = 1e-6);
        // H_0 = -0.2*50 + 0.6*25 = 5.0
        assert_abs_diff_eq!(d.get(0, 0, "Health").unwrap(), 5.0, epsilon = 1e-6);
        assert_abs_diff_eq!(d.get(0, 0, "Mobility").unwrap(), 2.5, epsilon = 1e-6);
        // Age increases by exactly one per step.
        assert_abs_diff_eq!(d.get(0, 1, "Age").unwrap(), a0 + 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.get(0, 2, "Age").unwrap(), a0 + 2.0, epsilon = 1e-12);
    }

    #[test]
    fn hans_noise_free_matches_scalar_recurrence_oracle() {
        let cfg = HansGeneratorConfig::new(5, 10, 11).with_noise(0.0);
        let d = generate_hans(&cfg).unwrap();
        for ind in 0..5 {
            let a0 = d.get(ind, 0, "Age").unwrap();
            let (mut f, mut h, mut m) = (0.0f64, 0.0f64, 0.0f64);
            for t in 0..10 {
                let a = a0 + t as f64;
                let f_new = 0.5 * a;
                f = if t == 0 { f_new } else { 0.4 * f_new + 0.6 * f };
                let h_new = -0.2 * a + 0.6 * f;
                h = if t == 0 { h_new } else { 0.4 * h_new + 0.6 * h };
                let m_new = 0.5 * h;
                m = if t == 0 { m_new } else { 0.4 * m_new + 0.6 * m };
                assert_abs_diff_eq!(d.get(ind, t, "Nutrition").unwrap(), f, epsilon = 1e-12);
                assert_abs_diff_eq!(d.get(ind, t, "Health").unwrap(), h, epsilon = 1e-12);
                assert_abs_diff_eq!(d.get(ind, t, "Mobility").unwrap(), m, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn hans_population_means() {
        let cfg = HansGeneratorConfig::new(10_000, 2, 42);
        let d = generate_hans(&cfg).unwrap();
        let mean_age = d.statistic(PopulationStatistic::Mean, "Age", 0).unwrap();
        assert!((mean_age - 55.0).abs() < 0.5, "mean age {mean_age}");
        let mean_f = d
            .statistic(PopulationStatistic::Mean, "Nutrition", 0)
            .unwrap();
        assert!((mean_f - 27.5).abs() < 0.3, "mean nutrition {mean_f}");
    }

    #[test]
    fn generator_is_reproducible() {
        let cfg = HansGeneratorConfig::new(20, 5, 123);
        let a = generate_hans(&cfg).unwrap();
        let b = generate_hans(&cfg).unwrap();
        assert_eq!(a.values, b.values);
        let c = generate_hans(&HansGeneratorConfig::new(20, 5, 124)).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn classify_against_statistic() {
        let d = PanelDataset::new(
            vec![Variable::continuous("x")],
            4,
            1,
            vec![26.2, 30.0, 30.0, 33.8],
        )
        .unwrap();
        // mean = 30; 26.2 -> 0, equality -> 0, above -> 1
        let b = d.classify_vs_statistic(PopulationStatistic::Mean).unwrap();
        assert_eq!(b.get(0, 0, "x").unwrap(), 0.0);
        assert_eq!(b.get(1, 0, "x").unwrap(), 0.0);
        assert_eq!(b.get(3, 0, "x").unwrap(), 1.0);
    }

    #[test]
    fn classify_splits_roughly_in_half_under_noise() {
        let cfg = HansGeneratorConfig::new(4000, 1, 9);
        let d = generate_hans(&cfg).unwrap();
        let b = d.classify_vs_statistic(PopulationStatistic::Mean).unwrap();
        let ones: f64 = b.column("Mobility", 0).unwrap().iter().sum();
        let frac = ones / 4000.0;
        assert!((frac - 0.5).abs() < 0.05, "fraction above mean {frac}");
    }

    #[test]
    fn mean_statistic_is_linear_in_scaling() {
        let cfg = HansGeneratorConfig::new(50, 3, 5);
        let d = generate_hans(&cfg).unwrap();
        let mut scaled = d.clone();
        for v in scaled.values.iter_mut() {
            *v *= 3.0;
        }
        let m1 = d.statistic(PopulationStatistic::Mean, "Health", 2).unwrap();
        let m2 = scaled
            .statistic(PopulationStatistic::Mean, "Health", 2)
            .unwrap();
        assert_abs_diff_eq!(m2, 3.0 * m1, epsilon = 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = HansGeneratorConfig::new(3, 4, 77);
        let d = generate_hans(&cfg).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let d2 = read_csv(buf.as_slice()).unwrap();
        assert_eq!(d2.n(), 3);
        assert_eq!(d2.horizon(), 4);
        for ind in 0..3 {
            for t in 0..4 {
                for v in HANS_VARIABLES {
                    assert_abs_diff_eq!(
                        d.get(ind, t, v).unwrap(),
                        d2.get(ind, t, v).unwrap(),
                        epsilon = 1e-9
                    );
                }
            }
        }
    }

    #[test]
    fn ragged_csv_is_rejected() {
        let text = "individual,t,x\n0,0,1.0\n0,1,2.0\n1,0,3.0\n";
        assert!(read_csv(text.as_bytes()).is_err());
    }
}
