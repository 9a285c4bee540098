//! The synthetic generator.
//!
//! Every applicant gets a latent quality `z ~ N(0, 1)`. A stage's new
//! numeric features are mixtures `a * z + (1 - a) * noise * eps` with `a`
//! the stage's informativeness; stages collecting at least four features
//! devote their last three columns to a one-hot block driven by the same
//! latent. Advancement at a stage goes to the top `survival_rate` fraction
//! by `z` plus fresh per-stage decision noise, so labels correlate with the
//! features but are not a deterministic function of them, and survivors of
//! many stages are increasingly hard to tell apart. A positive `drift`
//! shifts feature means (and widens the noise) cohort over cohort while
//! leaving the decision mechanism alone.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{FunnelConfig, FunnelDataset, Phase, StageData};
use crate::error::Result;
use crate::rng::{derive_seed, stream};

const TAG_DIRECTIONS: u64 = 0xD1;
const TAG_SIGNS: u64 = 0xD2;
const TAG_COHORT_BASE: u64 = 0xC0;
const TAG_LATENT: u64 = 1;
const TAG_FEATURES: u64 = 2;
const TAG_DECISIONS: u64 = 3;

/// Per-phase decision noise as a fraction of `config.noise`. Conversion
/// attrition is mostly self-selection (noisy in quality), evaluation
/// decisions track quality closely; the contrast keeps late-stage survivor
/// pools diverse enough that their labels stay predictable from features.
const CONVERSION_DECISION_NOISE: f64 = 0.8;
const EVALUATION_DECISION_NOISE: f64 = 0.15;
/// Cohort noise widening per unit of drift.
const DRIFT_NOISE_FACTOR: f64 = 0.5;
/// Tertile split points of a standard normal.
const TERTILE: f64 = 0.4307272992954576;

/// Generates cohort 0.
pub fn generate(config: &FunnelConfig) -> Result<FunnelDataset> {
    generate_cohort(config, 0)
}

/// Generates one cohort of the funnel.
///
/// Cohorts share the per-feature drift directions but draw fresh applicants;
/// cohort `c` has its numeric feature means shifted by `drift * c` along
/// those directions and its noise scale widened accordingly.
pub fn generate_cohort(config: &FunnelConfig, cohort: u32) -> Result<FunnelDataset> {
    config.validate()?;
    let m0 = config.initial_population;
    let n_total = config.total_features();
    let cohort_seed = derive_seed(config.seed, TAG_COHORT_BASE + cohort as u64);

    // Drift directions and loading signs are properties of the process, not
    // of the cohort. Random loading signs make the latent unrecoverable by
    // naive column averaging: a classifier has to learn per-column signs,
    // which takes samples.
    let mut dir_rng = stream(config.seed, TAG_DIRECTIONS);
    let directions: Vec<f64> = (0..n_total)
        .map(|_| if dir_rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let mut sign_rng = stream(config.seed, TAG_SIGNS);
    let signs: Vec<f64> = (0..n_total)
        .map(|_| if sign_rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let shift = config.drift * cohort as f64;
    let cohort_noise = config.noise * (1.0 + DRIFT_NOISE_FACTOR * config.drift * cohort as f64);

    let mut z_rng = stream(cohort_seed, TAG_LATENT);
    let latent: Vec<f64> = (0..m0).map(|_| StandardNormal.sample(&mut z_rng)).collect();

    // Full feature matrix for all applicants; stages slice survivor rows out
    // of it, which makes the prefix invariant hold by construction.
    let mut all = Array2::<f64>::zeros((m0, n_total));
    let mut column_names = Vec::with_capacity(n_total);
    let mut indicator_columns = Vec::with_capacity(n_total);
    let mut feat_rng = stream(cohort_seed, TAG_FEATURES);
    let noise_dist = Normal::new(0.0, cohort_noise).expect("positive noise");

    let mut col = 0usize;
    for spec in &config.stages {
        let k = spec.new_features;
        let a = spec.informativeness;
        let cat_cols = if k >= 4 { 3 } else { 0 };
        for j in 0..k - cat_cols {
            for i in 0..m0 {
                let eps: f64 = noise_dist.sample(&mut feat_rng);
                all[(i, col)] =
                    signs[col] * a * latent[i] + (1.0 - a) * eps + shift * directions[col];
            }
            column_names.push(format!("{}_f{}", spec.name, j));
            indicator_columns.push(false);
            col += 1;
        }
        if cat_cols > 0 {
            // One-hot block from tertiles of a drift-shifted latent score.
            let u_sd = (a * a + cohort_noise * cohort_noise).sqrt();
            let lo = -TERTILE * u_sd;
            let hi = TERTILE * u_sd;
            for i in 0..m0 {
                let eta: f64 = noise_dist.sample(&mut feat_rng);
                let u = signs[col] * a * latent[i] + eta + shift * directions[col];
                let cat = if u < lo {
                    0
                } else if u < hi {
                    1
                } else {
                    2
                };
                all[(i, col + cat)] = 1.0;
            }
            for suffix in ["a", "b", "c"] {
                column_names.push(format!("{}_cat_{}", spec.name, suffix));
                indicator_columns.push(true);
            }
            col += 3;
        }
    }
    debug_assert_eq!(col, n_total);

    // Walk the funnel: select the top fraction by latent plus decision noise.
    let mut decision_rng = stream(cohort_seed, TAG_DECISIONS);
    let mut survivors: Vec<usize> = (0..m0).collect();
    let mut stages = Vec::with_capacity(config.stages.len());
    let mut cum_cols = 0usize;

    for spec in &config.stages {
        let noise_factor = match spec.phase {
            Phase::Conversion => CONVERSION_DECISION_NOISE,
            Phase::Evaluation => EVALUATION_DECISION_NOISE,
        };
        let decision_noise = Normal::new(0.0, config.noise * noise_factor).expect("positive noise");
        cum_cols += spec.new_features;
        let m = survivors.len();
        let mut scores: Vec<(usize, f64)> = survivors
            .iter()
            .map(|&i| {
                let eps: f64 = decision_noise.sample(&mut decision_rng);
                (i, latent[i] + eps)
            })
            .collect();
        let k = ((spec.survival_rate * m as f64).round() as usize).clamp(1, m);
        // Sort by score descending; ties broken by applicant index for
        // determinism.
        scores.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let advancing: std::collections::BTreeSet<usize> =
            scores[..k].iter().map(|&(i, _)| i).collect();

        let mut features = Array2::zeros((m, cum_cols));
        let mut labels = Array1::zeros(m);
        let mut ids = Vec::with_capacity(m);
        for (row, &i) in survivors.iter().enumerate() {
            features
                .row_mut(row)
                .assign(&all.row(i).slice(ndarray::s![..cum_cols]));
            labels[row] = if advancing.contains(&i) { 1.0 } else { 0.0 };
            ids.push(i as u64);
        }
        stages.push(StageData {
            name: spec.name.clone(),
            phase: spec.phase,
            ids,
            features,
            labels,
            column_names: column_names[..cum_cols].to_vec(),
            indicator_columns: indicator_columns[..cum_cols].to_vec(),
        });
        survivors.retain(|i| advancing.contains(i));
    }

    let dataset = FunnelDataset::new(stages, cohort);
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funnelgen::{Phase, StageSpec};

    fn tiny(seed: u64) -> FunnelConfig {
        FunnelConfig {
            stages: vec![
                StageSpec::new("first", 4, 0.6, 0.5, Phase::Conversion),
                StageSpec::new("second", 5, 0.5, 0.5, Phase::Evaluation),
            ],
            initial_population: 200,
            drift: 0.0,
            noise: 1.0,
            seed,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&tiny(9)).unwrap();
        let b = generate(&tiny(9)).unwrap();
        assert_eq!(a, b);
        let c = generate(&tiny(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn survival_one_keeps_everyone_with_positive_labels() {
        let mut cfg = tiny(1);
        for s in &mut cfg.stages {
            s.survival_rate = 1.0;
        }
        let data = generate(&cfg).unwrap();
        for q in 0..data.stage_count() {
            assert_eq!(data.stage(q).unwrap().rows(), 200);
            assert!(data.labels(q).unwrap().iter().all(|&y| y == 1.0));
        }
    }

    #[test]
    fn survivor_counts_follow_rates_exactly() {
        let data = generate(&tiny(2)).unwrap();
        assert_eq!(data.stage(0).unwrap().rows(), 200);
        assert_eq!(data.stage(0).unwrap().positives(), 120);
        assert_eq!(data.stage(1).unwrap().rows(), 120);
        assert_eq!(data.stage(1).unwrap().positives(), 60);
    }

    #[test]
    fn monotone_funnel_and_growing_columns() {
        let data = generate(&FunnelConfig::compact(5)).unwrap();
        for q in 1..data.stage_count() {
            assert!(data.stage(q).unwrap().rows() < data.stage(q - 1).unwrap().rows());
            assert!(data.stage(q).unwrap().cols() > data.stage(q - 1).unwrap().cols());
        }
    }

    #[test]
    fn onehot_blocks_are_exclusive_indicators() {
        let data = generate(&tiny(3)).unwrap();
        let s0 = data.stage(0).unwrap();
        // 4 new features -> last 3 are a one-hot block.
        assert_eq!(s0.indicator_columns, vec![false, true, true, true]);
        for row in s0.features.rows() {
            let ones: f64 = row.slice(ndarray::s![1..4]).sum();
            assert_eq!(ones, 1.0);
        }
    }

    /// Point-biserial correlation between a column and the labels.
    fn point_biserial(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut cov = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for (&a, &b) in x.iter().zip(y.iter()) {
            cov += (a - mx) * (b - my);
            vx += (a - mx) * (a - mx);
            vy += (b - my) * (b - my);
        }
        if vx == 0.0 || vy == 0.0 {
            0.0
        } else {
            cov / (vx.sqrt() * vy.sqrt())
        }
    }

    fn best_feature_correlation(cfg: &FunnelConfig, stage: usize) -> f64 {
        let data = generate(cfg).unwrap();
        let s = data.stage(stage).unwrap();
        let y: Vec<f64> = s.labels.iter().copied().collect();
        (0..s.cols())
            .map(|c| {
                let col: Vec<f64> = s.features.column(c).iter().copied().collect();
                point_biserial(&col, &y).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn informativeness_monotonically_improves_best_feature() {
        let mut prev = -1.0;
        for a in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let mut cfg = tiny(11);
            cfg.initial_population = 4000;
            cfg.stages[0].informativeness = a;
            let corr = best_feature_correlation(&cfg, 0);
            assert!(
                corr >= prev - 1e-9,
                "correlation dropped from {prev} to {corr} at informativeness {a}"
            );
            prev = corr;
        }
    }

    #[test]
    fn zero_informativeness_means_no_signal() {
        // Permutation oracle: the observed best-feature correlation must sit
        // inside the null distribution obtained by shuffling labels.
        use rand::seq::SliceRandom;
        let mut cfg = tiny(13);
        cfg.initial_population = 1500;
        for s in &mut cfg.stages {
            s.informativeness = 0.0;
        }
        let data = generate(&cfg).unwrap();
        let s0 = data.stage(0).unwrap();
        let y: Vec<f64> = s0.labels.iter().copied().collect();
        let observed = best_feature_correlation(&cfg, 0);

        let mut rng = crate::rng::stream(99, 0);
        let mut null_max = Vec::new();
        for _ in 0..99 {
            let mut perm = y.clone();
            perm.shuffle(&mut rng);
            let best = (0..s0.cols())
                .map(|c| {
                    let col: Vec<f64> = s0.features.column(c).iter().copied().collect();
                    point_biserial(&col, &perm).abs()
                })
                .fold(0.0, f64::max);
            null_max.push(best);
        }
        null_max.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Not beyond the null's 95th percentile.
        assert!(observed <= null_max[94] * 1.5 + 0.02, "observed {observed}");
    }

    #[test]
    fn drift_shifts_numeric_feature_means() {
        let mut cfg = tiny(17);
        cfg.initial_population = 5000;
        cfg.drift = 0.4;
        let a = generate_cohort(&cfg, 0).unwrap();
        let b = generate_cohort(&cfg, 1).unwrap();
        let sa = a.stage(0).unwrap();
        let sb = b.stage(0).unwrap();
        for c in 0..sa.cols() {
            if sa.indicator_columns[c] {
                continue;
            }
            let ma = sa.features.column(c).mean().unwrap();
            let mb = sb.features.column(c).mean().unwrap();
            let va = sa
                .features
                .column(c)
                .mapv(|v| (v - ma) * (v - ma))
                .mean()
                .unwrap();
            let vb = sb
                .features
                .column(c)
                .mapv(|v| (v - mb) * (v - mb))
                .mean()
                .unwrap();
            let sigma = (va / sa.rows() as f64 + vb / sb.rows() as f64).sqrt();
            let observed_shift = (mb - ma).abs();
            assert!(
                (observed_shift - cfg.drift).abs() <= 3.0 * sigma,
                "column {c}: shift {observed_shift} vs drift {}",
                cfg.drift
            );
        }
    }
}
