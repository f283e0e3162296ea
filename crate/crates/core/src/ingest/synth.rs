//! Synthetic contract corpus calibrated to the published marginals.
//!
//! Categorical fields are drawn from the frequency tables in
//! [`super::marginals`]; numeric metrics are lognormal with the tabulated
//! mean and standard deviation. The spread is produced by a planted pricing
//! function whose coefficients are returned in the manifest, so the
//! achievable accuracy is known by construction.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::marginals;
use super::ContractRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_contracts: usize,
    pub seed: u64,
    pub start_year: i32,
    pub end_year: i32,
    /// Scale of the per-peril and per-cedent price effects; 0 disables them.
    pub entity_effect_scale: f64,
    pub noise_std: f64,
}

impl SynthConfig {
    pub fn new(n_contracts: usize, seed: u64) -> Self {
        SynthConfig { n_contracts, seed, start_year: 1999, end_year: 2021, entity_effect_scale: 1.0, noise_std: 0.005 }
    }

    /// Pricing depends on contract metrics only.
    pub fn without_entity_effects(mut self) -> Self {
        self.entity_effect_scale = 0.0;
        self
    }
}

/// Coefficients of the planted spread function
/// `spread = intercept + el*EL + pfl*PFL + cel*CEL + mean(peril effects)
///  + cedent effect + season*sin(2*pi*month/12) + N(0, noise_std^2)`,
/// floored at `min_spread`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedCoefficients {
    pub intercept: f64,
    pub expected_loss: f64,
    pub prob_first_loss: f64,
    pub conditional_expected_loss: f64,
    pub season_amplitude: f64,
    pub noise_std: f64,
    pub min_spread: f64,
    pub peril_effects: BTreeMap<String, f64>,
    pub cedent_effects: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub coefficients: PlantedCoefficients,
    /// `column -> level -> count` tables the categorical draws used.
    pub marginals: BTreeMap<String, BTreeMap<String, u32>>,
    /// Variance share of the noise-free planted signal in the generated
    /// spreads, i.e. the R^2 an oracle would reach.
    pub planted_r2: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub records: Vec<ContractRecord>,
    pub manifest: SynthManifest,
}

const EL_COEF: f64 = 80.0;
const PFL_COEF: f64 = 0.5;
const CEL_COEF: f64 = 0.2;
const SEASON_AMPLITUDE: f64 = 0.005;
const PERIL_EFFECT_STD: f64 = 0.02;
const CEDENT_EFFECT_STD: f64 = 0.015;
const MIN_SPREAD: f64 = 0.001;

struct Categorical<'a> {
    levels: Vec<&'a str>,
    weights: Vec<f64>,
}

impl<'a> Categorical<'a> {
    fn new(table: &[(&'a str, u32)]) -> Self {
        Categorical {
            levels: table.iter().map(|&(l, _)| l).collect(),
            weights: table.iter().map(|&(_, c)| f64::from(c)).collect(),
        }
    }

    fn one<R: Rng>(&self, rng: &mut R) -> &'a str {
        let idx = WeightedIndex::new(&self.weights).expect("positive weights");
        self.levels[idx.sample(rng)]
    }

    /// Table for multi-valued columns. Drawing without replacement pulls
    /// every level's slot share toward uniform, so the weights are rescaled
    /// by a few fixed-point passes until simulated slot shares match the
    /// table.
    fn for_slots(table: &[(&'a str, u32)], extra_mean: f64, cap: usize) -> Self {
        let mut cat = Self::new(table);
        let total: f64 = cat.weights.iter().sum();
        let target: Vec<f64> = cat.weights.iter().map(|w| w / total).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0x51075);
        for _ in 0..8 {
            let mut hits = vec![0.0f64; target.len()];
            let mut slots = 0.0f64;
            for _ in 0..20_000 {
                for level in cat.distinct_idx(count(&mut rng, extra_mean, cap), &mut rng) {
                    hits[level] += 1.0;
                    slots += 1.0;
                }
            }
            for ((w, h), t) in cat.weights.iter_mut().zip(&hits).zip(&target) {
                let share = (h / slots).max(1e-6);
                *w *= t / share;
            }
        }
        cat
    }

    /// `k` distinct levels, drawn sequentially without replacement.
    fn distinct<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<&'a str> {
        self.distinct_idx(k, rng).into_iter().map(|i| self.levels[i]).collect()
    }

    fn distinct_idx<R: Rng>(&self, k: usize, rng: &mut R) -> Vec<usize> {
        let mut w = self.weights.clone();
        let mut out = Vec::with_capacity(k);
        for _ in 0..k.min(self.levels.len()) {
            let idx = WeightedIndex::new(&w).expect("positive weights").sample(rng);
            out.push(idx);
            w[idx] = 0.0;
            if w.iter().all(|&x| x == 0.0) {
                break;
            }
        }
        out
    }
}

fn lognormal(mean: f64, std: f64) -> LogNormal<f64> {
    let sigma2 = (1.0 + (std / mean).powi(2)).ln();
    LogNormal::new(mean.ln() - sigma2 / 2.0, sigma2.sqrt()).expect("valid lognormal")
}

fn count<R: Rng>(rng: &mut R, extra_mean: f64, cap: usize) -> usize {
    let extra =
        if extra_mean > 0.0 { Poisson::new(extra_mean).expect("positive mean").sample(rng) as usize } else { 0 };
    (1 + extra).min(cap)
}

fn table_map(table: &[(&str, u32)]) -> BTreeMap<String, u32> {
    table.iter().map(|&(l, c)| (l.to_string(), c)).collect()
}

/// Generates `config.n_contracts` records. Identical configs give identical
/// output.
pub fn synth_dataset(config: &SynthConfig) -> SynthOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let rating = Categorical::new(marginals::SP_RATING);
    let trigger = Categorical::new(marginals::TRIGGER_TYPE);
    let modeler = Categorical::new(marginals::RISK_MODELER);
    let peril = Categorical::for_slots(marginals::PERIL, 1.36, 6);
    let underwriter = Categorical::for_slots(marginals::UNDERWRITER, 0.65, 4);
    let country = Categorical::for_slots(marginals::COUNTRY, 0.52, 4);
    let cedent = Categorical::new(marginals::CEDENT);
    let states: BTreeMap<&str, Categorical> =
        marginals::STATE_PROVINCE.iter().map(|&(c, t)| (c, Categorical::new(t))).collect();

    let scale = config.entity_effect_scale;
    let peril_normal = Normal::new(0.0, PERIL_EFFECT_STD).expect("valid normal");
    let cedent_normal = Normal::new(0.0, CEDENT_EFFECT_STD).expect("valid normal");
    let peril_effects: BTreeMap<String, f64> =
        marginals::PERIL.iter().map(|&(l, _)| (l.to_string(), scale * peril_normal.sample(&mut rng))).collect();
    let cedent_effects: BTreeMap<String, f64> =
        marginals::CEDENT.iter().map(|&(l, _)| (l.to_string(), scale * cedent_normal.sample(&mut rng))).collect();

    let (el_mean, el_std) = marginals::EXPECTED_LOSS;
    let (pfl_mean, pfl_std) = marginals::PROB_FIRST_LOSS;
    let (pe_mean, pe_std) = marginals::PROB_EXHAUST;
    let (cel_mean, cel_std) = marginals::CONDITIONAL_EXPECTED_LOSS;
    let (amt_mean, amt_std) = marginals::ISSUE_AMOUNT_MUSD;
    let el_dist = lognormal(el_mean, el_std);
    let pfl_dist = lognormal(pfl_mean, pfl_std);
    let pe_dist = lognormal(pe_mean, pe_std);
    let cel_dist = lognormal(cel_mean, cel_std);
    let amt_dist = lognormal(amt_mean, amt_std);
    let noise = Normal::new(0.0, config.noise_std.max(0.0)).expect("valid normal");

    let intercept = marginals::SPREAD_PREMIUM.0 - EL_COEF * el_mean - PFL_COEF * pfl_mean - CEL_COEF * cel_mean;

    // issuance grows over time
    let years: Vec<i32> = (config.start_year..=config.end_year).collect();
    let year_weights: Vec<f64> = (0..years.len()).map(|i| 3.0 + i as f64).collect();
    let year_idx = WeightedIndex::new(&year_weights).expect("positive weights");
    let terms = [(12.0, 10.0), (24.0, 20.0), (36.0, 40.0), (48.0, 20.0), (60.0, 10.0)];
    let term_idx = WeightedIndex::new(terms.iter().map(|t| t.1)).expect("positive weights");

    let mut drafts = Vec::with_capacity(config.n_contracts);
    let mut signal = Vec::with_capacity(config.n_contracts);
    for _ in 0..config.n_contracts {
        let issue_year = years[year_idx.sample(&mut rng)];
        let issue_month = rng.random_range(1..=12u32);
        let perils: Vec<String> =
            peril.distinct(count(&mut rng, 1.36, 6), &mut rng).into_iter().map(str::to_string).collect();
        let countries: Vec<&str> = country.distinct(count(&mut rng, 0.52, 4), &mut rng);
        let mut states_provinces = Vec::new();
        for c in &countries {
            if let Some(table) = states.get(c) {
                if rng.random::<f64>() < 0.6 {
                    let k = count(&mut rng, 0.8, 5);
                    states_provinces.extend(table.distinct(k, &mut rng).into_iter().map(str::to_string));
                }
            }
        }
        let triggers = if rng.random::<f64>() < 0.035 { 2 } else { 1 };
        let trigger_types: Vec<String> = trigger.distinct(triggers, &mut rng).into_iter().map(str::to_string).collect();
        let underwriters: Vec<String> =
            underwriter.distinct(count(&mut rng, 0.65, 4), &mut rng).into_iter().map(str::to_string).collect();
        let ced = cedent.one(&mut rng).to_string();

        let expected_loss = el_dist.sample(&mut rng);
        let prob_first_loss = pfl_dist.sample(&mut rng);
        let prob_exhaust = pe_dist.sample(&mut rng);
        let conditional_expected_loss = cel_dist.sample(&mut rng);

        let peril_effect = perils.iter().map(|p| peril_effects[p]).sum::<f64>() / perils.len() as f64;
        let season = SEASON_AMPLITUDE * (2.0 * PI * f64::from(issue_month) / 12.0).sin();
        let planted = intercept
            + EL_COEF * expected_loss
            + PFL_COEF * prob_first_loss
            + CEL_COEF * conditional_expected_loss
            + peril_effect
            + cedent_effects[&ced]
            + season;
        let spread = (planted + noise.sample(&mut rng)).max(MIN_SPREAD);
        signal.push(planted);

        drafts.push(ContractRecord {
            contract_id: String::new(),
            issue_year,
            issue_month,
            issue_amount_musd: amt_dist.sample(&mut rng),
            spread_premium: spread,
            expected_loss,
            prob_first_loss,
            prob_exhaust,
            conditional_expected_loss,
            sp_rating: rating.one(&mut rng).to_string(),
            trigger_types,
            risk_modeler: modeler.one(&mut rng).to_string(),
            perils,
            countries: countries.into_iter().map(str::to_string).collect(),
            states_provinces,
            cedent: ced,
            underwriters,
            exposure_term_months: terms[term_idx.sample(&mut rng)].0,
        });
    }

    // chronological ids
    let mut order: Vec<usize> = (0..drafts.len()).collect();
    order.sort_by_key(|&i| (drafts[i].issue_year, drafts[i].issue_month, i));
    let width = config.n_contracts.to_string().len().max(3);
    let mut records = Vec::with_capacity(drafts.len());
    let mut planted = Vec::with_capacity(drafts.len());
    for (k, &i) in order.iter().enumerate() {
        let mut r = drafts[i].clone();
        r.contract_id = format!("CAT_CON{:0width$}", k + 1);
        planted.push(signal[i]);
        records.push(r);
    }

    let spreads: Vec<f64> = records.iter().map(|r| r.spread_premium).collect();
    let planted_r2 = crate::rgcn::r2_score(&planted, &spreads).unwrap_or(f64::NAN);

    let mut marg = BTreeMap::new();
    marg.insert("sp_rating".to_string(), table_map(marginals::SP_RATING));
    marg.insert("trigger_types".to_string(), table_map(marginals::TRIGGER_TYPE));
    marg.insert("risk_modeler".to_string(), table_map(marginals::RISK_MODELER));
    marg.insert("perils".to_string(), table_map(marginals::PERIL));
    marg.insert("underwriters".to_string(), table_map(marginals::UNDERWRITER));
    marg.insert("countries".to_string(), table_map(marginals::COUNTRY));
    marg.insert("cedent".to_string(), table_map(marginals::CEDENT));
    let mut state_table = BTreeMap::new();
    for &(c, t) in marginals::STATE_PROVINCE {
        for &(s, n) in t {
            state_table.insert(format!("{c}/{s}"), n);
        }
    }
    marg.insert("states_provinces".to_string(), state_table);

    SynthOutput {
        records,
        manifest: SynthManifest {
            config: config.clone(),
            coefficients: PlantedCoefficients {
                intercept,
                expected_loss: EL_COEF,
                prob_first_loss: PFL_COEF,
                conditional_expected_loss: CEL_COEF,
                season_amplitude: SEASON_AMPLITUDE,
                noise_std: config.noise_std,
                min_spread: MIN_SPREAD,
                peril_effects,
                cedent_effects,
            },
            marginals: marg,
            planted_r2,
        },
    }
}
