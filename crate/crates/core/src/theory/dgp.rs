//! Seeded data-generating process for validating the estimators.
//!
//! Each athlete has a permanent ability; each athlete-event pair adds a
//! transitory form shock. Athletes are sorted into groups by noisy permanent
//! ability, swim times fall with permanent ability plus form, and positions
//! follow the within-group swim order. The outcome loads on permanent
//! ability through the athlete effect and on form through `endogeneity`,
//! so form moves both the position and the outcome error while peers'
//! swim times stay independent of the own error.

use chrono::{Days, NaiveDate};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{benefit_transform, TheoryError};
use crate::instruments::{band_treatment, BandPair};
use crate::panel::{sort_panel, AthleteId, Category, EventId, GroupSlot, PanelRow, Period};

/// The regressor the simulated outcome responds to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Treatment {
    /// Raw drafting position `D`.
    #[default]
    Position,
    /// Benefit transform `B(D)` with the config's `gamma` / `lambda`.
    Benefit,
    /// Indicator for the treated band of the pair.
    Band(BandPair),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub n_athletes: usize,
    pub n_events: usize,
    pub athletes_per_event: usize,
    /// Mean of the geometric group-size distribution (support >= 1).
    pub mean_group_size: f64,
    pub ability_sd: f64,
    pub form_sd: f64,
    /// Noise added to permanent ability before sorting into groups; larger
    /// values weaken sorting.
    pub sorting_noise: f64,
    /// Seconds of swim time per unit of ability.
    pub swim_scale: f64,
    pub swim_noise: f64,
    pub event_base_mean: f64,
    pub event_base_sd: f64,
    pub treatment: Treatment,
    pub beta_treat: f64,
    pub beta_leader: f64,
    pub beta_age: f64,
    /// Outcome loading of permanent ability (the athlete effect).
    pub athlete_loading: f64,
    pub event_effect_sd: f64,
    /// Outcome loading of transitory form; 0 makes the treatment exogenous.
    pub endogeneity: f64,
    pub outcome_noise: f64,
    pub intercept: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Default for DgpConfig {
    /// About 5,000 rows. Own form enters every peer's instrument, and event
    /// demeaning feeds it back into the own instrument with weight about
    /// `1 / athletes_per_event`; large fields keep that leak negligible.
    fn default() -> Self {
        DgpConfig {
            n_athletes: 500,
            n_events: 20,
            athletes_per_event: 250,
            mean_group_size: 5.0,
            ability_sd: 1.0,
            form_sd: 1.0,
            sorting_noise: 0.5,
            swim_scale: 30.0,
            swim_noise: 10.0,
            event_base_mean: 1600.0,
            event_base_sd: 300.0,
            treatment: Treatment::Position,
            beta_treat: -0.05,
            beta_leader: 0.0,
            beta_age: 0.0,
            athlete_loading: -0.5,
            event_effect_sd: 0.3,
            endogeneity: 0.3,
            outcome_noise: 0.3,
            intercept: 4.0,
            gamma: 1.0,
            lambda: 0.5,
            seed: 1,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<(), TheoryError> {
        let bad = |m: &str| Err(TheoryError::InvalidConfig(m.to_string()));
        if self.n_athletes == 0 || self.n_events == 0 || self.athletes_per_event == 0 {
            return bad("counts must be positive");
        }
        if self.athletes_per_event > self.n_athletes {
            return bad("athletes_per_event exceeds n_athletes");
        }
        if !(self.mean_group_size >= 1.0 && self.mean_group_size.is_finite()) {
            return bad("mean_group_size must be >= 1");
        }
        let scales = [
            self.ability_sd,
            self.form_sd,
            self.sorting_noise,
            self.swim_noise,
            self.event_base_sd,
            self.event_effect_sd,
            self.outcome_noise,
        ];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise scales must be finite and non-negative");
        }
        if !(self.gamma > 0.0 && self.lambda > 0.0) {
            return bad("gamma and lambda must be positive");
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DgpConfig {
            seed,
            ..self.clone()
        }
    }

    /// Value of the treatment regressor at `slot`.
    pub fn treatment_value(&self, slot: &GroupSlot) -> f64 {
        let d = f64::from(slot.position);
        match self.treatment {
            Treatment::Position => d,
            Treatment::Benefit => benefit_transform(d, self.gamma, self.lambda),
            Treatment::Band(pair) => band_treatment(slot.position, &pair).treat().unwrap_or(0.0),
        }
    }
}

/// What the simulation planted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub treatment: Treatment,
    pub beta_treat: f64,
    pub beta_leader: f64,
    pub beta_age: f64,
    pub endogeneity: f64,
    pub seed: u64,
    pub n_rows: usize,
    pub n_groups: usize,
    pub n_singleton_groups: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub rows: Vec<PanelRow>,
    pub truth: Truth,
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("validated scale")
}

/// Simulate one panel; deterministic in `config.seed`.
pub fn simulate_panel(config: &DgpConfig) -> Result<SimulatedPanel, TheoryError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ability = normal(config.ability_sd);
    let form = normal(config.form_sd);
    let sizes = Geometric::new(1.0 / config.mean_group_size).expect("p in (0, 1]");

    struct Athlete {
        perm: f64,
        male: bool,
        birth_year: i32,
    }
    let athletes: Vec<Athlete> = (0..config.n_athletes)
        .map(|_| Athlete {
            perm: ability.sample(&mut rng),
            male: rng.random_bool(0.8),
            birth_year: rng.random_range(1950..=2000),
        })
        .collect();

    let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
    let span_days = 15 * 365;
    let width = (config.n_athletes.max(config.n_events) as f64)
        .log10()
        .floor() as usize
        + 1;
    let mut rows = Vec::with_capacity(config.n_events * config.athletes_per_event);
    let (mut n_groups, mut n_singletons) = (0usize, 0usize);

    for e in 0..config.n_events {
        let event_id = EventId(format!("E{e:0width$}"));
        let offset = (e * span_days / config.n_events) as u64;
        let date = start + Days::new(offset);
        let base = config.event_base_mean + normal(config.event_base_sd).sample(&mut rng);
        let event_effect = normal(config.event_effect_sd).sample(&mut rng);
        let category = Category::ALL[e % 4];

        let mut field: Vec<(usize, f64)> =
            sample(&mut rng, config.n_athletes, config.athletes_per_event)
                .into_iter()
                .map(|a| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (a, athletes[a].perm + config.sorting_noise * z)
                })
                .collect();
        field.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));

        let mut start_idx = 0;
        let mut group_index = 0u32;
        while start_idx < field.len() {
            let size = (1 + sizes.sample(&mut rng) as usize).min(field.len() - start_idx);
            group_index += 1;
            n_groups += 1;
            if size == 1 {
                n_singletons += 1;
            }
            // (athlete, swim time, form)
            let mut members: Vec<(usize, f64, f64)> = field[start_idx..start_idx + size]
                .iter()
                .map(|&(a, _)| {
                    let f = form.sample(&mut rng);
                    let noise = normal(config.swim_noise).sample(&mut rng);
                    (
                        a,
                        base - config.swim_scale * (athletes[a].perm + f) + noise,
                        f,
                    )
                })
                .collect();
            members.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
            for (k, &(a, swim, f)) in members.iter().enumerate() {
                let slot = GroupSlot::new(group_index, size as u32, k as u32 + 1);
                let ath = &athletes[a];
                let event_year = chrono::Datelike::year(&date);
                let age = event_year - ath.birth_year;
                let noise = normal(config.outcome_noise).sample(&mut rng);
                let y = config.intercept
                    + config.beta_treat * config.treatment_value(&slot)
                    + config.beta_leader * if slot.leader { 1.0 } else { 0.0 }
                    + config.beta_age * f64::from(age)
                    + config.athlete_loading * ath.perm
                    + event_effect
                    + config.endogeneity * f
                    + noise;
                rows.push(PanelRow {
                    athlete_id: AthleteId(format!("A{a:0width$}")),
                    event_id: event_id.clone(),
                    event_date: date,
                    category,
                    male: ath.male,
                    birth_year: ath.birth_year,
                    event_year,
                    age,
                    age_sq: age * age,
                    period: if event_year < 2020 {
                        Period::Pre
                    } else if event_year < 2023 {
                        Period::Covid
                    } else {
                        Period::Post
                    },
                    swim_out_s: swim,
                    total_s: swim * 6.0,
                    rank: y.exp_m1(),
                    group: Some(slot),
                    loo: None,
                    projected: None,
                });
            }
            start_idx += size;
        }
    }
    if n_groups == n_singletons {
        return Err(TheoryError::NoMultiMemberGroups);
    }
    sort_panel(&mut rows);
    let truth = Truth {
        treatment: config.treatment,
        beta_treat: config.beta_treat,
        beta_leader: config.beta_leader,
        beta_age: config.beta_age,
        endogeneity: config.endogeneity,
        seed: config.seed,
        n_rows: rows.len(),
        n_groups,
        n_singleton_groups: n_singletons,
    };
    Ok(SimulatedPanel { rows, truth })
}
