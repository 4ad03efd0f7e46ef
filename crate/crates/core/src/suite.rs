//! Named experiment suites: the Adult comparisons of all seven defenses and a
//! synthetic two-attribute comparison of the multi-attribute defenses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{LeakySpec, PrivateAttr};
use crate::defenses::{DefenseConfig, DimConfig, DpConfig, MinimaxConfig, PldaConfig, PplsConfig};
use crate::harness::{default_pool, DatasetSpec, ExperimentConfig, ModelSpec, DEFAULT_SLACK};
use crate::nnet::TrainConfig;

pub const REPETITIONS: usize = 5;

/// Trade-off values swept for every method that has one.
pub const LAMBDAS: [f64; 3] = [0.5, 1.0, 3.0];
pub const EPSILONS: [f64; 3] = [0.25, 1.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    AdultGender,
    AdultAge,
    AdultEducation,
    MultiAttrSynth,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::AdultGender, Suite::AdultAge, Suite::AdultEducation, Suite::MultiAttrSynth];

    pub fn name(self) -> &'static str {
        match self {
            Suite::AdultGender => "adult-gender",
            Suite::AdultAge => "adult-age",
            Suite::AdultEducation => "adult-education",
            Suite::MultiAttrSynth => "multi-attr-synth",
        }
    }

    /// Every experiment of the suite, seeds `base_seed..base_seed + 5`.
    pub fn configs(self, adult_dir: &Path, base_seed: u64) -> Vec<ExperimentConfig> {
        let seeds: Vec<u64> = (base_seed..base_seed + REPETITIONS as u64).collect();
        let (dataset, defenses, target, pool) = match self {
            Suite::AdultGender | Suite::AdultAge | Suite::AdultEducation => {
                let attr = match self {
                    Suite::AdultGender => PrivateAttr::Gender,
                    Suite::AdultAge => PrivateAttr::Age,
                    _ => PrivateAttr::Education,
                };
                let ds = DatasetSpec::Adult { private_attr: attr, dir: adult_dir.to_path_buf(), split_seed: 0 };
                (ds, adult_defenses(attr), ModelSpec::new(&[100]), default_pool())
            }
            Suite::MultiAttrSynth => {
                let tc = synth_train();
                let model = |h: &[usize]| ModelSpec { hidden: h.to_vec(), train: tc.clone() };
                (synth_dataset(), synth_defenses(), model(&[100]), vec![model(&[]), model(&[100]), model(&[100, 100])])
            }
        };
        defenses
            .into_iter()
            .map(|defense| ExperimentConfig {
                dataset: dataset.clone(),
                defense,
                target: target.clone(),
                pool: pool.clone(),
                repetitions: seeds.len(),
                seeds: seeds.clone(),
                slack: DEFAULT_SLACK,
            })
            .collect()
    }
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite {s:?} (adult-gender|adult-age|adult-education|multi-attr-synth)"))
    }
}

/// Width of the learned representation for each Adult attribute.
pub fn adult_feature_dim(attr: PrivateAttr) -> usize {
    match attr {
        PrivateAttr::Education => 95,
        _ => 100,
    }
}

/// Adversarial training schedule shared by all suites: `f` and `h` follow
/// `train` with the rate cut tenfold after 20 epochs, while the adversary is a
/// 2x100 ReLU net on plain SGD at rate 0.1, so it keeps up with `f` instead of
/// being outpaced by the reversed gradient.
pub fn two_timescale(lambda: f64, feature_widths: Vec<usize>, train: TrainConfig) -> MinimaxConfig {
    MinimaxConfig {
        feature_widths,
        train: TrainConfig { decay: 0.1, decay_period: 20, ..train.clone() },
        adversary_hidden: vec![100, 100],
        adversary_train: TrainConfig { lr: 0.1, momentum: 0.0, ..train },
        ..MinimaxConfig::new(lambda)
    }
}

/// `f` is two ReLU layers and `h` one linear layer, trained with
/// SGD(0.001, 0.9) for 40 epochs.
pub fn adult_minimax(attr: PrivateAttr, lambda: f64) -> MinimaxConfig {
    two_timescale(lambda, vec![100, adult_feature_dim(attr)], TrainConfig::default())
}

pub fn adult_defenses(attr: PrivateAttr) -> Vec<DefenseConfig> {
    let dim = adult_feature_dim(attr);
    let mut v = vec![DefenseConfig::NoDef, DefenseConfig::Pca(DimConfig { dim })];
    v.extend(LAMBDAS.map(|rho| DefenseConfig::Ppls(PplsConfig { dim, rho })));
    v.extend(LAMBDAS.map(|lam| DefenseConfig::Plda(PldaConfig { dim, lam })));
    v.extend(EPSILONS.map(|epsilon| DefenseConfig::Dp(DpConfig { epsilon })));
    v.extend(LAMBDAS.map(|l| DefenseConfig::Grl(adult_minimax(attr, l))));
    v.extend(LAMBDAS.map(|l| DefenseConfig::AltUp(adult_minimax(attr, l))));
    v
}

/// Two attributes, each a threshold of its own uniform coordinate, and a
/// target carried by a third, noisy coordinate.
pub fn synth_dataset() -> DatasetSpec {
    DatasetSpec::SynthLeaky {
        leaky: LeakySpec { thresholds: vec![0.2, -0.3], target_noise: 1.2 },
        train_size: 2000,
        seed: 0,
    }
}

pub fn synth_train() -> TrainConfig {
    TrainConfig { lr: 0.01, momentum: 0.9, epochs: 40, batch_size: 32, ..Default::default() }
}

pub fn synth_minimax(lambda: f64) -> MinimaxConfig {
    two_timescale(lambda, vec![16, 8], synth_train())
}

pub fn synth_defenses() -> Vec<DefenseConfig> {
    vec![
        DefenseConfig::NoDef,
        DefenseConfig::Pca(DimConfig { dim: 2 }),
        DefenseConfig::Ppls(PplsConfig { dim: 2, rho: 3.0 }),
        DefenseConfig::Plda(PldaConfig { dim: 2, lam: 3.0 }),
        DefenseConfig::Dp(DpConfig { epsilon: 1.0 }),
        DefenseConfig::Grl(synth_minimax(3.0)),
        // At lambda 3 the frozen-adversary phase drives f to overflow on some seeds.
        DefenseConfig::AltUp(synth_minimax(1.0)),
        DefenseConfig::MultiHard(synth_minimax(3.0)),
        DefenseConfig::MultiSmooth(synth_minimax(3.0)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::defenses::Method;

    #[test]
    fn adult_suite_enumerates_methods_and_tradeoffs() {
        let cfgs = Suite::AdultGender.configs(Path::new("data/adult"), 0);
        assert_eq!(cfgs.len(), 2 + 5 * 3);
        for m in [Method::Ppls, Method::Plda, Method::Dp, Method::Grl, Method::AltUp] {
            assert_eq!(cfgs.iter().filter(|c| c.defense.method() == m).count(), 3, "{m:?}");
        }
        for c in &cfgs {
            c.validate().unwrap();
            assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        }
        let edu = Suite::AdultEducation.configs(Path::new("data/adult"), 7);
        assert_eq!(edu[0].seeds, vec![7, 8, 9, 10, 11]);
        match &edu.last().unwrap().defense {
            DefenseConfig::AltUp(m) => assert_eq!(m.feature_widths, vec![100, 95]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synthetic_suite_has_multi_attribute_variants() {
        let cfgs = Suite::MultiAttrSynth.configs(Path::new("."), 0);
        let methods: Vec<Method> = cfgs.iter().map(|c| c.defense.method()).collect();
        assert!(methods.contains(&Method::MultiHard) && methods.contains(&Method::MultiSmooth));
        assert_eq!(methods.len(), 9);
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("adult-race".parse::<Suite>().is_err());
    }
}
