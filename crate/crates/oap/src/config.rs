//! TOML run configuration. Every section mirrors a core config struct; keys
//! left out of the file keep the profile default, unknown keys are rejected.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use oap_core::agent::AgentConfig;
use oap_core::data::QualityTier;
use oap_core::ranknet::RankNetConfig;
use oap_core::scheduler::{EvalConfig, HarnessConfig, OapSchedule, OapVariant, OnlineConfig, Scheme, SchemeSpec};
use oap_core::theory::TheoryConfig;

use crate::CliError;

/// Declares an all-optional serde mirror of `$target` with `apply` (file
/// values over defaults) and `capture` (full echo of resolved values).
macro_rules! section {
    ($name:ident => $target:ty { $($field:ident : $ty:ty),* $(,)? } $(optional { $($ofield:ident : $oty:ty),* $(,)? })?) => {
        #[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $(
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
            $($(
                #[serde(default, skip_serializing_if = "Option::is_none")]
                pub $ofield: Option<$oty>,
            )*)?
        }

        impl $name {
            pub fn apply(&self, target: &mut $target) {
                $(
                    if let Some(v) = &self.$field {
                        target.$field = v.clone();
                    }
                )*
                $($(
                    if let Some(v) = &self.$ofield {
                        target.$ofield = Some(v.clone());
                    }
                )*)?
            }

            pub fn capture(target: &$target) -> Self {
                Self {
                    $($field: Some(target.$field.clone()),)*
                    $($($ofield: target.$ofield.clone(),)*)?
                }
            }
        }
    };
}

section!(AgentSection => AgentConfig {
    alpha: f64,
    tau: f64,
    policy_noise: f64,
    noise_clip: f64,
    policy_update_freq: usize,
    batch_size: usize,
    lr: f64,
    actor_hidden: Vec<usize>,
    critic_hidden: Vec<usize>,
    normalize_states: bool,
    normalize_lambda: bool,
});

section!(RankNetSection => RankNetConfig {
    hidden: Vec<usize>,
    dropout: f64,
    epochs: usize,
    minibatch: usize,
    lr: f64,
});

section!(ScheduleSection => OapSchedule { n_train: usize, m_inter: usize, k_total: usize });

section!(EvalSection => EvalConfig { interval: usize, episodes: usize, final_window: usize });

section!(TheorySection => TheoryConfig {
    instances: usize,
    min_states: usize,
    max_states: usize,
    min_actions: usize,
    max_actions: usize,
    alpha: f64,
    alpha_tilde: f64,
    episodes: usize,
    horizon: usize,
    epsilon: f64,
});

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    /// `gridmaze-10`, `gridmaze` (with `maze_file`) or `pointmass`.
    pub name: String,
    pub maze_file: Option<PathBuf>,
    pub gamma: f64,
}

section!(EnvSection => EnvSpec { name: String, gamma: f64 } optional { maze_file: PathBuf });

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub tier: String,
    pub n: usize,
    /// Load this file instead of generating a dataset.
    pub path: Option<PathBuf>,
}

section!(DatasetSection => DatasetSpec { tier: String, n: usize } optional { path: PathBuf });

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeSettings {
    pub name: String,
    pub variant: String,
    pub o2o_interval: bool,
    pub online_budget: usize,
}

section!(SchemeSection => SchemeSettings { name: String, variant: String, o2o_interval: bool, online_budget: usize });

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSettings {
    pub warmup: usize,
    pub exploration_noise: f64,
}

section!(OnlineSection => OnlineSettings { warmup: usize, exploration_noise: f64 });

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    /// Uniform noise amplitude added to the oracle's values.
    pub noise: f64,
    pub unqueried_first: bool,
}

section!(OracleSection => OracleSettings { noise: f64, unqueried_first: bool });

/// The file format: every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub ranknet: RankNetSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub online: OnlineSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub theory: TheorySection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn tag(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

impl FromStr for Profile {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(CliError::Config(format!("unknown profile {s:?} (expected desk or paper)"))),
        }
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub profile: Profile,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub workers: usize,
    pub env: EnvSpec,
    pub dataset: DatasetSpec,
    pub scheme: SchemeSettings,
    pub harness: HarnessConfig,
    pub oracle: OracleSettings,
    pub theory: TheoryConfig,
}

impl Settings {
    pub fn defaults(profile: Profile) -> Self {
        let harness = match profile {
            Profile::Desk => HarnessConfig::desk(),
            Profile::Paper => HarnessConfig::paper(),
        };
        Self {
            profile,
            seeds: vec![0, 1, 2, 3, 4],
            out: PathBuf::from("out"),
            workers: 1,
            env: EnvSpec { name: "gridmaze-10".into(), maze_file: None, gamma: 0.99 },
            dataset: DatasetSpec { tier: "medium".into(), n: 20_000, path: None },
            scheme: SchemeSettings {
                name: "oap".into(),
                variant: "interval".into(),
                o2o_interval: false,
                online_budget: harness.schedule.k_total,
            },
            oracle: OracleSettings { noise: 0.0, unqueried_first: harness.unqueried_first },
            harness,
            theory: TheoryConfig::default(),
        }
    }

    /// Profile defaults, then the file, in that order. `profile_override`
    /// wins over the file's `profile` key.
    pub fn resolve(file: &RunConfig, profile_override: Option<Profile>) -> Result<Self, CliError> {
        let profile = match (profile_override, &file.profile) {
            (Some(p), _) => p,
            (None, Some(p)) => p.parse()?,
            (None, None) => Profile::Desk,
        };
        let mut s = Self::defaults(profile);
        if let Some(seeds) = &file.seeds {
            s.seeds = seeds.clone();
        }
        if let Some(out) = &file.out {
            s.out = out.clone();
        }
        if let Some(w) = file.workers {
            s.workers = w;
        }
        file.schedule.apply(&mut s.harness.schedule);
        // The online budget follows the query budget unless set explicitly.
        s.scheme.online_budget = s.harness.schedule.k_total;
        file.env.apply(&mut s.env);
        file.dataset.apply(&mut s.dataset);
        file.scheme.apply(&mut s.scheme);
        file.agent.apply(&mut s.harness.agent);
        file.ranknet.apply(&mut s.harness.ranknet);
        file.eval.apply(&mut s.harness.eval);
        let mut online = OnlineSettings { warmup: s.harness.online.warmup, exploration_noise: s.harness.online.exploration_noise };
        file.online.apply(&mut online);
        s.harness.online = OnlineConfig { warmup: online.warmup, exploration_noise: online.exploration_noise };
        file.oracle.apply(&mut s.oracle);
        s.harness.unqueried_first = s.oracle.unqueried_first;
        file.theory.apply(&mut s.theory);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must not be empty".into()));
        }
        if self.workers == 0 {
            return Err(CliError::Config("workers must be positive".into()));
        }
        if self.dataset.n == 0 {
            return Err(CliError::Config("dataset.n must be positive".into()));
        }
        self.tier()?;
        self.scheme_spec()?;
        self.harness.schedule.validate()?;
        self.harness.agent.validate()?;
        self.theory.validate()?;
        if !(self.oracle.noise >= 0.0 && self.oracle.noise.is_finite()) {
            return Err(CliError::Config(format!("oracle.noise {} must be finite and non-negative", self.oracle.noise)));
        }
        Ok(())
    }

    pub fn tier(&self) -> Result<QualityTier, CliError> {
        Ok(self.dataset.tier.parse()?)
    }

    pub fn scheme_spec(&self) -> Result<SchemeSpec, CliError> {
        let scheme: Scheme = self.scheme.name.parse()?;
        let mut spec = SchemeSpec::new(scheme, self.scheme.online_budget);
        spec.oap_variant = self.scheme.variant.parse::<OapVariant>()?;
        spec.o2o_interval = self.scheme.o2o_interval;
        spec.validate()?;
        Ok(spec)
    }

    /// The resolved settings in file form, with every key present.
    pub fn to_config(&self) -> RunConfig {
        let online = OnlineSettings { warmup: self.harness.online.warmup, exploration_noise: self.harness.online.exploration_noise };
        RunConfig {
            profile: Some(self.profile.tag().into()),
            seeds: Some(self.seeds.clone()),
            out: Some(self.out.clone()),
            workers: Some(self.workers),
            env: EnvSection::capture(&self.env),
            dataset: DatasetSection::capture(&self.dataset),
            scheme: SchemeSection::capture(&self.scheme),
            agent: AgentSection::capture(&self.harness.agent),
            ranknet: RankNetSection::capture(&self.harness.ranknet),
            schedule: ScheduleSection::capture(&self.harness.schedule),
            eval: EvalSection::capture(&self.harness.eval),
            online: OnlineSection::capture(&online),
            oracle: OracleSection::capture(&self.oracle),
            theory: TheorySection::capture(&self.theory),
        }
    }

    pub fn echo(&self) -> String {
        toml::to_string(&self.to_config()).expect("settings serialize")
    }
}
