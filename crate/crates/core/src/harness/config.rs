//! Scenario files.
//!
//! ```toml
//! [scenario]
//! slots = 16           # power of two
//! d = 8
//! m = 2                # 0 in legacy mode
//! degree = 2
//! mode = "sonni"       # or "legacy"
//! seed = 1             # master seed
//! round = 0
//! quant_step = 1e-3
//! r_min = 0.1
//! input_range = [-1.0, 1.0]
//! coeff_range = [-1.0, 1.0]
//! boundary_avoidance = true
//!
//! [noise]
//! encrypt = 1e-9
//! op = 1e-9
//!
//! [seeds]              # optional per-party overrides
//! client = 7
//!
//! [attack]
//! strategy = "honest"  # silver-platter | one-shot | per-round | malicious-provider | lying-client
//! k = 1
//!
//! [data]
//! input = [0.1, 0.2]   # client input, length d
//! model = "model.toml" # provider model file, relative to this file
//!
//! [network]            # for `serve`
//! client = "127.0.0.1:7101"
//! provider = "127.0.0.1:7102"
//! server = "127.0.0.1:7103"
//! timeout_ms = 30000
//! ```
//!
//! Every key is optional and falls back to [`Scenario::default`].

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::adversary::AttackStrategy;
use crate::protocol::Party;
use crate::scenario::{ConfigError, Mode, Scenario};
use crate::workload::SlotwiseModel;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub slots: Option<usize>,
    pub d: Option<usize>,
    pub m: Option<usize>,
    pub degree: Option<usize>,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub round: Option<u64>,
    pub quant_step: Option<f64>,
    pub r_min: Option<f64>,
    pub input_range: Option<(f64, f64)>,
    pub coeff_range: Option<(f64, f64)>,
    pub boundary_avoidance: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub encrypt: Option<f64>,
    pub op: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSection {
    pub client: Option<u64>,
    pub provider: Option<u64>,
    pub server: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub strategy: Option<String>,
    pub k: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<Vec<f64>>,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub client: Option<SocketAddr>,
    pub provider: Option<SocketAddr>,
    pub server: Option<SocketAddr>,
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub seeds: SeedSection,
    #[serde(default)]
    pub attack: AttackSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Applies the file on top of the defaults. Does not validate.
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let mut s = Scenario::default();
        let sc = &self.scenario;
        if let Some(mode) = sc.mode {
            s.mode = mode;
            if mode == Mode::Legacy && sc.m.is_none() {
                s.m = 0;
            }
        }
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(s.slots, sc.slots);
        set!(s.d, sc.d);
        set!(s.m, sc.m);
        set!(s.degree, sc.degree);
        set!(s.master_seed, sc.seed);
        set!(s.round, sc.round);
        set!(s.quant_step, sc.quant_step);
        set!(s.r_min, sc.r_min);
        set!(s.input_range, sc.input_range);
        set!(s.coeff_range, sc.coeff_range);
        set!(s.boundary_avoidance, sc.boundary_avoidance);
        set!(s.encrypt_noise, self.noise.encrypt);
        set!(s.op_noise, self.noise.op);
        s.client_seed = self.seeds.client;
        s.provider_seed = self.seeds.provider;
        s.server_seed = self.seeds.server;
        if let Some(name) = &self.attack.strategy {
            s.strategy = AttackStrategy::parse(name, self.attack.k.unwrap_or(1))?;
        }
        s.input = self.data.input.clone();
        if let Some(path) = &self.data.model {
            let full = self.base_dir.join(path);
            let model = SlotwiseModel::load(&full)
                .map_err(|e| ConfigError::Parse(format!("{}: {e}", full.display())))?;
            s.model = Some(model);
        }
        Ok(s)
    }

    pub fn peers(&self) -> BTreeMap<Party, SocketAddr> {
        let n = &self.network;
        [
            (Party::Client, n.client),
            (Party::Provider, n.provider),
            (Party::Server, n.server),
        ]
        .into_iter()
        .filter_map(|(p, a)| a.map(|a| (p, a)))
        .collect()
    }

    pub fn timeout(&self) -> Option<Duration> {
        self.network.timeout_ms.map(Duration::from_millis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_apply_over_defaults() {
        let cfg = ConfigFile::parse(
            r#"
            [scenario]
            d = 4
            m = 1
            seed = 9
            input_range = [-2.0, 2.0]
            [noise]
            op = 0.0
            [attack]
            strategy = "one-shot"
            k = 3
            [network]
            server = "127.0.0.1:9000"
            "#,
        )
        .unwrap();
        let s = cfg.to_scenario().unwrap();
        assert_eq!((s.d, s.m, s.master_seed), (4, 1, 9));
        assert_eq!(s.input_range, (-2.0, 2.0));
        assert_eq!(s.op_noise, 0.0);
        assert_eq!(s.encrypt_noise, Scenario::default().encrypt_noise);
        assert_eq!(s.strategy, AttackStrategy::OneShotTheft { k: 3 });
        assert_eq!(cfg.peers().len(), 1);
        s.validate().unwrap();
    }

    #[test]
    fn legacy_defaults_to_no_canaries() {
        let s = ConfigFile::parse("[scenario]\nmode = \"legacy\"\n")
            .unwrap()
            .to_scenario()
            .unwrap();
        assert_eq!(s.m, 0);
        s.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ConfigFile::parse("[scenario]\nslot = 4\n").is_err());
        assert!(ConfigFile::parse("[attack]\nstrategy = \"nope\"\n")
            .unwrap()
            .to_scenario()
            .is_err());
    }
}
