//! Deployment configuration: a TOML file whose fields can be overridden by
//! `OINF_*` environment variables.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::he::{Backend, HeParams};
use crate::ring::{RingParams, Role};
use crate::rng::Seed;
use crate::transport::DEFAULT_MAX_FRAME;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeConfig {
    pub backend: Backend,
    pub poly_degree: usize,
    pub cipher_modulus_bits: u32,
    pub noise_sigma: f64,
}

impl Default for HeConfig {
    fn default() -> Self {
        HeConfig {
            backend: Backend::Rlwe,
            poly_degree: 4096,
            cipher_modulus_bits: 124,
            noise_sigma: 3.2,
        }
    }
}

impl HeConfig {
    pub fn params(&self) -> Result<HeParams> {
        let mut p = HeParams::with_degree(self.poly_degree)?;
        p.cipher_modulus_bits = self.cipher_modulus_bits;
        p.noise_sigma = self.noise_sigma;
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// 1 or 2; unset for clients.
    pub role: Option<u8>,
    /// Server 2's inter-server listen address, dialled by server 1.
    pub peer_addr: String,
    /// This server's client-facing listen address.
    pub listen_addr: String,
    /// Client-facing addresses of servers 1 and 2 (used by the client).
    pub server_addrs: [String; 2],
    pub ring: RingParams,
    pub he: HeConfig,
    pub triplet_store: PathBuf,
    pub model_share: PathBuf,
    /// Descriptor JSON written by `init-model`; lets the client agree on
    /// the model without holding any weights.
    pub model_descriptor: PathBuf,
    pub async_mode: bool,
    /// Root seed; drawn from OS entropy when absent.
    pub seed: Option<u64>,
    pub batch_len: usize,
    pub max_frame: usize,
    pub connect_retries: u32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            role: None,
            peer_addr: "127.0.0.1:7400".into(),
            listen_addr: "127.0.0.1:7401".into(),
            server_addrs: ["127.0.0.1:7401".into(), "127.0.0.1:7402".into()],
            ring: RingParams::default(),
            he: HeConfig::default(),
            triplet_store: PathBuf::from("triplets.oitr"),
            model_share: PathBuf::from("model.oims"),
            model_descriptor: PathBuf::from("model.json"),
            async_mode: true,
            seed: None,
            batch_len: 4096,
            max_frame: DEFAULT_MAX_FRAME,
            connect_retries: 50,
        }
    }
}

fn parse_env<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Params(format!("environment variable {key}={raw:?} does not parse")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::Params(format!("environment variable {key}={raw:?} is not a boolean"))),
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("config", e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path` (or defaults when `None`), then applies overrides from
    /// `vars`, usually `std::env::vars()`.
    pub fn load(path: Option<&Path>, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Config::from_toml(&std::fs::read_to_string(p)?)?,
            None => Config::default(),
        };
        cfg.apply_env(vars)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<()> {
        for (k, v) in vars {
            let Some(name) = k.strip_prefix("OINF_") else { continue };
            match name {
                "ROLE" => self.role = Some(parse_env(&k, &v)?),
                "PEER_ADDR" => self.peer_addr = v,
                "LISTEN_ADDR" => self.listen_addr = v,
                "SERVER1_ADDR" => self.server_addrs[0] = v,
                "SERVER2_ADDR" => self.server_addrs[1] = v,
                "RING_T" => self.ring.t = parse_env(&k, &v)?,
                "RING_F" => self.ring.f = parse_env(&k, &v)?,
                "HE_BACKEND" => {
                    self.he.backend = match v.as_str() {
                        "rlwe" => Backend::Rlwe,
                        "dealer-mock" | "dealer" => Backend::DealerMock,
                        _ => return Err(Error::Params(format!("unknown HE backend {v:?}"))),
                    }
                }
                "POLY_DEGREE" => self.he.poly_degree = parse_env(&k, &v)?,
                "TRIPLET_STORE" => self.triplet_store = PathBuf::from(v),
                "MODEL_SHARE" => self.model_share = PathBuf::from(v),
                "MODEL_DESCRIPTOR" => self.model_descriptor = PathBuf::from(v),
                "ASYNC" => self.async_mode = parse_bool(&k, &v)?,
                "SEED" => self.seed = Some(parse_env(&k, &v)?),
                "BATCH_LEN" => self.batch_len = parse_env(&k, &v)?,
                "MAX_FRAME" => self.max_frame = parse_env(&k, &v)?,
                _ => log::warn!("ignoring unknown setting {k}"),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        RingParams::new(self.ring.t, self.ring.f)?;
        self.he.params()?;
        if let Some(r) = self.role {
            Role::from_index(r)?;
        }
        if self.batch_len == 0 || self.batch_len > self.he.poly_degree {
            return Err(Error::Params(format!(
                "batch_len {} outside 1..={}",
                self.batch_len, self.he.poly_degree
            )));
        }
        Ok(())
    }

    pub fn role(&self) -> Result<Role> {
        match self.role {
            Some(r) => Role::from_index(r),
            None => Err(Error::Params("no server role configured (set role or --role)".into())),
        }
    }

    pub fn root_seed(&self) -> Seed {
        match self.seed {
            Some(s) => Seed::from_u64(s),
            None => Seed::from_entropy(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_env_overrides() {
        let mut c = Config::default();
        c.role = Some(2);
        c.seed = Some(9);
        let text = c.to_toml();
        assert_eq!(Config::from_toml(&text).unwrap(), c);
        let vars = vec![
            ("OINF_ROLE".to_string(), "1".to_string()),
            ("OINF_ASYNC".to_string(), "false".to_string()),
            ("OINF_HE_BACKEND".to_string(), "dealer-mock".to_string()),
            ("PATH".to_string(), "/bin".to_string()),
        ];
        c.apply_env(vars).unwrap();
        assert_eq!(c.role().unwrap(), Role::Server1);
        assert!(!c.async_mode);
        assert_eq!(c.he.backend, Backend::DealerMock);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(Config::from_toml("bogus = 1").is_err());
        let mut c = Config::default();
        assert!(c.apply_env([("OINF_ASYNC".into(), "maybe".into())]).is_err());
        c.role = Some(3);
        assert!(c.validate().is_err());
        let partial = Config::from_toml("role = 1\n[ring]\nt = 16\nf = 4\n").unwrap();
        assert_eq!(partial.ring, RingParams::miniature());
    }
}
