//! Text form of [`SolverConfig`].
//!
//! ```text
//! channel_len = 192
//! epsilon = 2x          # relative to the start's L1 mass; a bare number is absolute
//! anchor_index = auto
//! max_outer_iters = 20
//! max_inner_iters = 5000
//! tol_inner = 0.000001
//! tol_outer = 0.0001
//! seed = 0
//! il1c_init = rectified-tong   # or nonneg-anchor
//! cv_folds = 3
//! ```

use super::{Il1cInit, SolverConfig};
use crate::error::{invalid, Result};
use crate::kv::{self, Entry};

impl Il1cInit {
    pub fn id(&self) -> &'static str {
        match self {
            Il1cInit::RectifiedTong => "rectified-tong",
            Il1cInit::NonnegAnchor => "nonneg-anchor",
        }
    }
}

impl std::str::FromStr for Il1cInit {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectified-tong" => Ok(Il1cInit::RectifiedTong),
            "nonneg-anchor" => Ok(Il1cInit::NonnegAnchor),
            _ => Err(invalid(format!("unknown il1c_init '{s}'"))),
        }
    }
}

impl SolverConfig {
    pub const KEYS: [&'static str; 10] = [
        "channel_len",
        "epsilon",
        "anchor_index",
        "max_outer_iters",
        "max_inner_iters",
        "tol_inner",
        "tol_outer",
        "seed",
        "il1c_init",
        "cv_folds",
    ];

    pub fn to_text(&self) -> String {
        let anchor = self
            .anchor_index
            .map_or_else(|| "auto".to_string(), |a| a.to_string());
        format!(
            "channel_len = {}\nepsilon = {}\nanchor_index = {}\nmax_outer_iters = {}\n\
             max_inner_iters = {}\ntol_inner = {:?}\ntol_outer = {:?}\nseed = {}\n\
             il1c_init = {}\ncv_folds = {}\n",
            self.channel_len,
            self.epsilon,
            anchor,
            self.max_outer_iters,
            self.max_inner_iters,
            self.tol_inner,
            self.tol_outer,
            self.seed,
            self.il1c_init.id(),
            self.cv_folds
        )
    }

    /// Parse a config file; keys not present keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = SolverConfig::default();
        for entry in kv::parse(text)? {
            if !cfg.apply(&entry)? {
                return Err(entry.error("unknown key"));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one entry; returns `false` for keys this type does not own.
    pub fn apply(&mut self, e: &Entry) -> Result<bool> {
        match e.key.as_str() {
            "channel_len" => self.channel_len = e.parse()?,
            "epsilon" => self.epsilon = e.value.parse().map_err(|_| e.error("bad epsilon"))?,
            "anchor_index" => {
                self.anchor_index = match e.value.as_str() {
                    "auto" => None,
                    _ => Some(e.parse()?),
                }
            }
            "max_outer_iters" => self.max_outer_iters = e.parse()?,
            "max_inner_iters" => self.max_inner_iters = e.parse()?,
            "tol_inner" => self.tol_inner = e.parse()?,
            "tol_outer" => self.tol_outer = e.parse()?,
            "seed" => self.seed = e.parse()?,
            "il1c_init" => self.il1c_init = e.parse()?,
            "cv_folds" => self.cv_folds = e.parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
