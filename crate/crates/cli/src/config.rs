use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use placeness::constructions::{FrequencyBand, MiningConfig, WindowShape};
use placeness::geo::GeoPoint;
use placeness::wordmodel::{FitConfig, StoreConfig};

/// Pipeline settings. Every key may be given in the TOML file or with `--set key=value`.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub stop_list: Option<PathBuf>,
    pub model_store: Option<PathBuf>,
    pub constructions: Option<PathBuf>,

    pub origin_lat: Option<f64>,
    pub origin_lon: Option<f64>,
    pub grid_cell_km: f64,

    pub k: usize,
    pub min_support: usize,
    pub max_vocab: usize,
    pub seed: u64,
    pub covariance_floor: f64,
    pub placeness_constant: f64,
    pub fit_date: Option<String>,

    pub log_t: f64,
    pub band_lower: f64,
    pub band_upper_divisor: f64,
    pub candidate_cap: usize,
    pub retained_cap: usize,
    pub window_shapes: Vec<String>,
    pub radius_km: f64,
}

impl Default for Config {
    fn default() -> Self {
        let fit = FitConfig::default();
        let band = FrequencyBand::default();
        let mining = MiningConfig::default();
        Self {
            corpus: None,
            gazetteer: None,
            stop_list: None,
            model_store: None,
            constructions: None,
            origin_lat: None,
            origin_lon: None,
            grid_cell_km: 50.0,
            k: fit.k,
            min_support: fit.min_support,
            max_vocab: StoreConfig::default().max_vocab,
            seed: fit.seed,
            covariance_floor: fit.covariance_floor,
            placeness_constant: fit.placeness_constant,
            fit_date: None,
            log_t: mining.yield_log_t,
            band_lower: band.lower_fraction,
            band_upper_divisor: band.upper_divisor,
            candidate_cap: mining.candidate_cap,
            retained_cap: mining.retained_cap,
            window_shapes: mining.shapes.iter().map(|s| s.to_string()).collect(),
            radius_km: placeness::eval::DEFAULT_RADIUS_KM,
        }
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn override_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

impl Config {
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            let Some((key, value)) = o.split_once('=') else {
                bail!("override {o:?} is not key=value");
            };
            table.insert(key.trim().to_string(), override_value(value.trim()));
        }
        let config: Config = table.try_into().context("invalid configuration")?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("grid_cell_km", self.grid_cell_km),
            ("covariance_floor", self.covariance_floor),
            ("placeness_constant", self.placeness_constant),
            ("band_lower", self.band_lower),
            ("band_upper_divisor", self.band_upper_divisor),
            ("radius_km", self.radius_km),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!("{name} must be positive, got {v}");
            }
        }
        if !(1..=3).contains(&self.k) {
            bail!("k must be 1, 2 or 3, got {}", self.k);
        }
        for (name, v) in [
            ("min_support", self.min_support),
            ("max_vocab", self.max_vocab),
            ("candidate_cap", self.candidate_cap),
            ("retained_cap", self.retained_cap),
        ] {
            if v < 1 {
                bail!("{name} must be at least 1");
            }
        }
        if !(self.log_t >= 0.0) {
            bail!("log_t must be non-negative, got {}", self.log_t);
        }
        self.shapes()?;
        self.origin()?;
        Ok(())
    }

    pub fn origin(&self) -> Result<Option<GeoPoint>> {
        match (self.origin_lat, self.origin_lon) {
            (None, None) => Ok(None),
            (Some(lat), Some(lon)) => Ok(Some(GeoPoint::new(lat, lon)?)),
            _ => bail!("origin_lat and origin_lon must be given together"),
        }
    }

    pub fn shapes(&self) -> Result<Vec<WindowShape>> {
        if self.window_shapes.is_empty() {
            bail!("window_shapes must not be empty");
        }
        self.window_shapes.iter().map(|s| s.parse().map_err(anyhow::Error::msg)).collect()
    }

    pub fn store_config(&self) -> Result<StoreConfig> {
        let fit = FitConfig {
            k: self.k,
            min_support: self.min_support,
            seed: self.seed,
            covariance_floor: self.covariance_floor,
            placeness_constant: self.placeness_constant,
            ..FitConfig::default()
        };
        Ok(StoreConfig { fit, max_vocab: self.max_vocab, origin: self.origin()?, fit_date: self.fit_date.clone() })
    }

    pub fn mining_config(&self) -> Result<MiningConfig> {
        Ok(MiningConfig {
            candidate_cap: self.candidate_cap,
            retained_cap: self.retained_cap,
            yield_log_t: self.log_t,
            shapes: self.shapes()?,
        })
    }

    pub fn band(&self) -> FrequencyBand {
        FrequencyBand { lower_fraction: self.band_lower, upper_divisor: self.band_upper_divisor }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_as_toml_or_string() {
        let c =
            Config::load(None, &["log_t=40".into(), "corpus=data/train.tsv".into(), "window_shapes=[\"6+0\"]".into()])
                .unwrap();
        assert_eq!(c.log_t, 40.0);
        assert_eq!(c.corpus.as_deref(), Some(Path::new("data/train.tsv")));
        assert_eq!(c.shapes().unwrap(), [WindowShape::Before]);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(Config::load(None, &["k=4".into()]).is_err());
        assert!(Config::load(None, &["radius_km=0".into()]).is_err());
        assert!(Config::load(None, &["origin_lat=60".into()]).is_err());
        assert!(Config::load(None, &["no_such_key=1".into()]).is_err());
        assert!(Config::load(None, &["window_shapes=[\"2+2\"]".into()]).is_err());
    }
}
