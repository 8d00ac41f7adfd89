use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Thresholds;
use crate::features::FeatureConfig;
use crate::likelihood::LikelihoodModel;
use crate::popularity::{CategoryBounds, PopularityTable};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed model file: {0}")]
    Format(#[from] serde_json::Error),
    #[error("unsupported model format version {0} (expected {FORMAT_VERSION})")]
    Version(u32),
    #[error("feature configuration checksum mismatch")]
    Checksum,
}

/// A trained model: both filters plus the thresholds applied to them.
///
/// Persisted as JSON. All tables are ordered maps, so training the same
/// multiset of sessions always produces byte-identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    format_version: u32,
    feature_config: FeatureConfig,
    feature_checksum: String,
    thresholds: Thresholds,
    category_bounds: CategoryBounds,
    likelihood: LikelihoodModel,
    popularity: PopularityTable,
}

impl ModelBundle {
    pub fn new(
        likelihood: LikelihoodModel,
        popularity: PopularityTable,
        thresholds: Thresholds,
        category_bounds: CategoryBounds,
    ) -> Self {
        let feature_config = likelihood.features().clone();
        ModelBundle {
            format_version: FORMAT_VERSION,
            feature_checksum: feature_config.checksum(),
            feature_config,
            thresholds,
            category_bounds,
            likelihood,
            popularity,
        }
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.feature_config
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    pub fn category_bounds(&self) -> CategoryBounds {
        self.category_bounds
    }

    pub fn likelihood(&self) -> &LikelihoodModel {
        &self.likelihood
    }

    pub fn popularity(&self) -> &PopularityTable {
        &self.popularity
    }

    pub fn with_thresholds(mut self, thresholds: Thresholds) -> Self {
        self.thresholds = thresholds;
        self
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<(), BundleError> {
        serde_json::to_writer(&mut out, self)?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn load<R: Read>(input: R) -> Result<Self, BundleError> {
        let bundle: ModelBundle = serde_json::from_reader(input)?;
        if bundle.format_version != FORMAT_VERSION {
            return Err(BundleError::Version(bundle.format_version));
        }
        if bundle.feature_checksum != bundle.feature_config.checksum()
            || bundle.likelihood.features() != &bundle.feature_config
        {
            return Err(BundleError::Checksum);
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Feature, FeatureVector, Instance};
    use crate::ingest::Label;
    use crate::likelihood::{fit, Mode};
    use crate::popularity::{build_popularity, BuyBasis};

    fn bundle(mode: Mode) -> ModelBundle {
        let fv = |h: u8| FeatureVector {
            hour_of_day: h,
            day_of_month: 3,
            day_of_week: 1,
            month_of_year: 5,
            item_click_count: 2,
            duration_bin: 4,
        };
        let data: Vec<Instance> = (0..20)
            .map(|i| Instance {
                session_id: i,
                item_id: i,
                features: fv((i % 5) as u8),
                clicks: 2,
                label: if i % 3 == 0 { Label::Buy } else { Label::NonBuy },
            })
            .collect();
        let cfg = FeatureConfig::new(Feature::ALL, 10, 30).unwrap();
        let m = fit(&data, &cfg, mode, 0.5).unwrap();
        let pop = build_popularity(&[], &[], BuyBasis::Events);
        ModelBundle::new(m, pop, Thresholds::new(1.5, 0.25).unwrap(), CategoryBounds::default())
    }

    #[test]
    fn save_load_round_trip() {
        for mode in [Mode::Joint, Mode::Independent] {
            let b = bundle(mode);
            let bytes = b.to_bytes();
            let back = ModelBundle::load(&bytes[..]).unwrap();
            assert_eq!(back, b);
            assert_eq!(back.to_bytes(), bytes);
        }
    }

    #[test]
    fn tampered_checksum_is_rejected() {
        let b = bundle(Mode::Joint);
        let text = String::from_utf8(b.to_bytes()).unwrap();
        let tampered = text.replace(&b.feature_checksum, &"0".repeat(64));
        assert!(matches!(
            ModelBundle::load(tampered.as_bytes()),
            Err(BundleError::Checksum)
        ));
        let bumped = text.replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(
            ModelBundle::load(bumped.as_bytes()),
            Err(BundleError::Version(9))
        ));
        assert!(ModelBundle::load(&b"not json"[..]).is_err());
    }
}
