//! Versioned JSON serialization of fitted regimes.
//!
//! Balanced and comparator regimes share one tagged document format so the
//! command-line tools can deploy or evaluate any of them interchangeably.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::BaselineRegime;
use crate::bql::FittedRegime;
use crate::data::AssessmentCatalog;
use crate::deploy::Policy;
use crate::error::{Error, Result};

/// Any regime this crate can fit, tagged by kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
pub enum RegimeDocument {
    Bql(FittedRegime),
    Dense(BaselineRegime),
    Sparse(BaselineRegime),
}

impl RegimeDocument {
    pub fn from_baseline(b: BaselineRegime) -> Self {
        match b.kind {
            crate::baselines::BaselineKind::Dense => RegimeDocument::Dense(b),
            crate::baselines::BaselineKind::Sparse => RegimeDocument::Sparse(b),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            RegimeDocument::Bql(_) => "bql",
            RegimeDocument::Dense(_) => "dense",
            RegimeDocument::Sparse(_) => "sparse",
        }
    }

    pub fn policy(&self) -> &dyn Policy {
        match self {
            RegimeDocument::Bql(r) => r,
            RegimeDocument::Dense(b) | RegimeDocument::Sparse(b) => b,
        }
    }

    pub fn catalog(&self) -> &AssessmentCatalog {
        self.policy().catalog()
    }
}

pub fn save_regime<P: AsRef<Path>>(doc: &RegimeDocument, path: P) -> Result<()> {
    let json = serde_json::to_string_pretty(doc)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_regime<P: AsRef<Path>>(path: P) -> Result<RegimeDocument> {
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Data(format!("cannot read regime file: {e}")))?;
    let doc: RegimeDocument = serde_json::from_str(&text)?;
    let consistent = match &doc {
        RegimeDocument::Bql(_) => true,
        RegimeDocument::Dense(b) => b.kind == crate::baselines::BaselineKind::Dense,
        RegimeDocument::Sparse(b) => b.kind == crate::baselines::BaselineKind::Sparse,
    };
    if !consistent {
        return Err(Error::Data("regime document tag disagrees with its baseline kind".into()));
    }
    Ok(doc)
}
