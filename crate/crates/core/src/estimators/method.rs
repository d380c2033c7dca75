use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Estimation approach. Tags are stable strings shared by the CLI, config
/// files and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Outcome modeling with direct standardization to the population.
    #[serde(rename = "OM")]
    Om,
    /// Survey-weighted propensity times `Pr(S=1|A,X)`.
    #[serde(rename = "IPW1")]
    Ipw1,
    /// Within-sample propensity times the group-marginalized `Pr(S=1|X)`.
    #[serde(rename = "IPW2")]
    Ipw2,
    /// Simple regression `Y ~ A`.
    #[serde(rename = "SLR")]
    Slr,
    /// Multiple regression `Y ~ A + X`.
    #[serde(rename = "MR")]
    Mr,
    /// Horvitz–Thompson IPTW with within-sample propensities.
    #[serde(rename = "IPTW_HT")]
    IptwHt,
    /// Survey-weighted `Y ~ A + X`.
    #[serde(rename = "SVY_MR")]
    SvyMr,
    /// `Y ~ A + X` weighted by within-sample IPT weights.
    #[serde(rename = "IPTW_MR")]
    IptwMr,
    /// `Y ~ A + X` weighted by within-sample IPT weight × selection weight.
    #[serde(rename = "IPTW_SVY_MR")]
    IptwSvyMr,
    /// `Y ~ A + X` weighted by survey-weighted-propensity IPT weight × selection weight.
    #[serde(rename = "WIPTW_SVY_MR")]
    WiptwSvyMr,
    /// Selection-weighted average of per-group outcome-model predictions.
    #[serde(rename = "NAIVE_G")]
    NaiveG,
    /// OM with an additive outcome model in `(A, X)`, whatever the configured spec.
    #[serde(rename = "OM_ADDITIVE")]
    OmAdditive,
    /// Selection-weighted interacted regression (the data-generating form).
    #[serde(rename = "ORACLE")]
    Oracle,
}

impl Method {
    pub const PROPOSED: [Method; 3] = [Method::Om, Method::Ipw1, Method::Ipw2];
    pub const COMPARISON: [Method; 8] = [
        Method::Slr,
        Method::Mr,
        Method::IptwHt,
        Method::SvyMr,
        Method::IptwMr,
        Method::IptwSvyMr,
        Method::WiptwSvyMr,
        Method::NaiveG,
    ];
    pub const ALL: [Method; 13] = [
        Method::Om,
        Method::Ipw1,
        Method::Ipw2,
        Method::Slr,
        Method::Mr,
        Method::IptwHt,
        Method::SvyMr,
        Method::IptwMr,
        Method::IptwSvyMr,
        Method::WiptwSvyMr,
        Method::NaiveG,
        Method::OmAdditive,
        Method::Oracle,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Om => "OM",
            Method::Ipw1 => "IPW1",
            Method::Ipw2 => "IPW2",
            Method::Slr => "SLR",
            Method::Mr => "MR",
            Method::IptwHt => "IPTW_HT",
            Method::SvyMr => "SVY_MR",
            Method::IptwMr => "IPTW_MR",
            Method::IptwSvyMr => "IPTW_SVY_MR",
            Method::WiptwSvyMr => "WIPTW_SVY_MR",
            Method::NaiveG => "NAIVE_G",
            Method::OmAdditive => "OM_ADDITIVE",
            Method::Oracle => "ORACLE",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Method::Om => "Outcome modeling and direct standardization",
            Method::Ipw1 => "Inverse probability weighting 1",
            Method::Ipw2 => "Inverse probability weighting 2",
            Method::Slr => "Simple linear regression",
            Method::Mr => "Multiple regression",
            Method::IptwHt => "Inverse probability of treatment weighting",
            Method::SvyMr => "Survey-weighted multiple regression",
            Method::IptwMr => "IPTW multiple regression",
            Method::IptwSvyMr => "IPTW survey-weighted multiple regression",
            Method::WiptwSvyMr => "Weighted-propensity IPTW survey-weighted multiple regression",
            Method::NaiveG => "Naive g-computation",
            Method::OmAdditive => "Outcome modeling, additive outcome model",
            Method::Oracle => "Oracle survey-weighted interacted regression",
        }
    }

    pub fn is_proposed(self) -> bool {
        matches!(self, Method::Om | Method::Ipw1 | Method::Ipw2 | Method::OmAdditive)
    }

    pub fn needs_propensity(self) -> bool {
        matches!(
            self,
            Method::Om
                | Method::OmAdditive
                | Method::Ipw1
                | Method::Ipw2
                | Method::IptwHt
                | Method::IptwMr
                | Method::IptwSvyMr
                | Method::WiptwSvyMr
        )
    }

    /// Methods that evaluate selection probabilities.
    pub fn needs_selection(self) -> bool {
        matches!(self, Method::Om | Method::OmAdditive | Method::Ipw1 | Method::Ipw2)
    }

    /// Methods that use neither selection weights nor selection probabilities.
    pub fn is_survey_unaware(self) -> bool {
        matches!(self, Method::Slr | Method::Mr | Method::IptwHt | Method::IptwMr)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        let up = s.trim().to_ascii_uppercase();
        Method::ALL
            .into_iter()
            .find(|m| m.tag() == up)
            .ok_or_else(|| Error::Config(format!("unknown method tag `{s}`")))
    }
}

/// Form of the outcome model `g_a(X)` used by OM and naive g-computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmSpec {
    /// Separate regressions within each group (full group × covariate interaction).
    #[default]
    Interacted,
    /// One regression additive in `A` and `X`.
    #[serde(alias = "misspecified_additive")]
    Additive,
}

impl FromStr for OmSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "interacted" => Ok(OmSpec::Interacted),
            "additive" | "misspecified_additive" => Ok(OmSpec::Additive),
            other => Err(Error::Config(format!("unknown om_spec `{other}` (interacted|additive)"))),
        }
    }
}
